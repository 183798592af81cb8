import pytest

from graspdict.config import ConfigError, TrainConfig


def test_defaults():
    config = TrainConfig().validate()
    assert config.k == 30
    assert config.lambda_dict == 100.0
    assert config.lambda_r == 100.0
    assert config.ratio == 0.05
    assert config.hidden == (1024, 256, 256, 1024, 256, 256, 1024)


def test_config_file():
    config = TrainConfig.from_file("tests/fixtures/tiny.cfg").validate()
    assert config.k == 4
    assert config.lambda_r == 50.0
    assert config.hidden == (16, 8, 8, 16, 8, 8, 16)
    assert config.gc_widths == (6, 8)
    assert config.seeds == (7,)
    assert config.epochs == 2
    assert config.frame_gradient is False
    assert config.arms == ("ratio_only", "ours")


def test_flags_override_file():
    config = TrainConfig.from_file("tests/fixtures/tiny.cfg")
    config = config.override({"k": 6, "lambda_r": None, "seeds": [1, 2]})
    assert config.k == 6
    assert config.lambda_r == 50.0
    assert config.seeds == (1, 2)


def test_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("kk = 3\n")
    with pytest.raises(ConfigError, match="kk"):
        TrainConfig.from_file(str(path))


@pytest.mark.parametrize("text", ["k = three\n", "k\n",
                                  "frame_gradient = maybe\n"])
def test_malformed_values(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        TrainConfig.from_file(str(path))


@pytest.mark.parametrize("changes", [
    {"k": 0}, {"ratio": 0.0}, {"ratio": 1.5}, {"lambda_r": -1.0},
    {"batch_size": 0}, {"dict_regularizer": "l1"}, {"arms": ("magic",)},
    {"seeds": ()}, {"test_fraction": 1.0}, {"dict_tolerance": 0.0}])
def test_validation(changes):
    with pytest.raises(ConfigError):
        TrainConfig(**changes).validate()


def test_to_dict_is_plain():
    echo = TrainConfig().to_dict()
    assert echo["hidden"] == [1024, 256, 256, 1024, 256, 256, 1024]
    assert "extra" not in echo

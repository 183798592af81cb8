import numpy as np
import pytest

import graspdict.benchmark as b
from graspdict import InputError
from graspdict.config import TrainConfig
from graspdict.data import split_semi_supervised
from graspdict.evaluation import PCK_THRESHOLDS
from graspdict.synth import synth_generate


@pytest.fixture
def fast_config(tiny_config):
    return tiny_config.replace(epochs=3, est_epochs=2)


def test_benchmark_arms(synth_records, fast_config):
    config = fast_config.replace(arms=("fully", "ratio_only", "ours"))
    report = b.run_benchmark(synth_records, config)
    table = report.table()
    assert list(table["method"]) == ["fully", "ratio_only", "ours"]
    assert list(table["status"]) == ["ok"] * 3
    assert (table["seeds"] == 1).all()
    for column in ("mpjpe_hand", "mpjpe_obj", "mpjpe_all"):
        assert np.isfinite(table[column]).all()
        assert (table[column] > 0).all()
    curve = report.method("ours").pck[0]
    assert curve.shape == PCK_THRESHOLDS.shape
    assert np.all(np.diff(curve) >= 0.0)
    assert report.config["k"] == 4


def test_benchmark_is_deterministic(synth_records, fast_config):
    config = fast_config.replace(arms=("ratio_only",))
    first = b.run_benchmark(synth_records, config).method("ratio_only")
    second = b.run_benchmark(synth_records, config).method("ratio_only")
    assert first.mpjpe_all == second.mpjpe_all


def test_threads_do_not_change_results(synth_records, fast_config):
    config = fast_config.replace(arms=("fully", "ratio_only"))
    serial = b.run_benchmark(synth_records, config).table()
    parallel = b.run_benchmark(synth_records,
                               config.replace(threads=2)).table()
    np.testing.assert_array_equal(serial["mpjpe_all"], parallel["mpjpe_all"])


def test_benchmark_needs_test_sequences(fast_config):
    records = synth_generate(1, 15, 2)
    with pytest.raises(InputError):
        b.run_benchmark(records, fast_config.replace(arms=("ratio_only",)))


@pytest.mark.parametrize("lambda_r", [0.0, 50.0])
def test_unknown_arm(synth_records, fast_config, lambda_r):
    split = split_semi_supervised(synth_records, 0.3, 7)
    with pytest.raises(InputError):
        b.train_arm("fancy", split, fast_config.replace(lambda_r=lambda_r))


def test_sweep_table(synth_records, fast_config):
    table = b.sweep(synth_records, "k", [2, 3], fast_config,
                    with_baseline=True)
    assert list(table.columns) == [
        "value", "mpjpe_hand", "mpjpe_obj", "mpjpe_all", "status",
        "baseline_mpjpe_hand", "baseline_mpjpe_obj", "baseline_mpjpe_all",
        "baseline_status"]
    assert list(table["value"]) == [2, 3]
    assert list(table["status"]) == ["ok", "ok"]
    assert table.attrs["axis"] == "k"
    # The baseline ignores k.
    assert table.loc[0, "baseline_mpjpe_all"] == \
        table.loc[1, "baseline_mpjpe_all"]


def test_sweep_without_reconstruction_is_the_baseline(synth_records,
                                                      fast_config):
    table = b.sweep(synth_records, "lambda_r", [0.0], fast_config,
                    with_baseline=True)
    assert table.loc[0, "mpjpe_all"] == table.loc[0, "baseline_mpjpe_all"]


def test_sweep_over_ratio(synth_records, fast_config):
    table = b.sweep(synth_records, "ratio", [0.2, 1.0],
                    fast_config.replace(lambda_r=0.0))
    assert list(table.columns) == ["value", "mpjpe_hand", "mpjpe_obj",
                                   "mpjpe_all", "status"]
    assert list(table["value"]) == [0.2, 1.0]


@pytest.mark.parametrize("axis, values", [("seed", [1]), ("k", [])])
def test_sweep_rejects(synth_records, fast_config, axis, values):
    with pytest.raises(InputError):
        b.sweep(synth_records, axis, values, fast_config)


@pytest.fixture(scope="module")
def benchmark_records():
    return synth_generate(50, 20, 7)


@pytest.mark.slow
def test_semi_supervised_gain(benchmark_records):
    report = b.run_benchmark(benchmark_records, TrainConfig(ratio=0.05))
    fully, ratio_only, ae, ours = (report.method(arm) for arm in (
        "fully", "ratio_only", "ae", "ours"))
    assert fully.mean("mpjpe_all") <= ours.mean("mpjpe_all")
    assert ours.mean("mpjpe_all") <= 0.9 * ratio_only.mean("mpjpe_all")
    assert ours.mean("mpjpe_hand") <= ae.mean("mpjpe_hand")


@pytest.mark.slow
@pytest.mark.parametrize("axis, values", [("k", [10, 30, 60]),
                                          ("lambda_r", [10.0, 100.0])])
def test_sweeps_are_stable(benchmark_records, axis, values):
    table = b.sweep(benchmark_records, axis, values, TrainConfig())
    assert (table["status"] == "ok").all()
    assert table["mpjpe_all"].max() / table["mpjpe_all"].min() < 1.25


@pytest.mark.slow
def test_reconstruction_helps_at_every_ratio(benchmark_records):
    table = b.sweep(benchmark_records, "ratio", [0.05, 0.1, 0.2],
                    TrainConfig(), with_baseline=True)
    assert (table["mpjpe_all"] <= table["baseline_mpjpe_all"]).all()

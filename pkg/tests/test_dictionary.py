import numpy as np
import pytest

import graspdict.dictionary as d
from graspdict import numerics as nx
from graspdict.data import scramble_hand_joints
from graspdict.geometry import cyl_encode_batch
from graspdict.synth import synth_generate

from tests.conftest import TINY_HIDDEN


def _module(k=5, seed=0):
    rng = np.random.default_rng(seed)
    atoms = rng.normal(size=(84, k))
    return d.DictionaryModule.create(atoms, TINY_HIDDEN, seed)


def _h_batch(count=6, seed=1):
    return np.random.default_rng(seed).normal(size=(count, 84))


def test_interval_loss():
    assert d.interval_loss(0.5, -1.0, 1.0) == 0.0
    assert d.interval_loss(1.5, -1.0, 1.0) == pytest.approx(0.5)
    assert d.interval_loss(-2.0, 0.0, np.inf) == pytest.approx(2.0)


def test_loss_dict_examples():
    valid = np.array([[0.5], [0.6], [0.8], [3.0]])
    assert d.loss_dict(valid) == 0.0
    cos_too_large = valid.copy()
    cos_too_large[1, 0] = 1.5
    assert d.loss_dict(cos_too_large) == pytest.approx(1.0 / 6.0, abs=1e-12)
    negative_rho = valid.copy()
    negative_rho[0, 0] = -0.3
    assert d.loss_dict(d.PoseDictionary(negative_rho)) == pytest.approx(
        0.1, abs=1e-12)


def test_loss_dict_matches_direct_formula():
    rng = np.random.default_rng(2)
    joints, k = 3, 4
    atoms = rng.uniform(-2.0, 2.0, size=(4 * joints, k))
    sin_cos = 0.0
    rho = 0.0
    for row in range(4 * joints):
        for column in range(k):
            value = atoms[row, column]
            if row % 4 in (1, 2):
                sin_cos += max(-1.0 - value, 0.0) + max(value - 1.0, 0.0)
            elif row % 4 == 0:
                rho += max(-value, 0.0)
    expected = 2.0 / (3.0 * 2 * joints * k) * sin_cos + \
        1.0 / (3.0 * joints * k) * rho
    assert d.loss_dict(atoms) == pytest.approx(expected, abs=1e-12)


def test_loss_dict_is_zero_only_for_valid_atoms():
    atoms = np.tile([[0.0], [1.0], [-1.0], [-50.0]], (21, 3))
    assert d.loss_dict(atoms) == 0.0
    atoms[2, 1] = -1.0 - 1e-9
    assert d.loss_dict(atoms) > 0.0


def test_reconstruct():
    rng = np.random.default_rng(3)
    atoms = rng.normal(size=(8, 3))
    np.testing.assert_array_equal(d.reconstruct([0.0, 1.0, 0.0], atoms),
                                  atoms[:, 1])
    np.testing.assert_allclose(d.reconstruct([0.5, 0.5], atoms[:, :2]),
                               atoms[:, :2].mean(axis=1))
    c = rng.dirichlet(np.ones(3))
    expected = np.zeros(8)
    for row in range(8):
        for column in range(3):
            expected[row] += atoms[row, column] * c[column]
    np.testing.assert_allclose(d.reconstruct(c, atoms), expected, atol=1e-12)
    with pytest.raises(nx.ShapeMismatch):
        d.reconstruct(np.ones(4), atoms)


def test_encode_is_on_the_simplex():
    module = _module()
    c = d.encode(_h_batch(), module)
    assert c.shape == (6, 5)
    assert np.all(c >= 0.0)
    np.testing.assert_allclose(c.sum(axis=1), 1.0, atol=1e-6)
    single = d.encode(_h_batch()[0], module)
    np.testing.assert_allclose(single, c[0])


def test_zero_final_layer_gives_uniform_coefficients():
    module = _module()
    module.store["enc.layer8.W"][...] = 0.0
    module.store["enc.layer8.b"][...] = 0.0
    np.testing.assert_allclose(d.encode(_h_batch(), module), 1.0 / 5)


def test_identical_inputs_get_identical_coefficients():
    module = _module()
    h = np.repeat(_h_batch(1), 2, axis=0)
    c = d.encode(h, module)
    np.testing.assert_array_equal(c[0], c[1])


def test_loss_rec_matches_direct_formula():
    module = _module()
    h = _h_batch(4)
    c = d.encode(h, module)
    atoms = module.dictionary.atoms
    total = 0.0
    for sample in range(4):
        residual = atoms @ c[sample] - h[sample]
        total += (residual ** 2).sum()
    expected = total / (84 * 4)
    assert d.loss_rec(h, module) == pytest.approx(expected, abs=1e-12)
    np.testing.assert_allclose(d.reconstruction_errors(module, h).mean(),
                               expected, atol=1e-12)


def test_loss_rec_of_constant_residual():
    module = _module(k=1)
    atom = module.dictionary.atoms[:, 0]
    # With one atom every coefficient vector is (1,).
    loss = d.loss_rec((atom + 0.25)[None], module)
    assert loss == pytest.approx(0.0625, abs=1e-12)


def test_loss_rec_needs_samples():
    with pytest.raises(nx.EmptyBatch):
        d.loss_rec(np.zeros((0, 84)), _module())


def test_reconstruction_lies_in_atom_hull():
    module = _module()
    h = _h_batch(8)
    rebuilt = d.reconstruct(d.encode(h, module), module.dictionary)
    atoms = module.dictionary.atoms
    assert np.all(rebuilt >= atoms.min(axis=1) - 1e-9)
    assert np.all(rebuilt <= atoms.max(axis=1) + 1e-9)


def test_init_dictionary():
    poses = np.stack([record.pose3d for record in synth_generate(2, 10, 5)])
    h = cyl_encode_batch(poses)
    single = d.init_dictionary(h, 1, seed=0)
    np.testing.assert_allclose(single.atoms[:, 0], h.mean(axis=0))
    dictionary = d.init_dictionary(h, 4, seed=0)
    assert dictionary.atoms.shape == (84, 4)
    assert d.loss_dict(dictionary) == pytest.approx(0.0, abs=1e-12)


def test_skipped_degenerate_poses():
    poses = [record.pose3d for record in synth_generate(1, 20, 2)]
    poses[3] = poses[3].copy()
    poses[3][:, 21:] = 0.0
    h, skipped = d.cylindrical_targets(poses)
    assert skipped == 1
    assert h.shape == (19, 84)
    poses[5] = poses[3]
    poses[6] = poses[3]
    with pytest.raises(d.TrainingFailed):
        d.cylindrical_targets(poses)


def test_train_phase1(tiny_config):
    poses = [record.pose3d for record in synth_generate(3, 15, 4)]
    module, history = d.train_phase1(poses, tiny_config.replace(lr=5e-3))
    assert list(history.columns) == ["epoch", "L_rec", "penalty", "L_dict",
                                     "L_pdl"]
    assert len(history) == tiny_config.epochs + 1
    assert history["L_rec"].iloc[-1] < history["L_rec"].iloc[0]
    assert history.attrs["config"]["lambda_dict"] == 100.0
    assert module.dictionary.k == 4


def test_train_phase1_rejects_invalid_atoms(monkeypatch, tiny_config):
    poses = [record.pose3d for record in synth_generate(2, 10, 4)]
    monkeypatch.setattr(d, "init_dictionary",
                        lambda h, k, seed: d.PoseDictionary(
                            np.full((84, k), -5.0)))
    with pytest.raises(d.TrainingFailed):
        d.train_phase1(poses, tiny_config.replace(epochs=1, lambda_dict=0.0))
    module, _ = d.train_phase1(poses, tiny_config.replace(
        epochs=1, lambda_dict=0.0, dict_tolerance=1e3))
    assert module.dict_loss_value() > 1e-3


@pytest.mark.slow
def test_train_phase1_converges_to_valid_atoms():
    from graspdict.config import TrainConfig

    poses = [record.pose3d for record in synth_generate(20, 20, 13)]
    module, history = d.train_phase1(poses, TrainConfig(k=30))
    assert history["L_rec"].iloc[-1] < 0.05 * history["L_rec"].iloc[0]
    assert module.dict_loss_value() < 1e-3


def test_train_phase1_is_deterministic(tiny_config):
    poses = [record.pose3d for record in synth_generate(2, 10, 4)]
    config = tiny_config.replace(epochs=2)
    first, _ = d.train_phase1(poses, config)
    second, _ = d.train_phase1(poses, config)
    assert first.store.digest() == second.store.digest()


def test_checkpoint_round_trip(tmp_path, tiny_config):
    poses = [record.pose3d for record in synth_generate(2, 10, 4)]
    module, _ = d.train_phase1(poses, tiny_config.replace(epochs=2))
    path = str(tmp_path / "dictionary.npz")
    d.save_reconstructor(path, module, tiny_config)
    loaded = d.load_reconstructor(path)
    assert isinstance(loaded, d.DictionaryModule)
    assert loaded.store.digest() == module.store.digest()
    h = cyl_encode_batch(np.stack(poses))
    np.testing.assert_array_equal(d.reconstruction_errors(loaded, h),
                                  d.reconstruction_errors(module, h))


def test_penalty_variants():
    module = _module()
    module.store[d.ATOMS][1, 0] = 4.0
    interval = module.penalty().item()
    assert interval == pytest.approx(100.0 * module.dict_loss_value())
    l2 = d.DictionaryModule(module.store, module.config, regularizer="l2",
                            l2_weight=0.5)
    assert l2.penalty().item() == pytest.approx(
        0.5 * np.mean(module.store[d.ATOMS] ** 2))


@pytest.mark.slow
def test_reconstruction_error_tells_scrambled_grasps():
    records = synth_generate(40, 25, 21)
    poses = [record.pose3d for record in records]
    train, held_out = poses[:800], poses[800:]
    from graspdict.config import TrainConfig
    module, _ = d.train_phase1(train, TrainConfig(k=30, lambda_dict=100.0))
    rng = nx.make_rng(0, "scramble")
    feasible = cyl_encode_batch(np.stack(held_out))
    scrambled = cyl_encode_batch(np.stack(
        [scramble_hand_joints(pose, rng) for pose in held_out]))
    assert np.median(d.reconstruction_errors(module, scrambled)) >= \
        2.0 * np.median(d.reconstruction_errors(module, feasible))

"""Pose dictionary learning (Phase I).

An encoder maps the cylindrical hand pose h to coefficients c on the
probability simplex, the dictionary reconstructs h̃ = D·c. The module is
trained on the labeled poses with the reconstruction loss plus a penalty
keeping the atoms valid (cos/sin entries in [-1, 1], rho entries >= 0).
Afterwards its reconstruction error tells realistic grasps from
implausible ones.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from tqdm import tqdm

from graspdict import NUM_HAND_JOINTS, RuntimeFailure
from graspdict import numerics as nx
from graspdict.geometry import DegenerateBox, cyl_encode
from graspdict.kmeans import kmeans
from graspdict.mlp import DEFAULT_SHORTCUTS, MLP
from graspdict.numerics import EmptyBatch, ShapeMismatch
from graspdict.paramstore import (
    CheckpointError, ParamStore, adam_step, load_checkpoint, save_checkpoint)

logger = logging.getLogger(__name__)

ATOMS = "dict.atoms"
MAX_SKIPPED_FRACTION = 0.1


class TrainingFailed(RuntimeFailure):
    pass


@dataclass
class PoseDictionary:
    atoms: np.ndarray

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        if self.atoms.ndim != 2 or self.atoms.shape[0] % 4 != 0:
            raise ShapeMismatch(
                f"Dictionary atoms must be a 4m x k matrix, got "
                f"{self.atoms.shape}")

    @property
    def k(self):
        return self.atoms.shape[1]

    @property
    def joints(self):
        return self.atoms.shape[0] // 4


@dataclass(frozen=True)
class EncoderConfig:
    hidden: tuple = (1024, 256, 256, 1024, 256, 256, 1024)
    k: int = 30
    shortcuts: tuple = DEFAULT_SHORTCUTS

    @property
    def widths(self):
        return tuple(self.hidden) + (self.k,)


def interval_loss(d, d_min, d_max):
    """I(d; d_min, d_max) = max(d_min - d, 0) + max(d - d_max, 0)."""
    value = np.maximum(d_min - np.asarray(d, dtype=np.float64), 0.0) + \
        np.maximum(np.asarray(d, dtype=np.float64) - d_max, 0.0)
    return float(value) if value.ndim == 0 else value


def dict_loss_tensor(atoms):
    """Valid-dictionary penalty over a (4m, k) atom Tensor."""
    atoms = nx.as_tensor(atoms)
    rows, k = atoms.shape
    joints = rows // 4
    rho = atoms[0::4]
    sin_cos = nx.concat([atoms[1::4], atoms[2::4]], axis=0)
    return nx.tsum(nx.interval(sin_cos, -1.0, 1.0)) * (
        2.0 / (3.0 * 2 * joints * k)) + nx.tsum(
        nx.interval(rho, 0.0, np.inf)) * (1.0 / (3.0 * joints * k))


def loss_dict(dictionary):
    atoms = dictionary.atoms if isinstance(dictionary, PoseDictionary) else \
        dictionary
    return dict_loss_tensor(nx.constant(atoms)).item()


def reconstruct(c, dictionary):
    """h̃ = D·c for a single coefficient vector or a (B, k) batch."""
    atoms = dictionary.atoms if isinstance(dictionary, PoseDictionary) else \
        np.asarray(dictionary, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != atoms.shape[1]:
        raise ShapeMismatch(
            f"{c.shape[-1]} coefficients for a dictionary of "
            f"{atoms.shape[1]} atoms")
    return c @ atoms.T


class DictionaryModule:
    """Encoder ``enc.*`` and atoms ``dict.atoms`` in one ParamStore."""

    kind = "dictionary"

    def __init__(self, store, config, regularizer="interval", lambda_dict=100.0,
                 l2_weight=1e-3):
        self.store = store
        self.config = config
        self.regularizer = regularizer
        self.lambda_dict = lambda_dict
        self.l2_weight = l2_weight
        self.encoder = MLP("enc", 4 * NUM_HAND_JOINTS, config.widths,
                           shortcuts=config.shortcuts,
                           final_activation="softmax")

    @classmethod
    def create(cls, atoms, hidden, seed, **kwargs):
        atoms = np.asarray(atoms, dtype=np.float64)
        config = EncoderConfig(hidden=tuple(hidden), k=atoms.shape[1])
        store = ParamStore()
        module = cls(store, config, **kwargs)
        module.encoder.init_params(store, nx.make_rng(seed, "encoder-init"))
        store.add(ATOMS, atoms)
        return module

    @classmethod
    def from_store(cls, store, shortcuts=DEFAULT_SHORTCUTS, **kwargs):
        if ATOMS not in store:
            raise CheckpointError("Checkpoint holds no dictionary atoms")
        widths = _layer_widths(store, "enc")
        config = EncoderConfig(hidden=widths[:-1], k=store[ATOMS].shape[1],
                               shortcuts=shortcuts)
        return cls(store, config, **kwargs)

    @property
    def dictionary(self):
        return PoseDictionary(self.store[ATOMS].copy())

    def coefficients(self, h, mode="train", update_stats=True):
        return self.encoder.forward(self.store, h, mode=mode,
                                    update_stats=update_stats)

    def reconstruct_tensor(self, h, mode="train", update_stats=True):
        c = self.coefficients(h, mode=mode, update_stats=update_stats)
        return c @ self.store.var(ATOMS).transpose()

    def rec_loss(self, h, mode="train", update_stats=True):
        """Mean squared reconstruction residual, normalized by 4m·|batch|."""
        h = nx.as_tensor(h)
        if h.shape[0] == 0:
            raise EmptyBatch("Reconstruction loss of an empty batch")
        return nx.mse(self.reconstruct_tensor(h, mode, update_stats), h)

    def penalty(self):
        atoms = self.store.var(ATOMS)
        if self.regularizer == "l2":
            return nx.mean(nx.square(atoms)) * self.l2_weight
        return dict_loss_tensor(atoms) * self.lambda_dict

    def dict_loss_value(self):
        return loss_dict(self.store[ATOMS])


def _layer_widths(store, prefix):
    layers = sorted(
        int(name[len(prefix) + 1:].split(".")[0][len("layer"):])
        for name in store.names(f"{prefix}.layer") if name.endswith(".W"))
    if not layers:
        raise CheckpointError(f"Checkpoint holds no '{prefix}' layers")
    return tuple(store[f"{prefix}.layer{layer}.W"].shape[1] for layer in layers)


def encode(h, module, mode="infer"):
    """Simplex coefficients of one pose vector or a (B, 4m) batch."""
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    batch = h.reshape(1, -1) if single else h
    c = module.coefficients(nx.constant(batch), mode=mode,
                            update_stats=False).data
    return c[0] if single else c


def loss_rec(h_batch, module, mode="infer"):
    h_batch = np.asarray(h_batch, dtype=np.float64)
    if h_batch.ndim != 2 or h_batch.shape[0] == 0:
        raise EmptyBatch("Reconstruction loss needs a non-empty batch")
    return module.rec_loss(nx.constant(h_batch), mode=mode,
                           update_stats=False).item()


def reconstruction_errors(module, h_batch):
    """Per-sample mean squared residual (inference mode)."""
    h_batch = np.asarray(h_batch, dtype=np.float64)
    estimate = module.reconstruct_tensor(nx.constant(h_batch), mode="infer",
                                         update_stats=False).data
    return ((estimate - h_batch) ** 2).mean(axis=1)


def init_dictionary(h_labeled, k, seed):
    centers = kmeans(np.asarray(h_labeled, dtype=np.float64), k, seed=seed)
    return PoseDictionary(centers.T.copy())


def cylindrical_targets(poses):
    """Encode every pose; skip (and log) those with a degenerate box."""
    vectors = []
    skipped = 0
    for index, pose in enumerate(poses):
        try:
            vectors.append(cyl_encode(pose))
        except DegenerateBox as error:
            skipped += 1
            logger.warning("Skipping pose %d: %s", index, error)
    total = len(vectors) + skipped
    if total and skipped > MAX_SKIPPED_FRACTION * total:
        raise TrainingFailed(
            f"{skipped} of {total} poses have a degenerate box")
    if not vectors:
        raise EmptyBatch("No labeled poses to train on")
    return np.stack(vectors), skipped


def fit_reconstructor(module, h_labeled, config, progress=False,
                      tag="phase1"):
    """Adam over every trainable entry of ``module.store``.

    Returns the per-epoch history; epoch 0 holds the losses before the
    first update.
    """
    rng = nx.make_rng(config.seed, tag, "batches")
    count = h_labeled.shape[0]
    rows = [_epoch_row(module, h_labeled, 0, nx.minibatches(
        count, config.batch_size), train=False)]
    step = 0
    for epoch in tqdm(range(1, config.epochs + 1), desc=tag,
                      disable=not progress):
        rec_sum = 0.0
        penalty_sum = 0.0
        batches = nx.minibatches(count, config.batch_size, rng)
        for batch in batches:
            rec = module.rec_loss(nx.constant(h_labeled[batch]), mode="train")
            penalty = module.penalty()
            nx.backward(rec + penalty, module.store)
            step += 1
            adam_step(module.store, lr=config.lr, beta1=config.beta1,
                      beta2=config.beta2, eps=config.eps, step=step)
            rec_sum += rec.item()
            penalty_sum += penalty.item()
        rows.append({"epoch": epoch,
                     "L_rec": rec_sum / len(batches),
                     "penalty": penalty_sum / len(batches),
                     "L_dict": module.dict_loss_value()})
        logger.debug("%s epoch %d: L_rec %.6g", tag, epoch, rows[-1]["L_rec"])
    history = pd.DataFrame(rows)
    history["L_pdl"] = history["L_rec"] + history["penalty"]
    history.attrs["config"] = config.to_dict()
    return history


def _epoch_row(module, h_labeled, epoch, batches, train):
    rec = [module.rec_loss(nx.constant(h_labeled[batch]), mode="train",
                           update_stats=train).item() for batch in batches]
    return {"epoch": epoch, "L_rec": float(np.mean(rec)),
            "penalty": module.penalty().item(),
            "L_dict": module.dict_loss_value()}


def train_phase1(labeled, config, progress=False):
    """Phase I on labeled 3D poses; returns ``(module, history)``.

    ``module.dictionary`` and ``module.store`` give the trained atoms and
    the encoder parameters.
    """
    logger.info("- Encoding %d labeled poses", len(labeled))
    h_labeled, skipped = cylindrical_targets(labeled)
    logger.info("- Initializing dictionary of %d atoms by k-means", config.k)
    dictionary = init_dictionary(h_labeled, config.k, config.seed)
    module = DictionaryModule.create(
        dictionary.atoms, config.hidden, config.seed,
        regularizer=config.dict_regularizer, lambda_dict=config.lambda_dict,
        l2_weight=config.l2_weight)
    logger.info("- Training pose dictionary module for %d epochs",
                config.epochs)
    history = fit_reconstructor(module, h_labeled, config, progress=progress)
    history.attrs["skipped"] = skipped
    history.attrs["lambda_dict"] = config.lambda_dict
    final_dict_loss = module.dict_loss_value()
    if config.dict_regularizer == "interval" and \
            final_dict_loss >= config.dict_tolerance:
        raise TrainingFailed(
            f"Dictionary atoms leave their value ranges after training "
            f"(L_dict = {final_dict_loss:.3g} >= {config.dict_tolerance:g})")
    return module, history


def save_reconstructor(path, module, config=None):
    meta = {"kind": module.kind}
    if config is not None:
        meta["config"] = config.to_dict()
    save_checkpoint(path, module.store, meta=meta)


def load_reconstructor(path):
    """Load a dictionary or autoencoder module from its checkpoint."""
    from graspdict.autoencoder import AutoencoderModule

    store, meta = load_checkpoint(path)
    kind = meta.get("kind")
    if kind == DictionaryModule.kind:
        return DictionaryModule.from_store(store)
    if kind == AutoencoderModule.kind:
        return AutoencoderModule.from_store(store)
    raise CheckpointError(f"{path} does not hold a reconstructor ({kind})")

"""2D → 3D pose estimation network and Phase II training.

The estimator is a graph U-net over the hand-object skeleton. Every graph
convolution computes ReLU(BN((A + A_learn)·Z·W)) where A is the
row-normalized skeleton adjacency of its level and A_learn a trainable
offset starting at zero. Levels have 29, 14 and 7 nodes; pooling averages
fixed node clusters, unpooling copies a coarse node back to its members
and the decoder adds the encoder features of the same level.

Phase II trains the estimator on the labeled pairs plus, weighted by
``lambda_r``, the reconstruction error the frozen Phase I module assigns
to the cylindrical transform of every estimate.
"""

import logging
import math

import numpy as np
import pandas as pd
from tqdm import tqdm

from graspdict import NUM_KEYPOINTS, RuntimeFailure
from graspdict import numerics as nx
from graspdict.dictionary import MAX_SKIPPED_FRACTION, TrainingFailed
from graspdict.geometry import (
    DegenerateBox, cyl_encode_tensor, object_frame_from_corners)
from graspdict.numerics import EmptyBatch, ShapeMismatch
from graspdict.paramstore import (
    CheckpointError, ParamStore, adam_step, load_checkpoint, save_checkpoint)
from graspdict.skeleton import build_hierarchy

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-6


class MissingDictionary(RuntimeFailure):
    pass


class EstimatorNetwork:

    kind = "estimator"

    def __init__(self, store, gc_widths=(64, 128)):
        self.store = store
        self.gc_widths = tuple(gc_widths)
        self.levels = build_hierarchy()
        outer, inner = self.gc_widths
        # block name -> (graph level, [(in, out) per graph convolution])
        self.blocks = {
            "down0": (0, [(2, outer), (outer, outer)]),
            "down1": (1, [(outer, inner), (inner, inner)]),
            "bottom": (2, [(inner, inner), (inner, inner)]),
            "up1": (1, [(inner, outer), (outer, outer)]),
            "up0": (0, [(outer, outer), (outer, outer)])}

    @classmethod
    def create(cls, inputs, targets, gc_widths=(64, 128), seed=0):
        """Initialize the weights and the normalization statistics.

        ``inputs`` (N, 2, 29) and ``targets`` (N, 3, 29) are the labeled
        training pairs; their per-node, per-axis mean and std normalize
        the network inputs and outputs.
        """
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if len(inputs) == 0:
            raise EmptyBatch("Cannot initialize the estimator without labels")
        store = ParamStore()
        network = cls(store, gc_widths)
        for name, values in (("in", inputs), ("out", targets)):
            per_node = np.swapaxes(values, 1, 2)
            store.add(f"est.norm.{name}_mean", per_node.mean(axis=0),
                      trainable=False)
            store.add(f"est.norm.{name}_std", np.maximum(
                per_node.std(axis=0), STD_FLOOR), trainable=False)
        rng = nx.make_rng(seed, "estimator-init")
        for block, (level, layers) in network.blocks.items():
            nodes = network.levels[level].graph.node_count
            for number, (fan_in, fan_out) in enumerate(layers, start=1):
                prefix = f"est.{block}.gc{number}"
                store.add(f"{prefix}.W", rng.normal(
                    0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
                store.add(f"{prefix}.adj", np.zeros((nodes, nodes)))
                store.add(f"{prefix}.bn_gamma", np.ones(fan_out))
                store.add(f"{prefix}.bn_beta", np.zeros(fan_out))
                store.add(f"{prefix}.bn_mean", np.zeros(fan_out),
                          trainable=False)
                store.add(f"{prefix}.bn_var", np.ones(fan_out),
                          trainable=False)
        store.add("est.head.W", rng.normal(
            0.0, np.sqrt(1.0 / gc_widths[0]), size=(gc_widths[0], 3)))
        store.add("est.head.b", np.zeros(3))
        return network

    @classmethod
    def from_store(cls, store):
        if "est.down1.gc1.W" not in store:
            raise CheckpointError("Checkpoint holds no estimator")
        return cls(store, gc_widths=store["est.down1.gc1.W"].shape)

    def _graph_conv(self, block, number, z, mode, update_stats):
        level, _ = self.blocks[block]
        prefix = f"est.{block}.gc{number}"
        adjacency = self.store.var(f"{prefix}.adj") + \
            self.levels[level].graph.propagation
        mixed = (adjacency @ z) @ self.store.var(f"{prefix}.W")
        normalized = nx.batch_norm(
            mixed, self.store.var(f"{prefix}.bn_gamma"),
            self.store.var(f"{prefix}.bn_beta"),
            self.store[f"{prefix}.bn_mean"], self.store[f"{prefix}.bn_var"],
            mode=mode, update_stats=update_stats)
        return nx.relu(normalized)

    def _block(self, block, z, mode, update_stats):
        for number in range(1, len(self.blocks[block][1]) + 1):
            z = self._graph_conv(block, number, z, mode, update_stats)
        return z

    def forward(self, x, mode="train", update_stats=True):
        """(B, 2, 29) inputs in pixels → (B, 3, 29) Tensor in millimeters."""
        x = nx.as_tensor(x)
        if x.data.ndim != 3 or x.shape[1:] != (2, NUM_KEYPOINTS):
            raise ShapeMismatch(
                f"Estimator expects (batch, 2, {NUM_KEYPOINTS}) inputs, "
                f"got {x.shape}")
        store = self.store
        z = (x.transpose(0, 2, 1) - store["est.norm.in_mean"]) / \
            store["est.norm.in_std"]
        skip0 = self._block("down0", z, mode, update_stats)
        z = self.levels[0].pool @ skip0
        skip1 = self._block("down1", z, mode, update_stats)
        z = self.levels[1].pool @ skip1
        z = self._block("bottom", z, mode, update_stats)
        z = self.levels[1].unpool @ z + skip1
        z = self._block("up1", z, mode, update_stats)
        z = self.levels[0].unpool @ z + skip0
        z = self._block("up0", z, mode, update_stats)
        out = z @ store.var("est.head.W") + store.var("est.head.b")
        out = out * store["est.norm.out_std"] + store["est.norm.out_mean"]
        return out.transpose(0, 2, 1)

    def predict(self, x):
        """Inference-mode estimates as a numpy array."""
        x = np.asarray(x, dtype=np.float64)
        if len(x) == 0:
            return np.zeros((0, 3, NUM_KEYPOINTS))
        return self.forward(nx.constant(x), mode="infer",
                            update_stats=False).data


def estimate(x, network, mode="infer"):
    """Estimate one (2, 29) pose, or a (B, 2, 29) stack."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    batch = x[None] if single else x
    result = network.forward(nx.constant(batch), mode=mode,
                             update_stats=False).data
    return result[0] if single else result


def supervised_loss_tensor(estimates, targets):
    """Mean squared error over the 3·29·N entries of Tensor estimates."""
    if estimates.shape[0] == 0:
        raise EmptyBatch("Supervised loss of an empty batch")
    return nx.mse(estimates, targets)


def loss_supervised(inputs, targets, network, mode="infer"):
    inputs = np.asarray(inputs, dtype=np.float64)
    if len(inputs) == 0:
        raise EmptyBatch("Supervised loss needs a non-empty batch")
    estimates = network.forward(nx.constant(inputs), mode=mode,
                                update_stats=False)
    return supervised_loss_tensor(estimates, np.asarray(targets)).item()


def total_loss_tensor(network, labeled_inputs, labeled_targets,
                      unlabeled_inputs, reconstructor, lambda_r,
                      frame_gradient=True, mode="train", update_stats=True):
    """Return Tensors ``(total, supervised, reconstruction)``.

    The reconstruction term covers the estimates of the labeled and the
    unlabeled inputs. With ``lambda_r == 0`` it is not evaluated and the
    total equals the supervised loss.
    """
    labeled_estimates = network.forward(
        nx.constant(labeled_inputs), mode=mode, update_stats=update_stats)
    supervised = supervised_loss_tensor(labeled_estimates,
                                        np.asarray(labeled_targets))
    if lambda_r == 0:
        return supervised, supervised, nx.constant(0.0)
    if reconstructor is None:
        raise MissingDictionary(
            "A reconstruction weight needs a pose dictionary module")
    reconstructor.store.freeze()
    estimates = [labeled_estimates]
    if len(unlabeled_inputs):
        estimates.append(network.forward(
            nx.constant(unlabeled_inputs), mode=mode,
            update_stats=update_stats))
    h = cyl_encode_tensor(nx.concat(estimates, axis=0),
                          frame_gradient=frame_gradient)
    reconstruction = reconstructor.rec_loss(h, mode="infer",
                                            update_stats=False)
    return supervised + reconstruction * lambda_r, supervised, reconstruction


def loss_total(labeled_batch, unlabeled_inputs, network, reconstructor,
               lambda_r, frame_gradient=True, mode="infer"):
    labeled_inputs, labeled_targets = labeled_batch
    total, _, _ = total_loss_tensor(
        network, np.asarray(labeled_inputs, dtype=np.float64),
        labeled_targets, np.asarray(unlabeled_inputs, dtype=np.float64),
        reconstructor, lambda_r, frame_gradient=frame_gradient, mode=mode,
        update_stats=False)
    return total.item()


def _usable_pairs(inputs, targets):
    keep = []
    for index, target in enumerate(targets):
        try:
            object_frame_from_corners(target[:, -8:])
            keep.append(index)
        except DegenerateBox as error:
            logger.warning("Skipping labeled frame %d: %s", index, error)
    skipped = len(targets) - len(keep)
    if len(targets) and skipped > MAX_SKIPPED_FRACTION * len(targets):
        raise TrainingFailed(
            f"{skipped} of {len(targets)} labeled frames have a degenerate box")
    return inputs[keep], targets[keep], skipped


def _batch_stream(count, batch_size, rng):
    while True:
        yield from nx.minibatches(count, batch_size, rng)


def train_phase2(split, reconstructor, config, validation=None,
                 pseudo_pairs=None, progress=False):
    """Phase II; returns ``(network, history)``.

    ``split`` provides the labeled records and the unlabeled inputs,
    ``pseudo_pairs`` optional extra (2D, 3D) pairs treated as labeled and
    ``validation`` records whose MPJPE is logged per epoch.
    """
    from graspdict.evaluation import mpjpe

    labeled_inputs, labeled_targets = split.labeled_arrays()
    if pseudo_pairs:
        labeled_inputs = np.concatenate(
            [labeled_inputs, np.stack([pair[0] for pair in pseudo_pairs])])
        labeled_targets = np.concatenate(
            [labeled_targets, np.stack([pair[1] for pair in pseudo_pairs])])
    labeled_inputs, labeled_targets, skipped = _usable_pairs(
        labeled_inputs, labeled_targets)
    unlabeled_inputs = split.unlabeled_inputs()
    lambda_r = config.lambda_r
    if lambda_r > 0 and reconstructor is None:
        raise MissingDictionary(
            "Phase II with lambda_r > 0 needs a pose dictionary module")
    digest = None
    if reconstructor is not None:
        reconstructor.store.freeze()
        digest = reconstructor.store.digest()
    network = EstimatorNetwork.create(labeled_inputs, labeled_targets,
                                      config.gc_widths, config.seed)
    labeled_count = len(labeled_inputs)
    unlabeled_count = len(unlabeled_inputs)
    unlabeled_batch_size = max(1, round(config.batch_size *
                                        config.unlabeled_ratio))
    steps_per_epoch = max(
        math.ceil(labeled_count / config.batch_size),
        math.ceil(unlabeled_count / unlabeled_batch_size))
    labeled_batches = _batch_stream(labeled_count, config.batch_size,
                                    nx.make_rng(config.seed, "phase2",
                                                "labeled"))
    unlabeled_batches = _batch_stream(unlabeled_count, unlabeled_batch_size,
                                      nx.make_rng(config.seed, "phase2",
                                                  "unlabeled")) \
        if unlabeled_count else None
    if validation:
        validation_inputs = np.stack([record.pose2d for record in validation])
        validation_targets = np.stack([record.pose3d for record in validation])
    logger.info("- Training estimator for %d epochs of %d steps "
                "(%d labeled, %d unlabeled frames, lambda_r %g)",
                config.est_epochs, steps_per_epoch, labeled_count,
                unlabeled_count, lambda_r)
    rows = []
    step = 0
    for epoch in tqdm(range(1, config.est_epochs + 1), desc="phase2",
                      disable=not progress):
        sums = np.zeros(3)
        for _ in range(steps_per_epoch):
            batch = next(labeled_batches)
            unlabeled = unlabeled_inputs[next(unlabeled_batches)] \
                if unlabeled_batches is not None and lambda_r > 0 else \
                unlabeled_inputs[:0]
            total, supervised, reconstruction = total_loss_tensor(
                network, labeled_inputs[batch], labeled_targets[batch],
                unlabeled, reconstructor, lambda_r,
                frame_gradient=config.frame_gradient)
            nx.backward(total, network.store)
            step += 1
            adam_step(network.store, lr=config.lr, beta1=config.beta1,
                      beta2=config.beta2, eps=config.eps, step=step)
            sums += (total.item(), supervised.item(), reconstruction.item())
        means = sums / steps_per_epoch
        row = {"epoch": epoch, "L_total": means[0], "L_L": means[1],
               "L_rec": means[2], "val_mpjpe_hand": float("nan"),
               "val_mpjpe_obj": float("nan")}
        if validation:
            predictions = network.predict(validation_inputs)
            row["val_mpjpe_hand"] = mpjpe(predictions, validation_targets,
                                          "hand")
            row["val_mpjpe_obj"] = mpjpe(predictions, validation_targets,
                                         "object")
        rows.append(row)
        logger.debug("phase2 epoch %d: L_L %.6g, L_rec %.6g", epoch,
                     row["L_L"], row["L_rec"])
    if reconstructor is not None and reconstructor.store.digest() != digest:
        raise TrainingFailed("Phase II modified the frozen reconstructor")
    history = pd.DataFrame(rows, columns=[
        "epoch", "L_L", "L_rec", "L_total", "val_mpjpe_hand",
        "val_mpjpe_obj"])
    history.attrs["config"] = config.to_dict()
    history.attrs["lambda_r"] = lambda_r
    history.attrs["skipped"] = skipped
    return network, history


def save_estimator(path, network, config=None):
    meta = {"kind": network.kind, "gc_widths": list(network.gc_widths)}
    if config is not None:
        meta["config"] = config.to_dict()
    save_checkpoint(path, network.store, meta=meta)


def load_estimator(path):
    store, meta = load_checkpoint(path)
    if meta.get("kind") != EstimatorNetwork.kind:
        raise CheckpointError(f"{path} does not hold an estimator")
    return EstimatorNetwork.from_store(store)

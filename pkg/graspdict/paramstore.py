"""Named parameter collections, the Adam update and the checkpoint file.

Checkpoint container
--------------------

A checkpoint is an uncompressed numpy ``.npz`` archive with

* ``__format__``  the string ``graspdict-checkpoint``
* ``__version__`` the integer format version (currently 1)
* ``__meta__``    a JSON document (module kind, config echo, the names of
                  the trainable entries, free-form metadata)
* one float64 array per named tensor, e.g. ``dict.atoms`` or
  ``enc.layer3.bn_var``.

Arrays are stored as they are, so saving and loading is bit-exact.
"""

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from graspdict import InputError
from graspdict.numerics import Tensor

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "graspdict-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(InputError):
    pass


class DuplicateParameter(InputError):
    pass


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray
    first_moment: np.ndarray
    second_moment: np.ndarray
    trainable: bool = True


class ParamStore:

    def __init__(self):
        self._entries = {}
        self.frozen = False

    def add(self, name, value, trainable=True):
        if name in self._entries:
            raise DuplicateParameter(f"Parameter '{name}' exists already")
        value = np.array(value, dtype=np.float64)
        self._entries[name] = Parameter(
            value=value, grad=np.zeros_like(value),
            first_moment=np.zeros_like(value),
            second_moment=np.zeros_like(value), trainable=trainable)
        return value

    def __contains__(self, name):
        return name in self._entries

    def __getitem__(self, name):
        return self._entries[name].value

    def __len__(self):
        return len(self._entries)

    def entry(self, name):
        return self._entries[name]

    def names(self, prefix=None):
        return [name for name in self._entries
                if prefix is None or name.startswith(prefix)]

    def trainable_names(self):
        if self.frozen:
            return []
        return [name for name, entry in self._entries.items()
                if entry.trainable]

    def var(self, name):
        """Leaf tensor for ``name``; constant when frozen or non-trainable."""
        entry = self._entries[name]
        if self.frozen or not entry.trainable:
            return Tensor(entry.value)
        return Tensor(entry.value, requires_grad=True, param=entry)

    def freeze(self):
        self.frozen = True

    def zero_grad(self):
        for entry in self._entries.values():
            entry.grad[...] = 0.0

    def snapshot(self):
        return {name: entry.value.copy()
                for name, entry in self._entries.items()}

    def restore(self, snapshot):
        # In place: callers may hold references to the value arrays.
        for name, value in snapshot.items():
            self._entries[name].value[...] = value

    def update(self, other):
        """Take over all entries of ``other`` (names must not clash)."""
        for name in other.names():
            if name in self._entries:
                raise DuplicateParameter(f"Parameter '{name}' exists already")
            self._entries[name] = other.entry(name)

    def digest(self):
        """SHA-256 over all names, shapes and raw values."""
        sha = hashlib.sha256()
        for name in sorted(self._entries):
            value = self._entries[name].value
            sha.update(name.encode("utf-8"))
            sha.update(str(value.shape).encode("utf-8"))
            sha.update(np.ascontiguousarray(value).tobytes())
        return sha.hexdigest()


def adam_step(store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, step=1):
    """Apply one bias-corrected Adam update and zero the gradients."""
    bias_correction1 = 1.0 - beta1 ** step
    bias_correction2 = 1.0 - beta2 ** step
    for name in store.trainable_names():
        entry = store.entry(name)
        grad = entry.grad
        entry.first_moment *= beta1
        entry.first_moment += (1.0 - beta1) * grad
        entry.second_moment *= beta2
        entry.second_moment += (1.0 - beta2) * (grad * grad)
        denominator = np.sqrt(entry.second_moment / bias_correction2) + eps
        entry.value -= lr * (entry.first_moment / bias_correction1) / denominator
    store.zero_grad()


def save_checkpoint(path, store, meta=None):
    arrays = {name: store[name] for name in store.names()}
    header = {
        "trainable": [name for name in store.names()
                      if store.entry(name).trainable],
        "meta": meta or {}}
    arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
    arrays["__version__"] = np.array(CHECKPOINT_VERSION)
    arrays["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as output_fh:
        np.savez(output_fh, **arrays)
    logger.info("- Wrote checkpoint %s (%d tensors)", path, len(store))


def load_checkpoint(path):
    """Return ``(store, meta)`` read from ``path``."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as error:
        raise CheckpointError(f"Cannot read checkpoint {path}: {error}")
    with archive:
        if "__format__" not in archive.files or str(
                archive["__format__"]) != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not a graspdict checkpoint")
        version = int(archive["__version__"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version}")
        header = json.loads(str(archive["__meta__"]))
        trainable = set(header["trainable"])
        store = ParamStore()
        for name in archive.files:
            if name.startswith("__"):
                continue
            store.add(name, archive[name], trainable=name in trainable)
    return store, header["meta"]

"""Fully connected trunk shared by the pose encoder and the AE decoder.

Every layer but the last is Linear → (+ shortcut) → BatchNorm → ReLU; the
last layer is Linear, optionally followed by a softmax. A shortcut
``(i, j)`` adds the output of layer ``i`` to the pre-activation of layer
``j`` (1-based), which needs both layers to have the same width.
"""

import logging

import numpy as np

from graspdict import numerics as nx
from graspdict.numerics import ShapeMismatch

logger = logging.getLogger(__name__)

DEFAULT_SHORTCUTS = ((1, 4), (4, 7))


class MLP:

    def __init__(self, prefix, in_width, widths, shortcuts=DEFAULT_SHORTCUTS,
                 final_activation=None):
        self.prefix = prefix
        self.in_width = int(in_width)
        self.widths = tuple(int(width) for width in widths)
        self.final_activation = final_activation
        # Shortcuts only apply between hidden (normalized) layers.
        self.shortcuts = tuple(
            (source, target) for source, target in shortcuts
            if target < len(self.widths))
        for source, target in self.shortcuts:
            if self.widths[source - 1] != self.widths[target - 1]:
                raise ShapeMismatch(
                    f"Shortcut ({source}, {target}) joins widths "
                    f"{self.widths[source - 1]} and {self.widths[target - 1]}")

    def _name(self, layer, kind):
        return f"{self.prefix}.layer{layer}.{kind}"

    def init_params(self, store, rng):
        fan_in = self.in_width
        for layer, width in enumerate(self.widths, start=1):
            store.add(self._name(layer, "W"), rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width)))
            store.add(self._name(layer, "b"), np.zeros(width))
            if layer < len(self.widths):
                store.add(self._name(layer, "bn_gamma"), np.ones(width))
                store.add(self._name(layer, "bn_beta"), np.zeros(width))
                store.add(self._name(layer, "bn_mean"), np.zeros(width),
                          trainable=False)
                store.add(self._name(layer, "bn_var"), np.ones(width),
                          trainable=False)
            fan_in = width

    def forward(self, store, x, mode="train", update_stats=True):
        x = nx.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.in_width:
            raise ShapeMismatch(
                f"{self.prefix} expects (batch, {self.in_width}) inputs, "
                f"got {x.shape}")
        targets = {target: source for source, target in self.shortcuts}
        outputs = {}
        activation = x
        for layer in range(1, len(self.widths) + 1):
            pre = activation @ store.var(self._name(layer, "W")) + \
                store.var(self._name(layer, "b"))
            if layer == len(self.widths):
                activation = pre
                break
            if layer in targets:
                pre = pre + outputs[targets[layer]]
            normalized = nx.batch_norm(
                pre, store.var(self._name(layer, "bn_gamma")),
                store.var(self._name(layer, "bn_beta")),
                store[self._name(layer, "bn_mean")],
                store[self._name(layer, "bn_var")],
                mode=mode, update_stats=update_stats)
            activation = nx.relu(normalized)
            outputs[layer] = activation
        if self.final_activation == "softmax":
            activation = nx.softmax(activation, axis=-1)
        return activation

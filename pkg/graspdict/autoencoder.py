"""Encoder-decoder reconstructor, the comparison arm without a dictionary.

Same encoder trunk as the dictionary module but without the softmax; a
mirrored decoder maps the k-dimensional code back to h. No value-range
penalty applies.
"""

import logging

from graspdict import NUM_HAND_JOINTS
from graspdict import numerics as nx
from graspdict.dictionary import (
    _layer_widths, cylindrical_targets, fit_reconstructor)
from graspdict.mlp import DEFAULT_SHORTCUTS, MLP
from graspdict.numerics import EmptyBatch
from graspdict.paramstore import ParamStore

logger = logging.getLogger(__name__)


class AutoencoderModule:

    kind = "autoencoder"

    def __init__(self, store, encoder_widths, decoder_widths,
                 shortcuts=DEFAULT_SHORTCUTS):
        self.store = store
        width = 4 * NUM_HAND_JOINTS
        self.encoder = MLP("ae.enc", width, encoder_widths,
                           shortcuts=shortcuts)
        self.decoder = MLP("ae.dec", encoder_widths[-1], decoder_widths,
                           shortcuts=shortcuts)

    @classmethod
    def create(cls, k, hidden, seed):
        hidden = tuple(hidden)
        store = ParamStore()
        module = cls(store, hidden + (k,),
                     tuple(reversed(hidden)) + (4 * NUM_HAND_JOINTS,))
        module.encoder.init_params(store, nx.make_rng(seed, "ae-encoder-init"))
        module.decoder.init_params(store, nx.make_rng(seed, "ae-decoder-init"))
        return module

    @classmethod
    def from_store(cls, store):
        return cls(store, _layer_widths(store, "ae.enc"),
                   _layer_widths(store, "ae.dec"))

    def reconstruct_tensor(self, h, mode="train", update_stats=True):
        code = self.encoder.forward(self.store, h, mode=mode,
                                    update_stats=update_stats)
        return self.decoder.forward(self.store, code, mode=mode,
                                    update_stats=update_stats)

    def rec_loss(self, h, mode="train", update_stats=True):
        h = nx.as_tensor(h)
        if h.shape[0] == 0:
            raise EmptyBatch("Reconstruction loss of an empty batch")
        return nx.mse(self.reconstruct_tensor(h, mode, update_stats), h)

    def penalty(self):
        return nx.constant(0.0)

    def dict_loss_value(self):
        return float("nan")


def train_autoencoder(labeled, config, progress=False):
    """Phase I counterpart for the AE arm; returns ``(module, history)``."""
    h_labeled, skipped = cylindrical_targets(labeled)
    module = AutoencoderModule.create(config.k, config.hidden, config.seed)
    logger.info("- Training autoencoder reconstructor for %d epochs",
                config.epochs)
    history = fit_reconstructor(module, h_labeled, config, progress=progress,
                                tag="autoencoder")
    history.attrs["skipped"] = skipped
    return module, history

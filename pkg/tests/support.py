"""Shared fixtures-in-functions for model-level tests."""

import numpy as np

from mannmt.autodiff import check_gradients
from mannmt.models import ModelConfig, build_model

TINY = dict(embedding_size=3, hidden_size=4, memory_locations=4, memory_width=3, dropout=0.0)


def tiny_model(arch, vocab=7, seed=0, **overrides):
    cfg = dict(TINY)
    cfg.update(overrides)
    return build_model(ModelConfig(arch, vocab, vocab, **cfg), seed=seed)


def generic_point(model, seed=0, scale=0.3):
    """Jitter every parameter (biases included) away from the symmetric initial point.

    At initialisation all memory rows equal the 1e-6 constant, smaller than
    the finite-difference step, so gradient checks run here instead.
    """
    rng = np.random.default_rng(seed)
    for name, value in model.params.items():
        value += rng.uniform(-scale, scale, size=value.shape)
    return model


def random_pair(rng, vocab, src_len, tgt_len):
    src = list(rng.integers(4, vocab, size=src_len - 1)) + [3]
    tgt = list(rng.integers(4, vocab, size=tgt_len - 1)) + [3]
    return np.array(src), np.array(tgt)


def model_gradcheck(model, source, target, max_elements=None, seed=0, **loss_kwargs):
    """Finite-difference check of ``sequence_loss`` against every parameter tensor."""
    names = sorted(model.params)

    def loss(*leaves):
        return model.sequence_loss(source, target, params=dict(zip(names, leaves)), **loss_kwargs)

    return check_gradients(loss, [model.params[n] for n in names], perturbation=1e-5, tolerance=1e-4,
                           max_elements=max_elements, seed=seed)

"""LSTM cells built from the autodiff primitives."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import ContractViolation
from . import ops
from .value import Value


def init_uniform(rng: np.random.Generator, shape, scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def lstm_parameters(rng: np.random.Generator, input_size: int, hidden_size: int) -> dict:
    """Fused gate weights over ``[x; h]``; gate order is input, forget, output, candidate."""
    return {
        "W": init_uniform(rng, (input_size + hidden_size, 4 * hidden_size)),
        "b": np.zeros(4 * hidden_size),
    }


def lstm_cell_step(x, h, c, W, b) -> tuple:
    """One LSTM step over a batch. Returns ``(h', c')``."""
    x, h, c = ops.as_value(x), ops.as_value(h), ops.as_value(c)
    hidden = h.shape[-1]
    if W.shape != (x.shape[-1] + hidden, 4 * hidden) or b.shape[-1] != 4 * hidden or c.shape != h.shape:
        raise ContractViolation(
            f"lstm_cell_step: input {x.shape}, hidden {h.shape}, cell {c.shape} "
            f"do not conform to W {W.shape}, b {b.shape}"
        )
    gates = ops.add(ops.matmul(ops.concat([x, h], axis=-1), W), b)
    sig = ops.sigmoid(gates[..., : 3 * hidden])
    candidate = ops.tanh(gates[..., 3 * hidden:])
    i = sig[..., :hidden]
    f = sig[..., hidden: 2 * hidden]
    o = sig[..., 2 * hidden:]
    c_new = f * c + i * candidate
    h_new = o * ops.tanh(c_new)
    return h_new, c_new


def lstm_stack_step(
    x,
    states: list,
    layers: list,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> tuple:
    """Advance a multi-layer LSTM by one step.

    ``layers`` holds ``(W, b)`` pairs bottom to top and ``states`` the
    matching ``(h, c)`` pairs. Dropout is applied between layers only.
    """
    new_states = []
    inp = x
    for depth, ((W, b), (h, c)) in enumerate(zip(layers, states)):
        if depth > 0:
            inp = ops.dropout(inp, dropout, rng, training)
        h, c = lstm_cell_step(inp, h, c, W, b)
        new_states.append((h, c))
        inp = h
    return inp, new_states


def zero_states(batch: int, hidden: int, depth: int) -> list:
    return [(Value(np.zeros((batch, hidden))), Value(np.zeros((batch, hidden)))) for _ in range(depth)]

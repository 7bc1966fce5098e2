"""NTM head mathematics: content lookup, interpolation, shift, sharpening, read and write.

All functions operate on batches: leading axes are batch axes, the last
axis indexes memory locations (weights) or cell entries (keys, memory rows).
Shift kernels cover offsets ``(-1, 0, +1)``; index 2 moves attention one
location forward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Value, as_value, ops
from .errors import ContractViolation

SHIFT_OFFSETS = (-1, 0, 1)
SHIFT_WIDTH = len(SHIFT_OFFSETS)
SHARPEN_FLOOR = 1e-12
MEMORY_INIT_CONSTANT = 1e-6


@dataclass
class HeadParameters:
    """One head's emission for one timestep. ``erase``/``add`` are None for read heads."""

    key: Value
    beta: Value
    gate: Value
    shift: Value
    gamma: Value
    erase: Optional[Value] = None
    add: Optional[Value] = None

    @property
    def is_write(self) -> bool:
        return self.erase is not None


def head_parameter_size(width: int, write: bool) -> int:
    """Raw controller outputs needed per head: key, beta, gate, 3 shift logits, gamma (+ erase, add)."""
    return width + 3 + SHIFT_WIDTH + (2 * width if write else 0)


def squash_head(raw, width: int, write: bool) -> HeadParameters:
    """Map unconstrained controller outputs onto each parameter's valid range."""
    raw = as_value(raw)
    if raw.shape[-1] != head_parameter_size(width, write):
        raise ContractViolation(
            f"squash_head: expected {head_parameter_size(width, write)} raw outputs, got {raw.shape[-1]}"
        )
    w = width
    key = ops.tanh(raw[..., :w])
    beta = ops.softplus(raw[..., w: w + 1])
    gate = ops.sigmoid(raw[..., w + 1: w + 2])
    shift = ops.softmax(raw[..., w + 2: w + 2 + SHIFT_WIDTH])
    gamma = 1.0 + ops.softplus(raw[..., w + 2 + SHIFT_WIDTH: w + 3 + SHIFT_WIDTH])
    erase = add = None
    if write:
        rest = w + 3 + SHIFT_WIDTH
        erase = ops.sigmoid(raw[..., rest: rest + w])
        add = ops.tanh(raw[..., rest + w: rest + 2 * w])
    return HeadParameters(key, beta, gate, shift, gamma, erase, add)


def cosine_similarity(u, v) -> Value:
    return ops.cosine_similarity(u, v)


def content_weights(key, memory, beta) -> Value:
    """Softmax over locations of ``beta`` times the cosine similarity of ``key`` to each row."""
    key, memory, beta = as_value(key), as_value(memory), as_value(beta)
    if np.any(beta.data < 0):
        raise ContractViolation("content_weights: beta must be nonnegative")
    similarity = ops.cosine_similarity(ops.reshape(key, key.shape[:-1] + (1, key.shape[-1])), memory)
    return ops.softmax(beta * similarity, axis=-1)


def interpolate(w_content, w_previous, gate) -> Value:
    w_content, w_previous = as_value(w_content), as_value(w_previous)
    if w_content.shape != w_previous.shape:
        raise ContractViolation(f"interpolate: weight shapes differ: {w_content.shape} vs {w_previous.shape}")
    gate = as_value(gate)
    return gate * w_content + (1.0 - gate) * w_previous


def shift(w, kernel, lengths: Optional[np.ndarray] = None) -> Value:
    kernel = as_value(kernel)
    if kernel.shape[-1] != SHIFT_WIDTH:
        raise ContractViolation(f"shift: kernel must have {SHIFT_WIDTH} entries, got {kernel.shape[-1]}")
    return ops.circular_convolve1d(w, kernel, lengths)


def sharpen(w, gamma) -> Value:
    w = as_value(w)
    if np.any(w.data.sum(axis=-1) <= 0):
        raise ContractViolation("sharpen: weights sum to zero and cannot be renormalised")
    powered = ops.power(w, gamma)
    total = ops.clip_min(ops.sum(powered, axis=-1, keepdims=True), SHARPEN_FLOOR)
    return powered / total


@dataclass
class AddressTrace:
    """Intermediate quantities of one address computation, kept for analysis."""

    weights: Value
    content: Value


def address(head: HeadParameters, memory, w_previous, lengths=None) -> AddressTrace:
    """Full pipeline: content lookup, interpolate with the previous address, shift, sharpen."""
    w_c = content_weights(head.key, memory, head.beta)
    w_g = interpolate(w_c, w_previous, head.gate)
    w = sharpen(shift(w_g, head.shift, lengths), head.gamma)
    return AddressTrace(w, w_c)


def read(memory, w) -> Value:
    """Weighted sum of memory rows."""
    memory, w = as_value(memory), as_value(w)
    if w.shape[-1] != memory.shape[-2]:
        raise ContractViolation(f"read: weights {w.shape} do not match memory {memory.shape}")
    row = ops.reshape(w, w.shape[:-1] + (1, w.shape[-1]))
    out = ops.matmul(row, memory)
    return ops.reshape(out, out.shape[:-2] + (out.shape[-1],))


def write(memory, w, erase, add) -> Value:
    """Erase then add: ``M(i) * (1 - w(i) e) + w(i) a`` for every row ``i``."""
    memory, w, erase, add = as_value(memory), as_value(w), as_value(erase), as_value(add)
    if w.shape[-1] != memory.shape[-2] or erase.shape[-1] != memory.shape[-1] or add.shape[-1] != memory.shape[-1]:
        raise ContractViolation(
            f"write: weights {w.shape}, erase {erase.shape}, add {add.shape} do not match memory {memory.shape}"
        )
    column = ops.reshape(w, w.shape + (1,))
    erase_row = ops.reshape(erase, erase.shape[:-1] + (1, erase.shape[-1]))
    add_row = ops.reshape(add, add.shape[:-1] + (1, add.shape[-1]))
    kept = memory * (1.0 - ops.matmul(column, erase_row))
    return kept + ops.matmul(column, add_row)


def initial_memory(bias_row, batch: int, locations: int) -> Value:
    """Every cell starts at a small constant plus a learnable row shared by all locations."""
    bias_row = as_value(bias_row)
    base = np.full((batch, locations, bias_row.shape[-1]), MEMORY_INIT_CONSTANT)
    return ops.add(base, bias_row)


def initial_weight_logits(locations: int) -> np.ndarray:
    """Logits whose softmax is one-hot at location 0 to within 1e-6."""
    logits = np.full(locations, -20.0)
    logits[0] = 0.0
    return logits


def initial_weights(logits, batch: int) -> Value:
    logits = as_value(logits)
    w = ops.softmax(logits, axis=-1)
    return ops.add(np.zeros((batch, logits.shape[-1])), w)

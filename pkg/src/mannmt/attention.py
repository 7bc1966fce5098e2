"""Luong attention and NTM-style attention over encoded source sentences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import memory
from .autodiff import Value, as_value, ops
from .errors import ContractViolation
from .memory import HeadParameters


@dataclass
class EncodedSource:
    """Encoder states ``(B, S, H)``, true lengths ``(B,)`` and the matching validity mask."""

    states: Value
    lengths: np.ndarray

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.lengths.shape != self.states.shape[:1]:
            raise ContractViolation(f"EncodedSource: lengths {self.lengths.shape} vs states {self.states.shape}")
        if self.lengths.size and (self.lengths.min() < 1 or self.lengths.max() > self.states.shape[1]):
            raise ContractViolation("EncodedSource: every sentence needs between 1 and S valid positions")

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.states.shape[1])[None, :] < self.lengths[:, None]

    def take(self, index) -> "EncodedSource":
        return EncodedSource(Value(self.states.data[index]), self.lengths[index])


@dataclass
class AttentionState:
    """Previous attention weights ``(B, S)`` and the bilinear scoring matrix."""

    previous: Value
    W_a: Value


def initial_attention_weights(source: EncodedSource) -> Value:
    """One-hot at the first source position for every sentence."""
    w = np.zeros(source.states.shape[:2])
    w[:, 0] = 1.0
    return Value(w)


def luong_score(h, source_states, W_a) -> Value:
    """``h^T W_a s`` for every source state; ``h`` is ``(B, H)``, states ``(B, S, H)``."""
    h, source_states, W_a = as_value(h), as_value(source_states), as_value(W_a)
    if h.ndim == 1:
        h = ops.reshape(h, (1,) + h.shape)
    if source_states.ndim == 1:
        source_states = ops.reshape(source_states, (1, 1) + source_states.shape)
    query = ops.matmul(h, W_a)
    scores = ops.matmul(source_states, ops.reshape(query, query.shape + (1,)))
    return ops.reshape(scores, scores.shape[:-1])


def luong_weights(h, source: EncodedSource, beta, W_a) -> Value:
    """Masked softmax of ``beta * score`` over the valid source positions."""
    if source.states.shape[1] == 0:
        raise ContractViolation("luong_weights: empty source sentence")
    scores = luong_score(h, source.states, W_a)
    return ops.softmax(ops.mul(beta, scores), axis=-1, mask=source.mask)


def context(w, source: EncodedSource) -> Value:
    w = as_value(w)
    row = ops.reshape(w, (w.shape[0], 1, w.shape[1]))
    out = ops.matmul(row, source.states)
    return ops.reshape(out, (w.shape[0], out.shape[-1]))


@dataclass
class AttentionResult:
    weights: Value
    content: Value
    context: Value
    state: AttentionState


def ntm_style_attention(h, source: EncodedSource, head: HeadParameters, state: AttentionState) -> AttentionResult:
    """Luong content weights followed by interpolation, circular shift and sharpening.

    The shift wraps around each sentence's own length, so padding never
    receives mass. ``head.key`` is unused: the decoder state is the key.
    """
    w_c = luong_weights(h, source, head.beta, state.W_a)
    w_g = memory.interpolate(w_c, state.previous, head.gate)
    w = memory.sharpen(memory.shift(w_g, head.shift, source.lengths), head.gamma)
    return AttentionResult(w, w_c, context(w, source), AttentionState(w, state.W_a))


ATTENTION_HEAD_SIZE = 3 + memory.SHIFT_WIDTH  # beta, gate, 3 shift logits, gamma


def squash_attention_head(raw) -> HeadParameters:
    """Constrain an attention head's raw outputs: softplus beta, sigmoid gate, softmax shift, 1+softplus gamma."""
    raw = as_value(raw)
    if raw.shape[-1] != ATTENTION_HEAD_SIZE:
        raise ContractViolation(f"squash_attention_head: expected {ATTENTION_HEAD_SIZE} raw outputs, got {raw.shape[-1]}")
    beta = ops.softplus(raw[..., 0:1])
    gate = ops.sigmoid(raw[..., 1:2])
    kernel = ops.softmax(raw[..., 2: 2 + memory.SHIFT_WIDTH])
    gamma = 1.0 + ops.softplus(raw[..., 2 + memory.SHIFT_WIDTH:])
    return HeadParameters(key=None, beta=beta, gate=gate, shift=kernel, gamma=gamma)


def identity_kernel(batch: int) -> np.ndarray:
    kernel = np.zeros((batch, memory.SHIFT_WIDTH))
    kernel[:, memory.SHIFT_OFFSETS.index(0)] = 1.0
    return kernel

"""Greedy and beam-search decoding on top of ``Model.decode_step``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff.ops import log_softmax
from .data import EOS, SOS, Batch
from .errors import ContractViolation
from .models import Model


def greedy_decode(model: Model, source, source_lengths=None, max_length: int = 50, params=None) -> list:
    """Argmax decoding for a batch; returns one token list per sentence, EOS included when produced."""
    state = model.encode(source, source_lengths, params=params)
    batch = state.batch_size
    prev = np.full(batch, SOS)
    outputs = [[] for _ in range(batch)]
    done = np.zeros(batch, dtype=bool)
    for _ in range(max_length):
        logits, state = model.decode_step(state, prev)
        prev = np.argmax(logits.data, axis=-1)
        for b in np.flatnonzero(~done):
            outputs[b].append(int(prev[b]))
        done |= prev == EOS
        if done.all():
            break
    return outputs


def greedy_decode_batch(model: Model, batch: Batch, max_length: Optional[int] = None, params=None) -> list:
    limit = max_length if max_length is not None else int(batch.target_lengths.max()) + 5
    return greedy_decode(model, batch.source, batch.source_lengths, limit, params)


@dataclass
class BeamHypothesis:
    tokens: list
    log_prob: float
    finished: bool = False
    step_log_probs: list = field(default_factory=list)

    @property
    def score(self) -> float:
        """Mean log-probability per generated token."""
        return self.log_prob / max(len(self.tokens), 1)


def beam_search(model: Model, source, beam_width: int = 10, max_length: int = 50, params=None) -> BeamHypothesis:
    """Length-normalised beam search for a single source sentence.

    Live hypotheses are pruned by cumulative log-probability each step (they
    all share a length); hypotheses ending in EOS are frozen. A live
    hypothesis with log-probability ``lp`` can at best finish with mean
    ``lp / max_length``, so search stops once no live hypothesis can overtake
    the best finished one, none are live, or ``max_length`` tokens have been
    produced. Hypotheses cut off at ``max_length`` compete with the finished
    ones on the same normalised score, the way a truncated greedy output does.
    """
    if beam_width < 1 or max_length < 1:
        raise ContractViolation("beam_search: beam_width and max_length must be at least 1")
    source = np.asarray(source, dtype=np.int64).reshape(1, -1)
    params = params if params is not None else model.bind()
    state = model.encode(source, params=params)
    live = [BeamHypothesis([], 0.0)]
    finished: list = []
    for _ in range(max_length):
        prev = np.array([h.tokens[-1] if h.tokens else SOS for h in live])
        logits, state = model.decode_step(state, prev)
        logp = log_softmax(logits.data, axis=-1)
        totals = np.array([h.log_prob for h in live])[:, None] + logp
        flat = totals.reshape(-1)
        order = np.argsort(-flat, kind="stable")[:beam_width]
        vocab = logp.shape[1]
        keep_rows, next_live = [], []
        for index in order:
            row, token = divmod(int(index), vocab)
            parent = live[row]
            hyp = BeamHypothesis(parent.tokens + [token], float(flat[index]), token == EOS,
                                 parent.step_log_probs + [float(logp[row, token])])
            if hyp.finished:
                finished.append(hyp)
            else:
                next_live.append(hyp)
                keep_rows.append(row)
        live = next_live
        if not live:
            break
        if finished:
            best = max(h.score for h in finished)
            if best >= max(h.log_prob for h in live) / max_length:
                break
        state = state.take(np.array(keep_rows))
    return max(finished + live, key=lambda h: (h.score, -len(h.tokens)))

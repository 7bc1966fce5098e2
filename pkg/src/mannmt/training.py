"""Adam, gradient clipping, evaluation and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import backward
from .bleu import bleu
from .data import EOS, ParallelCorpus, iterate_batches
from .decoding import beam_search, greedy_decode
from .errors import NonFiniteGradient, TrainingDiverged
from .models import Model

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: OptimizerState) -> tuple:
    """Bias-corrected Adam update, applied in place to ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    state.step += 1
    t = state.step
    for name, g in grads.items():
        if name not in state.first:
            state.first[name] = np.zeros_like(params[name])
            state.second[name] = np.zeros_like(params[name])
        m = state.first[name] = state.beta1 * state.first[name] + (1.0 - state.beta1) * g
        v = state.second[name] = state.beta2 * state.second[name] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        params[name] -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


def clip_gradients(grads: dict, max_norm: float) -> tuple:
    """Scale all gradients together so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def compute_gradients(model: Model, batch, training: bool = True, rng=None) -> tuple:
    params = model.bind(requires_grad=True)
    loss = model.batch_loss(batch, params=params, training=training, rng=rng)
    backward(loss)
    grads = {name: (v.grad if v.grad is not None else np.zeros_like(v.data)) for name, v in params.items()}
    return float(loss.data), grads


# ------------------------------------------------------------------ evaluation

def token_accuracy(hypotheses: list, references: list) -> float:
    """Fraction of reference tokens (EOS included) matched at the same position."""
    correct = total = 0
    for hyp, ref in zip(hypotheses, references):
        total += len(ref)
        correct += sum(1 for i, token in enumerate(ref) if i < len(hyp) and hyp[i] == token)
    return correct / total if total else 0.0


def _strip(tokens: list) -> list:
    return tokens[: tokens.index(EOS)] if EOS in tokens else list(tokens)


@dataclass
class Evaluation:
    token_accuracy: float
    bleu: float
    hypotheses: list


def evaluate(model: Model, corpus: ParallelCorpus, beam_width: int = 1, max_extra_length: int = 5,
             batch_size: int = 64) -> Evaluation:
    """Decode every source and score against the references.

    Width 1 uses batched greedy decoding; wider beams decode one sentence at
    a time. Hypotheses come back in corpus order.
    """
    pairs = corpus.pairs
    hypotheses: list = [None] * len(pairs)
    params = model.bind()
    if beam_width <= 1:
        order = sorted(range(len(pairs)), key=lambda i: (len(pairs[i][0]), i))
        for start in range(0, len(order), batch_size):
            chunk = order[start: start + batch_size]
            srcs = [pairs[i][0] for i in chunk]
            lengths = np.array([len(s) for s in srcs])
            padded = np.zeros((len(srcs), lengths.max()), dtype=np.int64)
            for row, s in enumerate(srcs):
                padded[row, : len(s)] = s
            limit = max(len(pairs[i][1]) for i in chunk) + max_extra_length
            for i, hyp in zip(chunk, greedy_decode(model, padded, lengths, limit, params)):
                hypotheses[i] = hyp
    else:
        for i, (src, tgt) in enumerate(pairs):
            hypotheses[i] = beam_search(model, src, beam_width, len(tgt) + max_extra_length, params).tokens
    refs = [tgt for _, tgt in pairs]
    score = bleu([_strip(h) for h in hypotheses], [_strip(r) for r in refs]) if pairs else 0.0
    return Evaluation(token_accuracy(hypotheses, refs), score, hypotheses)


# --------------------------------------------------------------------- training

@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    learning_rate: float = 0.001
    clip_norm: float = 5.0
    seed: int = 0
    validation_interval: Optional[int] = None  # steps between validations; None means once per epoch
    target_accuracy: Optional[float] = None  # stop early once validation token accuracy reaches this


@dataclass
class TrainResult:
    model: Model  # the checkpoint with the highest validation BLEU
    final_model: Model
    best_bleu: float
    best_step: int
    log: list  # tuples: ("train", step, epoch, loss) or ("valid", step, epoch, token_accuracy, bleu)
    steps_run: int

    @property
    def validations(self) -> list:
        return [row for row in self.log if row[0] == "valid"]


def format_log_row(row: tuple) -> str:
    if row[0] == "train":
        return f"train\t{row[1]}\t{row[2]}\t{row[3]:.6f}"
    return f"valid\t{row[1]}\t{row[2]}\t{row[3]:.6f}\t{row[4]:.4f}"


def train(model: Model, train_corpus: ParallelCorpus, valid_corpus: ParallelCorpus, config: TrainConfig,
          log_path=None, on_validation: Optional[Callable] = None) -> TrainResult:
    """Run ``config.steps`` Adam updates, validating after every epoch and at the end.

    The model is updated in place; the returned ``model`` is a copy of the
    parameters that scored the highest validation BLEU (earliest on ties).
    """
    if not train_corpus.pairs or not valid_corpus.pairs:
        raise ValueError("train: training and validation corpora must be nonempty")
    rng = np.random.default_rng(config.seed)
    opt = OptimizerState(learning_rate=config.learning_rate)
    rows: list = []
    best, best_bleu, best_step = model.copy(), -1.0, 0
    sink = open(log_path, "w", encoding="utf-8") if log_path is not None else None

    def emit(row):
        rows.append(row)
        if sink is not None:
            sink.write(format_log_row(row) + "\n")
            sink.flush()

    def validate(step, epoch) -> bool:
        nonlocal best, best_bleu, best_step
        result = evaluate(model, valid_corpus)
        emit(("valid", step, epoch, result.token_accuracy, result.bleu))
        if result.bleu > best_bleu:
            best, best_bleu, best_step = model.copy(), result.bleu, step
        if on_validation is not None:
            on_validation(step, epoch, result)
        return config.target_accuracy is not None and result.token_accuracy >= config.target_accuracy

    step = epoch = 0
    last_validated = -1
    try:
        while step < config.steps:
            epoch += 1
            for batch in iterate_batches(train_corpus.pairs, config.batch_size, rng):
                if step >= config.steps:
                    break
                last_good = model.copy()
                loss, grads = compute_gradients(model, batch, training=True, rng=rng)
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"loss became {loss} at step {step + 1}", checkpoint=last_good,
                                           step=step + 1)
                grads, _ = clip_gradients(grads, config.clip_norm)
                try:
                    adam_step(model.params, grads, opt)
                except NonFiniteGradient as exc:
                    raise TrainingDiverged(str(exc), checkpoint=last_good, step=step + 1) from exc
                step += 1
                emit(("train", step, epoch, loss))
                if config.validation_interval and step % config.validation_interval == 0:
                    last_validated = step
                    if validate(step, epoch):
                        return TrainResult(best, model, best_bleu, best_step, rows, step)
            else:
                if not config.validation_interval and step != last_validated:
                    last_validated = step
                    if validate(step, epoch):
                        return TrainResult(best, model, best_bleu, best_step, rows, step)
        if step > 0 and step != last_validated:
            validate(step, epoch)
        return TrainResult(best, model, max(best_bleu, 0.0), best_step, rows, step)
    finally:
        if sink is not None:
            sink.close()

"""Corpus-level BLEU-4 with brevity penalty and uniform n-gram weights."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from .errors import ContractViolation


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def _tokens(sentence) -> list:
    return sentence.split() if isinstance(sentence, str) else list(sentence)


def bleu(candidates: Sequence, references: Sequence, max_order: int = 4, smooth: bool = False) -> float:
    """BLEU in [0, 100]; sentences are token sequences or whitespace-separated strings.

    Without smoothing any n-gram order with no match yields 0. ``smooth``
    adds one to every numerator and denominator, as in Lin and Och (2004).
    """
    if len(candidates) != len(references):
        raise ContractViolation(f"bleu: {len(candidates)} candidates for {len(references)} references")
    if not candidates:
        raise ContractViolation("bleu: empty corpus")
    matches = [0] * max_order
    possible = [0] * max_order
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand, ref = _tokens(cand), _tokens(ref)
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            c_counts = _ngrams(cand, n)
            r_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(count, r_counts[g]) for g, count in c_counts.items())
            possible[n - 1] += max(len(cand) - n + 1, 0)
    if smooth:
        precisions = [(m + 1.0) / (p + 1.0) for m, p in zip(matches, possible)]
    else:
        if min(matches) == 0:
            return 0.0
        precisions = [m / p for m, p in zip(matches, possible)]
    log_mean = sum(math.log(p) for p in precisions) / max_order
    if cand_len == 0:
        return 0.0
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * brevity * math.exp(log_mean)

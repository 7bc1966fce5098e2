"""Vocabularies, parallel corpora, synthetic task generators and batching."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import ContractViolation, IngestionError

PAD, UNK, SOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")


class Vocabulary:
    """Token/id bijection with ids 0-3 reserved for PAD, UNK, SOS and EOS."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._tokens = list(RESERVED)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        for token in tokens:
            if token in self._ids:
                raise ContractViolation(f"Vocabulary: duplicate or reserved token {token!r}")
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self) -> list:
        """Non-reserved tokens in id order."""
        return self._tokens[len(RESERVED):]

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, index: int) -> str:
        return self._tokens[index]

    def encode(self, tokens: Sequence[str], add_eos: bool = True) -> list:
        ids = [self.id(t) for t in tokens]
        return ids + [EOS] if add_eos else ids

    def decode(self, ids: Sequence[int], strip_eos: bool = True) -> list:
        out = []
        for i in ids:
            i = int(i)
            if strip_eos and i == EOS:
                break
            out.append(self._tokens[i])
        return out

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise IngestionError(f"cannot read vocabulary {path}: {exc}") from exc
        return cls(line for line in text.split("\n") if line)


@dataclass
class ParallelCorpus:
    """Aligned (source ids, target ids) pairs, each sequence ending in EOS."""

    pairs: list
    source_vocab: Vocabulary
    target_vocab: Vocabulary
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def validate(self) -> None:
        for n, (src, tgt) in enumerate(self.pairs):
            for seq, vocab in ((src, self.source_vocab), (tgt, self.target_vocab)):
                if not seq or seq[-1] != EOS:
                    raise ContractViolation(f"pair {n}: sequence does not end with EOS")
                if PAD in seq or any(i >= len(vocab) or i < 0 for i in seq):
                    raise ContractViolation(f"pair {n}: sequence holds PAD or out-of-range ids")

    def split(self, held_out: int) -> tuple:
        """First ``len - held_out`` pairs and the remaining ``held_out`` pairs."""
        cut = len(self.pairs) - held_out
        make = lambda p: ParallelCorpus(p, self.source_vocab, self.target_vocab, dict(self.metadata))  # noqa: E731
        return make(self.pairs[:cut]), make(self.pairs[cut:])


# ------------------------------------------------------------------ generators

def copy_vocabulary(bit_width: int) -> Vocabulary:
    return Vocabulary(format(i, f"0{bit_width}b") for i in range(2 ** bit_width))


def generate_copy_task(count: int, min_length: int, max_length: int, bit_width: int, seed: int) -> ParallelCorpus:
    """Random bit patterns, one token per pattern; the target repeats the source."""
    if not 1 <= min_length <= max_length or bit_width < 1:
        raise ContractViolation("generate_copy_task: need 1 <= min_length <= max_length and bit_width >= 1")
    vocab = copy_vocabulary(bit_width)
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        length = int(rng.integers(min_length, max_length + 1))
        bits = rng.integers(0, 2, size=(length, bit_width))
        ids = [len(RESERVED) + int("".join(map(str, row)), 2) for row in bits]
        pairs.append((ids + [EOS], ids + [EOS]))
    return ParallelCorpus(pairs, vocab, copy_vocabulary(bit_width), {"task": "copy", "seed": seed})


def toy_translation_rule(source_ids: Sequence[int], substitution: dict) -> list:
    """Substitute every token, then swap each adjacent pair (a trailing odd token stays put)."""
    out = [substitution[i] for i in source_ids]
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def generate_toy_translation(count: int, vocab_size: int, min_length: int, max_length: int, seed: int) -> ParallelCorpus:
    """Lexical substitution through a seeded bijection plus adjacent-pair reordering.

    ``vocab_size`` counts content tokens; source tokens are ``s0..`` and
    target tokens ``t0..``. The bijection comes from its own seeded stream so
    it is independent of ``count``.
    """
    if vocab_size < 8:
        raise ContractViolation("generate_toy_translation: vocab_size must be at least 8")
    if not 1 <= min_length <= max_length:
        raise ContractViolation("generate_toy_translation: need 1 <= min_length <= max_length")
    source_vocab = Vocabulary(f"s{i}" for i in range(vocab_size))
    target_vocab = Vocabulary(f"t{i}" for i in range(vocab_size))
    permutation = np.random.default_rng([seed, 0]).permutation(vocab_size)
    offset = len(RESERVED)
    substitution = {offset + i: offset + int(permutation[i]) for i in range(vocab_size)}
    rng = np.random.default_rng([seed, 1])
    pairs = []
    for _ in range(count):
        length = int(rng.integers(min_length, max_length + 1))
        src = [offset + int(t) for t in rng.integers(0, vocab_size, size=length)]
        pairs.append((src + [EOS], toy_translation_rule(src, substitution) + [EOS]))
    return ParallelCorpus(pairs, source_vocab, target_vocab, {"task": "toy", "seed": seed})


# ------------------------------------------------------------------ file input

def _read_lines(path) -> list:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    out = []
    for number, line in enumerate(lines, start=1):
        try:
            out.append(line.decode("utf-8").rstrip("\r"))
        except UnicodeDecodeError as exc:
            raise IngestionError(f"{path}: line {number} is not valid UTF-8 ({exc.reason})") from None
    return out


def build_vocab(path, max_size: int) -> Vocabulary:
    """Most frequent whitespace tokens, ties broken lexicographically, up to ``max_size`` ids in total."""
    if max_size <= len(RESERVED):
        raise ContractViolation(f"build_vocab: max_size must exceed {len(RESERVED)}")
    counts = Counter(token for line in _read_lines(path) for token in line.split())
    for token in RESERVED:
        counts.pop(token, None)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return Vocabulary(token for token, _ in ranked[: max_size - len(RESERVED)])


def load_parallel_corpus(source_path, target_path, source_vocab: Vocabulary, target_vocab: Vocabulary) -> ParallelCorpus:
    src_lines = _read_lines(source_path)
    tgt_lines = _read_lines(target_path)
    if len(src_lines) != len(tgt_lines):
        raise IngestionError(
            f"line counts differ: {source_path} has {len(src_lines)}, {target_path} has {len(tgt_lines)}"
        )
    pairs = [
        (source_vocab.encode(s.split()), target_vocab.encode(t.split()))
        for s, t in zip(src_lines, tgt_lines)
    ]
    return ParallelCorpus(pairs, source_vocab, target_vocab, {"source": str(source_path), "target": str(target_path)})


def detokenize(vocab: Vocabulary, ids: Sequence[int]) -> str:
    return " ".join(vocab.decode(ids))


# -------------------------------------------------------------------- batching

@dataclass
class Batch:
    source: np.ndarray  # (B, S) right-padded with PAD
    source_lengths: np.ndarray
    target: np.ndarray  # (B, T) right-padded with PAD
    target_lengths: np.ndarray

    def __len__(self) -> int:
        return self.source.shape[0]


def pad(sequences: Sequence[Sequence[int]]) -> tuple:
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    out = np.full((len(sequences), int(lengths.max())), PAD, dtype=np.int64)
    for row, seq in enumerate(sequences):
        out[row, : len(seq)] = seq
    return out, lengths


def make_batch(pairs: Sequence[tuple]) -> Batch:
    src, src_len = pad([p[0] for p in pairs])
    tgt, tgt_len = pad([p[1] for p in pairs])
    return Batch(src, src_len, tgt, tgt_len)


def iterate_batches(pairs: Sequence[tuple], batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[Batch]:
    """Batches of similar source/target length; batch order shuffled when ``rng`` is given."""
    order = np.arange(len(pairs))
    noise = rng.random(len(pairs)) if rng is not None else np.zeros(len(pairs))
    keys = [(len(pairs[i][0]), len(pairs[i][1]), noise[i], i) for i in order]
    order = [k[3] for k in sorted(keys)]
    chunks = [order[i: i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    for chunk in chunks:
        yield make_batch([pairs[i] for i in chunk])

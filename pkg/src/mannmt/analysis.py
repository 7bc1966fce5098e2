"""Per-head address traces: recording, CSV/PGM export and monotonicity statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import EOS, SOS, Vocabulary
from .decoding import greedy_decode
from .errors import ContractViolation
from .memory import SHIFT_OFFSETS
from .models import Model

FORWARD = SHIFT_OFFSETS.index(1)
PGM_COMMENT = "pixel = round(255 * w / max(w)), max over the whole image, ties round half to even; all-zero -> 0"


@dataclass
class HeadTrace:
    """One head's addressing over an episode; rows are timesteps."""

    kind: str  # read | write | attention
    index: int
    weights: np.ndarray  # (T, N) final address w_t
    content: np.ndarray  # (T, N) content address w_c_t
    gates: np.ndarray  # (T,)
    shifts: np.ndarray  # (T, 3) kernel over offsets -1, 0, +1
    betas: np.ndarray
    gammas: np.ndarray
    phases: list  # "encoding" | "decoding" per timestep
    row_labels: list = field(default_factory=list)
    column_labels: list = field(default_factory=list)

    @property
    def head_id(self) -> str:
        return f"{self.kind}-{self.index}"

    def __len__(self) -> int:
        return self.weights.shape[0]


def _labels(vocab: Optional[Vocabulary], ids: Sequence[int]) -> list:
    return [vocab.token(int(i)) if vocab is not None else str(int(i)) for i in ids]


def record_episode(model: Model, source: Sequence[int], decoded: Optional[Sequence[int]] = None,
                   source_vocab: Optional[Vocabulary] = None, target_vocab: Optional[Vocabulary] = None,
                   max_length: int = 50) -> list:
    """Replay one sentence with recording on and return a trace per head.

    ``decoded`` is fed back step by step (greedy decoding is run first when it
    is omitted), so the recorded addresses are the ones that produced it.
    """
    source = [int(t) for t in source]
    params = model.bind()
    if decoded is None:
        decoded = greedy_decode(model, np.array([source]), None, max_length, params)[0]
    decoded = [int(t) for t in decoded]
    state = model.encode(np.array([source]), params=params, record=True)
    prev = SOS
    for token in decoded:
        _, state = model.decode_step(state, np.array([prev]))
        prev = token
    steps = state.trace
    if not steps or not any(step["heads"] for step in steps):
        raise ContractViolation("record_episode: the model has no heads to trace")

    encoding_inputs = list(source)
    if model.config.architecture == "pure-mann" and (not source or source[-1] != EOS):
        encoding_inputs.append(EOS)
    src_labels = _labels(source_vocab, encoding_inputs)
    tgt_labels = _labels(target_vocab, decoded)

    grouped: dict = {}
    phases: dict = {}
    for step in steps:
        for rec in step["heads"]:
            key = (rec["kind"], rec["index"])
            grouped.setdefault(key, []).append(rec)
            phases.setdefault(key, []).append(step["phase"])
    order = {"attention": 0, "read": 1, "write": 2}
    traces = []
    for key in sorted(grouped, key=lambda k: (order[k[0]], k[1])):
        recs, tags = grouped[key], phases[key]
        rows, enc_i, dec_i = [], 0, 0
        for tag in tags:
            if tag == "encoding":
                rows.append(src_labels[enc_i] if enc_i < len(src_labels) else str(enc_i))
                enc_i += 1
            else:
                rows.append(tgt_labels[dec_i] if dec_i < len(tgt_labels) else str(dec_i))
                dec_i += 1
        width = recs[0]["w"].shape[-1]
        columns = src_labels[:width] if key[0] == "attention" else [str(i) for i in range(width)]
        traces.append(HeadTrace(
            kind=key[0], index=key[1],
            weights=np.stack([r["w"][0] for r in recs]),
            content=np.stack([r["w_c"][0] for r in recs]),
            gates=np.array([float(np.ravel(r["g"][0])[0]) for r in recs]),
            shifts=np.stack([r["s"][0] for r in recs]),
            betas=np.array([float(np.ravel(r["beta"][0])[0]) for r in recs]),
            gammas=np.array([float(np.ravel(r["gamma"][0])[0]) for r in recs]),
            phases=list(tags), row_labels=rows, column_labels=columns,
        ))
    return traces


# ---------------------------------------------------------------------- export

def _row_label(trace: HeadTrace, t: int) -> str:
    label = trace.row_labels[t] if t < len(trace.row_labels) else ""
    return f"{t}:{label}" if label else str(t)


def _write_table(path: Path, header: list, trace: HeadTrace, rows: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["step"] + header)
        for t, row in enumerate(rows):
            out.writerow([_row_label(trace, t)] + [format(float(v), ".17g") for v in np.ravel(row)])


def read_table(path) -> tuple:
    """Parse an exported table back into (row labels, column header, matrix)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0][1:], rows[1:]
    labels = [r[0] for r in body]
    matrix = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64).reshape(len(body), len(header))
    return labels, header, matrix


def heatmap_pixels(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    peak = matrix.max() if matrix.size else 0.0
    if peak <= 0:
        return np.zeros(matrix.shape, dtype=np.uint8)
    return np.rint(255.0 * matrix / peak).clip(0, 255).astype(np.uint8)


def write_pgm(path: Path, matrix: np.ndarray) -> None:
    pixels = heatmap_pixels(matrix)
    height, width = pixels.shape
    header = f"P5\n# {PGM_COMMENT}\n{width} {height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    width, height = int(fields[1]), int(fields[2])
    return np.frombuffer(data[pos + 1:], dtype=np.uint8).reshape(height, width)


def export_trace(trace: HeadTrace, output_dir) -> list:
    """Write the four tables and two heatmaps under ``<output_dir>/<kind>-<index>/``."""
    target = Path(output_dir) / trace.head_id
    try:
        target.mkdir(parents=True, exist_ok=True)
        columns = [str(i) for i in range(trace.weights.shape[1])]
        files = []
        for name, matrix in (("full_address", trace.weights), ("content_address", trace.content)):
            _write_table(target / f"{name}.csv", columns, trace, matrix)
            write_pgm(target / f"{name}.pgm", matrix)
            files += [target / f"{name}.csv", target / f"{name}.pgm"]
        _write_table(target / "gate.csv", ["g"], trace, trace.gates[:, None])
        _write_table(target / "shift_kernel.csv", [str(o) for o in SHIFT_OFFSETS], trace, trace.shifts)
        files += [target / "gate.csv", target / "shift_kernel.csv"]
    except OSError as exc:
        raise OSError(f"export_trace: cannot write under {target}: {exc}") from exc
    return files


# ---------------------------------------------------------------------- report

def monotonicity_report(trace: HeadTrace) -> dict:
    """Gate, forward-step and +1 shift statistics, overall and per phase.

    A forward step is a transition where the argmax location advances by one
    (circularly); transitions are attributed to the phase of the later step.
    """
    T = len(trace)
    if T == 0:
        raise ContractViolation("monotonicity_report: empty trace")
    N = trace.weights.shape[1]
    peaks = trace.weights.argmax(axis=1)
    forward = (peaks[1:] == (peaks[:-1] + 1) % N)
    phases = np.array(trace.phases)
    report = {
        "head": trace.head_id,
        "steps": T,
        "forward_step_fraction": float(forward.mean()) if T > 1 else 0.0,
        "phases": {},
    }
    for phase in ("encoding", "decoding"):
        mask = phases == phase
        if not mask.any():
            continue
        moves = forward[mask[1:]]
        report["phases"][phase] = {
            "steps": int(mask.sum()),
            "mean_gate": float(trace.gates[mask].mean()),
            "forward_step_fraction": float(moves.mean()) if moves.size else 0.0,
            "mean_forward_shift": float(trace.shifts[mask, FORWARD].mean()),
        }
    return report


def format_report(report: dict) -> str:
    lines = [f"{report['head']}\tsteps={report['steps']}\tforward_step_fraction={report['forward_step_fraction']:.4f}"]
    for phase, stats in report["phases"].items():
        lines.append(f"{report['head']}\t{phase}\tsteps={stats['steps']}\tmean_gate={stats['mean_gate']:.4f}\t"
                     f"forward_step_fraction={stats['forward_step_fraction']:.4f}\t"
                     f"mean_forward_shift={stats['mean_forward_shift']:.4f}")
    return "\n".join(lines)

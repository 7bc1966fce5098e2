"""Checkpoint container.

A checkpoint is a zip archive (stored, not compressed) holding:

``meta.json``
    ``{"format": "mannmt-checkpoint", "version": 1, "config": {...},
    "source_vocab": [...], "target_vocab": [...], "extra": {...}}``.
    ``config`` is the model configuration; the vocabularies list the
    non-reserved tokens in id order (ids 0-3 are always PAD, UNK, SOS, EOS).
``params/<name>.npy``
    One float64 array per named parameter in NumPy ``.npy`` format.

Members are written in sorted order with a fixed timestamp, so saving the
same model twice gives identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Vocabulary
from .errors import ContractViolation
from .models import Model, ModelConfig, build_model

FORMAT = "mannmt-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    model: Model
    source_vocab: Vocabulary
    target_vocab: Vocabulary
    extra: dict


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(path, model: Model, source_vocab: Vocabulary, target_vocab: Vocabulary,
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "source_vocab": source_vocab.tokens,
        "target_vocab": target_vocab.tokens,
        "extra": extra or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(_member("meta.json"), json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(model.params):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(model.params[name], dtype=np.float64),
                                      allow_pickle=False)
            zf.writestr(_member(f"params/{name}.npy"), buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise ContractViolation(f"{path}: not a readable checkpoint ({exc})") from exc
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except (KeyError, ValueError) as exc:
            raise ContractViolation(f"{path}: missing or corrupt meta.json") from exc
        if meta.get("format") != FORMAT or meta.get("version") != VERSION:
            raise ContractViolation(f"{path}: unsupported checkpoint format {meta.get('format')!r} "
                                    f"version {meta.get('version')!r}")
        config = ModelConfig(**meta["config"])
        params = {}
        for name in zf.namelist():
            if name.startswith("params/") and name.endswith(".npy"):
                params[name[len("params/"):-len(".npy")]] = np.lib.format.read_array(
                    io.BytesIO(zf.read(name)), allow_pickle=False)
    expected = build_model(config, seed=0).params
    if set(expected) != set(params):
        missing, unknown = sorted(set(expected) - set(params)), sorted(set(params) - set(expected))
        raise ContractViolation(f"{path}: parameters do not match the configuration "
                                f"(missing {missing}, unexpected {unknown})")
    for name, array in params.items():
        if array.shape != expected[name].shape:
            raise ContractViolation(f"{path}: parameter {name} has shape {array.shape}, "
                                    f"expected {expected[name].shape}")
    src, tgt = Vocabulary(meta["source_vocab"]), Vocabulary(meta["target_vocab"])
    if len(src) != config.source_vocab_size or len(tgt) != config.target_vocab_size:
        raise ContractViolation(f"{path}: vocabulary sizes disagree with the model configuration")
    return Checkpoint(build_model(config, params=params), src, tgt, meta.get("extra", {}))

"""Versioned text checkpoints.

Format: canonical JSON (sorted keys, fixed indent). Float64 values survive a
save/load cycle bit-exactly because JSON text keeps Python's shortest
round-trip float representation, so saving the same model twice yields
byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import ConfigError, InvariantViolation

FORMAT_NAME = "faultlab-checkpoint"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    meta: dict[str, Any] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def _encode_array(arr: np.ndarray) -> dict[str, Any]:
    if arr.dtype == np.float64:
        dtype = "f8"
        data = [float(v) for v in arr.ravel()]
        if not all(np.isfinite(data)) and data:
            bad = [v for v in data if not np.isfinite(v)]
            raise InvariantViolation(f"refusing to checkpoint non-finite value {bad[0]!r}")
    elif np.issubdtype(arr.dtype, np.integer):
        dtype = "i8"
        data = [int(v) for v in arr.ravel()]
    else:
        raise ConfigError(f"unsupported checkpoint dtype {arr.dtype}")
    return {"dtype": dtype, "shape": list(arr.shape), "data": data}


def _decode_array(spec: dict[str, Any]) -> np.ndarray:
    dtype = np.float64 if spec["dtype"] == "f8" else np.int64
    arr = np.array(spec["data"], dtype=dtype)
    return arr.reshape(spec["shape"])


def checkpoint_text(ckpt: Checkpoint) -> str:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "meta": ckpt.meta,
        "arrays": {name: _encode_array(a) for name, a in sorted(ckpt.arrays.items())},
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_text(checkpoint_text(ckpt))


def load_checkpoint(path: str | Path, expect_kind: str | None = None) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not a checkpoint file: {exc}") from exc
    if doc.get("format") != FORMAT_NAME:
        raise ConfigError(f"unknown checkpoint format {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ConfigError(
            f"checkpoint version {doc.get('version')!r} unsupported "
            f"(expected {FORMAT_VERSION})"
        )
    kind = doc.get("kind", "")
    if expect_kind is not None and kind != expect_kind:
        raise ConfigError(f"checkpoint kind {kind!r}, expected {expect_kind!r}")
    arrays = {name: _decode_array(spec) for name, spec in doc.get("arrays", {}).items()}
    return Checkpoint(kind=kind, meta=doc.get("meta", {}), arrays=arrays)

"""Versioned JSON checkpoints of named arrays.

Array payloads are stored as base64 of little-endian raw bytes so that a
save of identical arrays is byte-identical across runs.
"""
from __future__ import annotations

import base64
import json
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_arrays(arrays: Mapping[str, np.ndarray]) -> dict:
    out = {}
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        dt = a.dtype.newbyteorder("<")
        out[name] = {
            "shape": list(a.shape),
            "dtype": dt.str,
            "data": base64.b64encode(a.astype(dt).tobytes()).decode("ascii"),
        }
    return out


def decode_arrays(record: Mapping[str, dict]) -> Dict[str, np.ndarray]:
    out = {}
    for name, rec in record.items():
        raw = base64.b64decode(rec["data"])
        a = np.frombuffer(raw, dtype=np.dtype(rec["dtype"])).copy()
        out[name] = a.reshape(rec["shape"])
    return out


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    doc = {"version": FORMAT_VERSION, "meta": meta or {}, "tensors": encode_arrays(arrays)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path, expected: Optional[Mapping[str, Tuple[int, ...]]] = None
                    ) -> Tuple[Dict[str, np.ndarray], dict]:
    """Load arrays and metadata; with ``expected``, reject any shape mismatch."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    arrays = decode_arrays(doc["tensors"])
    if expected is not None:
        for name, shape in expected.items():
            if name not in arrays:
                raise CheckpointError(f"checkpoint lacks tensor {name!r}")
            if tuple(arrays[name].shape) != tuple(shape):
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {arrays[name].shape}, expected {tuple(shape)}")
    return arrays, doc.get("meta", {})

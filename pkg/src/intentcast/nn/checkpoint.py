"""Checkpoint file format: one JSON document holding hyperparameters and every
parameter tensor in full decimal (round-trip exact) precision.

Layout:
    {"format_version": 1,
     "hyperparams": {"d_h": ..., "heads": ..., "M": ..., "T_h": ..., "T_f": ...,
                     "alpha": ..., "gamma": ..., "si_enabled": ..., "activation": ...,
                     "rate_hz": ...},
     "params": {"name": {"shape": [...], "data": [...]}, ...}}

Keys are emitted sorted so byte-identical inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import CHECKPOINT_FORMAT_VERSION, ParamRegistry
from .tensor import default_dtype


class CheckpointError(ValueError):
    pass


def checkpoint_document(reg: ParamRegistry, hyperparams: dict) -> dict:
    params = {}
    for name, tensor in reg.items():
        params[name] = {
            "shape": list(tensor.shape),
            "data": np.asarray(tensor.data, dtype=np.float64).reshape(-1).tolist(),
        }
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "hyperparams": hyperparams,
        "params": params,
    }


def save_checkpoint(path: str | Path, reg: ParamRegistry, hyperparams: dict) -> None:
    doc = checkpoint_document(reg, hyperparams)
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def read_checkpoint(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"not a checkpoint file: {exc}") from exc
    for key in ("format_version", "hyperparams", "params"):
        if key not in doc:
            raise CheckpointError(f"checkpoint missing key {key!r}")
    if doc["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {doc['format_version']}"
        )
    return doc


def fill_registry(reg: ParamRegistry, doc: dict) -> ParamRegistry:
    """Overwrite a freshly built registry with checkpoint data; the name sets
    and shapes must agree exactly."""
    stored = doc["params"]
    missing = sorted(set(reg.names()) - set(stored))
    extra = sorted(set(stored) - set(reg.names()))
    if missing or extra:
        raise CheckpointError(
            f"parameter names disagree with checkpoint (missing={missing[:4]}, "
            f"unexpected={extra[:4]})"
        )
    for name, tensor in reg.items():
        entry = stored[name]
        if tuple(entry["shape"]) != tensor.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {entry['shape']} "
                f"vs expected {list(tensor.shape)}"
            )
        tensor.data = np.asarray(entry["data"], dtype=default_dtype()).reshape(tensor.shape)
    return reg

"""Checkpoint container: named parameters with shape metadata, config echo,
schedule, normalization stats, and a content hash. npz-based, so parameter
arrays round-trip bit-exactly; the hash is verified on load.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import NormStats
from ..errors import DataError
from .diffusion import DiffusionSchedule
from .network import ModelConfig

CHECKPOINT_VERSION = 1


def content_hash(params: dict[str, np.ndarray], meta: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    h.update(json.dumps(meta, sort_keys=True).encode())
    return h.hexdigest()


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: ModelConfig
    schedule: DiffusionSchedule | None  # None for the non-diffusion baseline
    norm_stats: NormStats
    meta: dict = field(default_factory=dict)
    hash: str = ""


def save_checkpoint(
    path: str | Path,
    params: dict[str, np.ndarray],
    config: ModelConfig,
    schedule: DiffusionSchedule | None,
    norm_stats: NormStats,
    meta: dict | None = None,
    volatile: dict | None = None,
) -> str:
    """Write a checkpoint; returns its content hash.

    ``volatile`` metadata (timings, host facts) is stored but excluded from
    the hash so (seed, data, config) -> bit-identical hash holds.
    """
    meta = dict(meta or {})
    doc = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "norm_stats": norm_stats.to_dict(),
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "dtypes": {k: str(v.dtype) for k, v in params.items()},
        "meta": meta,
    }
    digest = content_hash(params, doc)
    doc["content_hash"] = digest
    doc["volatile"] = dict(volatile or {})
    arrays = {f"param/{k}": v for k, v in params.items()}
    if schedule is not None:
        arrays["schedule/betas"] = schedule.betas
        arrays["schedule/alpha_bars"] = schedule.alpha_bars
    arrays["__doc__"] = np.frombuffer(json.dumps(doc, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())
    return digest


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        with np.load(path) as z:
            arrays = {k: z[k] for k in z.files}
    except Exception as e:  # zipfile/format errors
        raise DataError(f"{path}: not a readable checkpoint ({e})") from e
    if "__doc__" not in arrays:
        raise DataError(f"{path}: missing checkpoint metadata")
    doc = json.loads(bytes(arrays.pop("__doc__")).decode())
    if doc.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version")
    stored_hash = doc.pop("content_hash", None)
    volatile = doc.pop("volatile", {})
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    digest = content_hash(params, doc)
    if stored_hash != digest:
        raise DataError(f"{path}: content hash mismatch (corrupt checkpoint)")
    schedule = None
    if "schedule/betas" in arrays:
        schedule = DiffusionSchedule(arrays["schedule/betas"], arrays["schedule/alpha_bars"])
    meta = dict(doc.get("meta", {}))
    meta.update(volatile)
    return Checkpoint(
        params=params,
        config=ModelConfig.from_dict(doc["config"]),
        schedule=schedule,
        norm_stats=NormStats.from_dict(doc["norm_stats"]),
        meta=meta,
        hash=digest,
    )

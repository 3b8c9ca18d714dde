"""Checksummed JSON checkpoints for trained model parameters.

One file holds one model: a shape manifest plus a single flat float64
little-endian payload (base64), so a load reproduces predictions bit for
bit or fails loudly.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import affinity
from .features import FeatureStats

__all__ = [
    "FORMAT_VERSION",
    "Checkpoint",
    "CheckpointError",
    "ChecksumError",
    "load_checkpoint",
    "save_checkpoint",
]

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


class ChecksumError(CheckpointError):
    """Payload bytes do not match the recorded digest (or cannot be read)."""


@dataclass(frozen=True)
class Checkpoint:
    kind: str
    params: affinity.ScorerParams | affinity.ComParams
    train_config: dict | None
    seed: int


def _arrays_of(params) -> tuple[str, list[np.ndarray]]:
    if isinstance(params, affinity.ScorerParams):
        return "scorer", affinity.scorer_arrays(params)
    if isinstance(params, affinity.ComParams):
        return "com", affinity.com_arrays(params)
    raise CheckpointError(f"cannot checkpoint a {type(params).__name__}")


def save_checkpoint(params, path, *, train_config: dict | None = None, seed: int = 0) -> None:
    """Write params to `path`; the payload is one float64-LE array covering
    every weight in definition order."""
    kind, arrays = _arrays_of(params)
    flat = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
    raw = flat.astype("<f8").tobytes()
    obj = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "shapes": [list(np.asarray(a).shape) for a in arrays],
        "payload": base64.b64encode(raw).decode("ascii"),
        "checksum": hashlib.sha256(raw).hexdigest(),
        "stats": (
            {"mean": params.stats.mean.tolist(), "std": params.stats.std.tolist()}
            if kind == "scorer"
            else None
        ),
        "train_config": train_config,
        "seed": seed,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _template(kind: str, stats: FeatureStats | None):
    # template arrays are fully overwritten; only shapes matter
    if kind == "scorer":
        return affinity.init_scorer(0, stats)
    if kind == "com":
        return affinity.init_com(0)
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def load_checkpoint(path, kind: str | None = None) -> Checkpoint:
    """Read and verify a checkpoint; `kind` (scorer | com) asserts what the
    caller expects to find."""
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            obj = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ChecksumError(f"unreadable checkpoint {path}: {exc}") from exc

    version = obj.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"format version {version!r}, expected {FORMAT_VERSION}")
    file_kind = obj.get("kind")
    if kind is not None and file_kind != kind:
        raise CheckpointError(f"kind mismatch: file holds {file_kind!r}, expected {kind!r}")

    try:
        raw = base64.b64decode(obj["payload"], validate=True)
    except Exception as exc:
        raise ChecksumError(f"payload is not valid base64: {exc}") from exc
    if hashlib.sha256(raw).hexdigest() != obj.get("checksum"):
        raise ChecksumError("payload does not match its recorded checksum")

    stats = None
    if obj.get("stats") is not None:
        stats = FeatureStats(
            np.asarray(obj["stats"]["mean"], dtype=np.float64),
            np.asarray(obj["stats"]["std"], dtype=np.float64),
        )
    params0 = _template(file_kind, stats)
    _, template_arrays = _arrays_of(params0)

    shapes = [tuple(s) for s in obj["shapes"]]
    expect = [np.asarray(a).shape for a in template_arrays]
    if shapes != expect:
        raise CheckpointError(f"shape manifest {shapes} does not match model {expect}")
    total = sum(int(np.prod(s)) for s in shapes)
    flat = np.frombuffer(raw, dtype="<f8")
    if flat.size != total:
        raise CheckpointError(f"payload holds {flat.size} values, shapes need {total}")

    arrays = []
    offset = 0
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(flat[offset : offset + n].reshape(s).astype(np.float64))
        offset += n
    if file_kind == "scorer":
        params = affinity._lift_scorer(params0, arrays)
    else:
        params = affinity._lift_com(params0, arrays)
    return Checkpoint(
        kind=file_kind,
        params=params,
        train_config=obj.get("train_config"),
        seed=int(obj.get("seed", 0)),
    )

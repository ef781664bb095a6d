"""Binary checkpoint container: magic, version, JSON metadata, float32 arrays."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import ScorerConfig, init_params
from .optim import AdamState

MAGIC = b"MTDC"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")  # magic, version, metadata length


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    scorer: ScorerConfig
    step: int
    adam: AdamState | None = None


def _array_index(arrays: dict[str, np.ndarray]) -> list[dict]:
    return [{"name": k, "shape": list(v.shape)} for k, v in sorted(arrays.items())]


def checkpoint_save(path: Path | str, params: dict[str, np.ndarray],
                    scorer: ScorerConfig, step: int,
                    adam: AdamState | None = None) -> None:
    arrays: dict[str, np.ndarray] = {f"params/{k}": v for k, v in params.items()}
    meta: dict = {"scorer": scorer.to_dict(), "step": int(step), "adam": None}
    if adam is not None:
        meta["adam"] = {"step": adam.step, "beta1": adam.beta1,
                        "beta2": adam.beta2, "eps": adam.eps}
        arrays.update({f"adam.m/{k}": v for k, v in adam.m.items()})
        arrays.update({f"adam.v/{k}": v for k, v in adam.v.items()})
    meta["arrays"] = _array_index(arrays)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for entry in meta["arrays"]:
            fh.write(np.ascontiguousarray(arrays[entry["name"]], dtype="<f4").tobytes())


def checkpoint_load(path: Path | str) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated checkpoint header")
    magic, version, meta_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic bytes {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    offset = _HEADER.size
    if len(raw) < offset + meta_len:
        raise DataError(f"{path}: truncated metadata")
    meta = json.loads(raw[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len

    arrays: dict[str, np.ndarray] = {}
    for entry in meta["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if len(raw) < end:
            raise DataError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            raw[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")

    scorer = ScorerConfig.from_dict(meta["scorer"])
    params = {k[len("params/"):]: v for k, v in arrays.items()
              if k.startswith("params/")}
    expected = {k: v.shape for k, v in init_params(scorer, seed=0).items()}
    if set(params) != set(expected):
        raise DataError(f"{path}: parameter names do not match the embedded config")
    for k, v in params.items():
        if v.shape != expected[k]:
            raise DataError(f"{path}: array {k!r} has shape {v.shape}, config "
                            f"expects {expected[k]}")

    adam = None
    if meta.get("adam") is not None:
        a = meta["adam"]
        adam = AdamState(
            m={k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")},
            v={k[len("adam.v/"):]: v for k, v in arrays.items() if k.startswith("adam.v/")},
            step=int(a["step"]), beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
    return Checkpoint(params, scorer, int(meta["step"]), adam)

"""Checkpoint files: a JSON header followed by 64-byte aligned little-endian float32 tensors.

Layout::

    u64 header length (little-endian)
    header JSON (utf-8, sorted keys), zero-padded to a multiple of 64 bytes
    payload: each tensor at ``offset`` bytes from the payload start

The header holds the format version, the model config, a manifest of
``{name, shape, offset}`` records and, for resumable checkpoints, the
optimizer scalars. Adam moments are stored as tensors under ``optim.m/`` and
``optim.v/`` prefixes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError
from .model import CrossViewNet, ModelConfig
from .optim import OptimState

FORMAT_VERSION = 1
ALIGN = 64
_LEN = struct.Struct("<Q")
_M, _V = "optim.m/", "optim.v/"
_OPTIM_SCALARS = ("base_lr", "weight_decay", "betas", "eps", "warmup_steps", "total_steps",
                  "warmup_lr", "clip_norm", "step")


def _pad(n: int) -> int:
    return -n % ALIGN


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    optim: dict | None = None
    extra: dict = field(default_factory=dict)

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.config)


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    manifest, offset = [], 0
    arrays = []
    for name, arr in ckpt.tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        arrays.append(a)
        offset += a.nbytes + _pad(a.nbytes)
    header = {"version": FORMAT_VERSION, "config": ckpt.config, "tensors": manifest,
              "optim": ckpt.optim, "extra": ckpt.extra}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    blob += b"\0" * _pad(_LEN.size + len(blob))
    with open(path, "wb") as f:
        f.write(_LEN.pack(len(blob)))
        f.write(blob)
        for a in arrays:
            f.write(a.tobytes())
            f.write(b"\0" * _pad(a.nbytes))


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"{path}: cannot read checkpoint ({e.strerror})") from e
    if len(raw) < _LEN.size:
        raise DataError(f"{path}: truncated checkpoint header at offset 0")
    (hlen,) = _LEN.unpack_from(raw, 0)
    start = _LEN.size + hlen
    if start > len(raw):
        raise DataError(f"{path}: header length {hlen} runs past end of file")
    try:
        header = json.loads(raw[_LEN.size:start].rstrip(b"\0").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: malformed checkpoint header ({e})") from e
    if header.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}: checkpoint version {header.get('version')} != {FORMAT_VERSION}")
    tensors = {}
    for rec in header["tensors"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        lo = start + rec["offset"]
        if lo + 4 * count > len(raw):
            raise DataError(f"{path}: tensor {rec['name']} at offset {lo} runs past end of file")
        tensors[rec["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=lo).reshape(shape).copy()
    return Checkpoint(header["config"], tensors, header.get("optim"), header.get("extra") or {})


def checkpoint_save(model: CrossViewNet, path, optim: OptimState | None = None,
                    extra: dict | None = None) -> None:
    tensors = dict(model.state_dict())
    scalars = None
    if optim is not None:
        scalars = {k: getattr(optim, k) for k in _OPTIM_SCALARS}
        scalars["betas"] = list(scalars["betas"])
        for name in optim.exp_avg:
            tensors[_M + name] = optim.exp_avg[name]
            tensors[_V + name] = optim.exp_avg_sq[name]
    write_checkpoint(path, Checkpoint(model.cfg.to_dict(), tensors, scalars, extra or {}))


def checkpoint_load(path, model: CrossViewNet | None = None):
    """Restore a model (built from the stored config when ``model`` is None) and its optimizer state.

    Returns ``(model, optim_or_None, extra)``.
    """
    ckpt = read_checkpoint(path)
    if model is None:
        model = CrossViewNet(ckpt.model_config(), seed=None)
    params = {k: v for k, v in ckpt.tensors.items() if not k.startswith("optim.")}
    expected = dict(model.named_parameters())
    for name in params:
        if name not in expected:
            raise DimensionError(f"checkpoint tensor {name} has no counterpart in the model")
    model.load_state_dict(params)
    optim = None
    if ckpt.optim is not None:
        scalars = dict(ckpt.optim)
        scalars["betas"] = tuple(scalars["betas"])
        optim = OptimState(**scalars)
        dtype = next(iter(expected.values())).dtype
        for k, v in ckpt.tensors.items():
            if k.startswith(_M):
                optim.exp_avg[k[len(_M):]] = v.astype(dtype)
            elif k.startswith(_V):
                optim.exp_avg_sq[k[len(_V):]] = v.astype(dtype)
    return model, optim, ckpt.extra

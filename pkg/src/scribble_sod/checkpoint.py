"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"SCWS1"
    u32 config_len, config JSON (utf-8)
    u32 n_params,  n_params x array
    u32 n_stats,   n_stats  x array
    [u32 n_extra,  n_extra  x array]     optional trainer state

    array := u16 name_len, name (utf-8), u8 ndim, ndim x u32 dims, float64 LE data
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .config import NetworkConfig, TrainConfig
from .network import SaliencyNet

MAGIC = b"SCWS1"


class CheckpointError(ValueError):
    pass


def _write_arrays(buf: io.BytesIO, arrays: dict) -> None:
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def _read_arrays(f) -> dict:
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(f, 2))
        name = _read_exact(f, nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(f, 1))
        shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(_read_exact(f, 8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    return out


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, net: SaliencyNet, config: dict, extra: Optional[dict] = None) -> None:
    params, stats = net.state_arrays()
    buf = io.BytesIO()
    buf.write(MAGIC)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    _write_arrays(buf, params)
    _write_arrays(buf, stats)
    if extra:
        _write_arrays(buf, extra)
    atomic_write(path, buf.getvalue())


def read_checkpoint(path) -> tuple:
    """Return ``(config_dict, params, stats, extra)`` without building a network."""
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (clen,) = struct.unpack("<I", _read_exact(f, 4))
        config = json.loads(_read_exact(f, clen).decode("utf-8"))
        params = _read_arrays(f)
        stats = _read_arrays(f)
        rest = io.BytesIO(f.read())
    extra = _read_arrays(rest) if rest.getbuffer().nbytes else {}
    if rest.read(1):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")
    return config, params, stats, extra


def load_checkpoint(path) -> tuple:
    """Rebuild the network a checkpoint describes; returns ``(net, TrainConfig, extra)``."""
    config, params, stats, extra = read_checkpoint(path)
    cfg = TrainConfig.from_dict(config)
    net = SaliencyNet(cfg.network, seed=cfg.seed, enable_aggm=cfg.enable_aggm)
    try:
        net.load_arrays(params, stats)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return net, cfg, extra

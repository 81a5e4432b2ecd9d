"""Binary checkpoint container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"VESPACKP"
    offset 8   uint32    format version (currently 1)
    offset 12  uint32    header length H in bytes
    offset 16  H bytes   UTF-8 JSON header, keys sorted:
                           model_config   ModelConfig fields
                           params         [[name, shape], ...] in canonical order
                           priors         {"count": C, "fingerprint": str}
                           optim          null or {"t", "beta1", "beta2", "eps"}
    then       float64   every parameter array, row-major, in ``params`` order
    then       float64   C attribute prior ratios
    then       float64   (only if optim) Adam first moments in ``params`` order,
                         then second moments in the same order
    last 4     uint32    CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import AttributePriors, ModelConfig, ModelParams, param_group
from .training import OptimState

MAGIC = b"VESPACKP"
VERSION = 1
_F8 = np.dtype("<f8")


class CheckpointFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointVersionError(ValueError):
    pass


class CheckpointShapeError(ValueError):
    def __init__(self, group: str, message: str):
        super().__init__(f"parameter group {group!r}: {message}")
        self.group = group


def to_bytes(params: ModelParams, priors: AttributePriors, state: OptimState | None = None) -> bytes:
    cfg = params.config
    names = cfg.param_names()
    header = {
        "model_config": cfg.to_dict(),
        "params": [[n, list(params.arrays[n].shape)] for n in names],
        "priors": {"count": int(len(priors.ratios)), "fingerprint": priors.fingerprint},
        "optim": None
        if state is None
        else {"t": state.t, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes]
    for n in names:
        chunks.append(np.ascontiguousarray(params.arrays[n], dtype=_F8).tobytes())
    chunks.append(np.ascontiguousarray(priors.ratios, dtype=_F8).tobytes())
    if state is not None:
        for table in (state.m, state.v):
            for n in names:
                chunks.append(np.ascontiguousarray(table[n], dtype=_F8).tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes, expected: ModelConfig | None = None):
    """Parse a checkpoint; returns ``(params, priors, state_or_None)``."""
    if len(data) < 16:
        raise CheckpointFormatError("file too short for the fixed header", len(data))
    if data[:8] != MAGIC:
        raise CheckpointFormatError("bad magic bytes", 0)
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this reader supports {VERSION}")
    if len(data) < 16 + hlen + 4:
        raise CheckpointFormatError("truncated inside the JSON header", len(data))
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    try:
        header = json.loads(data[16 : 16 + hlen].decode())
        cfg = ModelConfig.from_dict(header["model_config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}", 16) from None

    offset = 16 + hlen
    end = len(data) - 4

    def take(count: int, what: str) -> np.ndarray:
        nonlocal offset
        nbytes = count * 8
        if offset + nbytes > end:
            raise CheckpointFormatError(f"truncated while reading {what}", offset)
        arr = np.frombuffer(data, dtype=_F8, count=count, offset=offset).astype(np.float64)
        offset += nbytes
        return arr

    entries = [(n, tuple(s)) for n, s in header["params"]]
    arrays = {}
    for n, shape in entries:
        arrays[n] = take(int(np.prod(shape)), n).reshape(shape)
    priors = AttributePriors(take(header["priors"]["count"], "priors"), header["priors"]["fingerprint"])
    state = None
    if header["optim"] is not None:
        o = header["optim"]
        m = {n: take(int(np.prod(s)), f"adam m {n}").reshape(s) for n, s in entries}
        v = {n: take(int(np.prod(s)), f"adam v {n}").reshape(s) for n, s in entries}
        state = OptimState(m, v, int(o["t"]), o["beta1"], o["beta2"], o["eps"])
    if offset != end:
        raise CheckpointFormatError(f"{end - offset} unexpected trailing bytes", offset)
    if zlib.crc32(data[:end]) != crc:
        raise CheckpointFormatError("CRC mismatch", end)

    params = ModelParams(cfg, arrays)
    _validate_shapes(params, cfg)
    if expected is not None:
        _validate_shapes(params, expected)
    return params, priors, state


def _validate_shapes(params: ModelParams, cfg: ModelConfig) -> None:
    want = {}
    for group, layers in cfg.layer_shapes().items():
        for i, (fi, fo) in enumerate(layers):
            want[f"{group}.{i}.W"] = (fi, fo)
            want[f"{group}.{i}.b"] = (fo,)
    for name, shape in want.items():
        if name not in params.arrays:
            raise CheckpointShapeError(param_group(name), f"missing array {name}")
        if params.arrays[name].shape != shape:
            raise CheckpointShapeError(
                param_group(name), f"{name} has shape {params.arrays[name].shape}, expected {shape}"
            )
    extra = set(params.arrays) - set(want)
    if extra:
        name = sorted(extra)[0]
        raise CheckpointShapeError(param_group(name), f"unexpected array {name}")


def save_checkpoint(path, params: ModelParams, priors: AttributePriors, state: OptimState | None = None) -> None:
    Path(path).write_bytes(to_bytes(params, priors, state))


def load_checkpoint(path, expected: ModelConfig | None = None):
    return from_bytes(Path(path).read_bytes(), expected)

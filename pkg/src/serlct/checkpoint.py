"""Versioned little-endian binary checkpoints.

Layout (all integers little-endian)::

    magic b"SERCKPT" | u8 version
    u32 n | model-config JSON
    u32 n | train-config JSON
    u32 epoch
    registry: model parameters and buffers
    u64 optimizer step
    registry: optimizer moments
    u32 n | rng bit-generator state JSON
    u32 n | extra JSON

A registry is ``u32 count`` followed by, per array: ``u16 name length``,
UTF-8 name, ``u8 rank``, ``rank x u32`` dims, ``u8 dtype code``, raw payload.
"""
from __future__ import annotations

import io
import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SERCKPT"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} at byte offset {offset}")


@dataclass
class Checkpoint:
    model_config: dict
    train_config: dict = field(default_factory=dict)
    epoch: int = 0
    arrays: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    optimizer_step: int = 0
    optimizer_arrays: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    rng_state: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


# -- writing ---------------------------------------------------------------------

def _write_blob(buf: io.BytesIO, data: bytes) -> None:
    buf.write(struct.pack("<I", len(data)))
    buf.write(data)


def _write_json(buf: io.BytesIO, obj) -> None:
    _write_blob(buf, json.dumps(obj, sort_keys=True).encode())


def _write_registry(buf: io.BytesIO, arrays: dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        code = _CODES[arr.dtype]
        buf.write(struct.pack("<B", code))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", VERSION))
    _write_json(buf, ckpt.model_config)
    _write_json(buf, ckpt.train_config)
    buf.write(struct.pack("<I", ckpt.epoch))
    _write_registry(buf, ckpt.arrays)
    buf.write(struct.pack("<Q", ckpt.optimizer_step))
    _write_registry(buf, ckpt.optimizer_arrays)
    _write_json(buf, ckpt.rng_state)
    _write_json(buf, ckpt.extra)
    return buf.getvalue()


def save(path, ckpt: Checkpoint) -> None:
    """Write atomically via a sibling temp file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    os.replace(tmp, path)


# -- reading ---------------------------------------------------------------------

class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated {what}: need {n} bytes, {len(self.raw) - self.pos} left", self.pos)
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def json(self, what: str):
        (n,) = self.unpack("<I", f"{what} length")
        start = self.pos
        blob = self.take(n, what)
        try:
            return json.loads(blob)
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"malformed {what} JSON ({exc})", start) from None

    def registry(self, what: str) -> "OrderedDict[str, np.ndarray]":
        (count,) = self.unpack("<I", f"{what} count")
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (nlen,) = self.unpack("<H", f"{what} name length")
            start = self.pos
            try:
                name = self.take(nlen, f"{what} name").decode()
            except UnicodeDecodeError:
                raise CheckpointError(f"{what} name is not UTF-8", start) from None
            (rank,) = self.unpack("<B", f"{name} rank")
            dims = self.unpack(f"<{rank}I", f"{name} dims")
            code_at = self.pos
            (code,) = self.unpack("<B", f"{name} dtype")
            if code not in _DTYPES:
                raise CheckpointError(f"{name}: unknown dtype code {code}", code_at)
            dt = _DTYPES[code]
            n = int(np.prod(dims, dtype=np.int64))
            payload = self.take(n * dt.itemsize, f"{name} payload")
            out[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
        return out


def loads(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint", 0)
    (version,) = r.unpack("<B", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})", len(MAGIC))
    ckpt = Checkpoint(model_config=r.json("model config"))
    ckpt.train_config = r.json("train config")
    (ckpt.epoch,) = r.unpack("<I", "epoch")
    ckpt.arrays = r.registry("parameter")
    (ckpt.optimizer_step,) = r.unpack("<Q", "optimizer step")
    ckpt.optimizer_arrays = r.registry("optimizer moment")
    ckpt.rng_state = r.json("rng state")
    ckpt.extra = r.json("extra")
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes", r.pos)
    return ckpt


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())


# -- rng helpers -------------------------------------------------------------------

def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)

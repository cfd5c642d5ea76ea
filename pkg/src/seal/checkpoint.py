"""Binary checkpoint format.

Layout (all integers little-endian):

    8s   magic "SEALCKPT"
    u32  format version (currently 1)
    u8   payload kind (0 = plain params, 1 = reference bank)
    u64  rng seed record
    u32  extras length, then that many bytes of UTF-8 JSON
    u32  layer count, then per layer: u8 kind id, u8 int count, i32 * count
    f32  payload: per layer, trainable arrays in canonical key order,
         then batchnorm running stats (mean, var)
    u32  CRC32 of every preceding byte

Round trips are bit-exact for float32 parameters.
"""
from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from . import layers as L
from .errors import DataFormatError
from .network import NetworkParams

MAGIC = b"SEALCKPT"
VERSION = 1
KIND_PARAMS = 0
KIND_BANK = 1

_ID_TO_KIND = {v: k for k, v in L.KIND_IDS.items()}


def _array_shapes(spec: L.LayerSpec) -> list[tuple[str, tuple[int, ...]]]:
    if spec.kind == "dense":
        fin, fout = spec.dims
        return [("w", (fin, fout)), ("b", (fout,))]
    if spec.kind == "conv2d":
        cin, cout, k, _ = spec.dims
        return [("w", (cout, cin, k, k)), ("b", (cout,))]
    if spec.kind == "batchnorm":
        c = spec.dims[0]
        return [("gamma", (c,)), ("beta", (c,))]
    return []


def _stat_shapes(spec: L.LayerSpec) -> list[tuple[str, tuple[int, ...]]]:
    if spec.kind == "batchnorm":
        c = spec.dims[0]
        return [("mean", (c,)), ("var", (c,))]
    return []


def save_checkpoint(path, specs: list[L.LayerSpec], params: NetworkParams,
                    seed: int = 0, kind: int = KIND_PARAMS, extras: dict | None = None):
    parts = [MAGIC, struct.pack("<IBQ", VERSION, kind, seed & 0xFFFFFFFFFFFFFFFF)]
    blob = json.dumps(extras or {}, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(specs)))
    for spec in specs:
        parts.append(struct.pack("<BB", L.KIND_IDS[spec.kind], len(spec.dims)))
        parts.append(struct.pack(f"<{len(spec.dims)}i", *spec.dims))
    for i, spec in enumerate(specs):
        for name, shape in _array_shapes(spec):
            a = params.arrays[i][name]
            if a.dtype != np.float32:
                raise DataFormatError(
                    f"checkpoint payload must be float32, layer {i} {name!r} is {a.dtype}")
            if a.shape != shape:
                raise DataFormatError(f"layer {i} {name!r}: shape {a.shape} != {shape}")
            parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
        for name, shape in _stat_shapes(spec):
            parts.append(np.ascontiguousarray(
                params.stats[i][name], dtype="<f4").tobytes())
    body = b"".join(parts)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(body)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataFormatError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Returns (specs, params, seed, kind, extras). Verifies CRC before use."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < len(MAGIC) + 8:
        raise DataFormatError(f"file too short ({len(buf)} bytes) to be a checkpoint")
    if buf[:len(MAGIC)] != MAGIC:
        raise DataFormatError(f"bad magic at offset 0: {buf[:8]!r}")
    stored_crc = struct.unpack("<I", buf[-4:])[0]
    actual_crc = zlib.crc32(buf[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise DataFormatError(
            f"CRC mismatch at offset {len(buf) - 4}: stored {stored_crc:#x}, "
            f"computed {actual_crc:#x}")
    r = _Reader(buf[:-4])
    r.take(len(MAGIC))
    version, kind, seed = r.unpack("<IBQ")
    if version != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    (extras_len,) = r.unpack("<I")
    extras = json.loads(r.take(extras_len).decode())
    (n_layers,) = r.unpack("<I")
    specs = []
    for _ in range(n_layers):
        kind_id, n_ints = r.unpack("<BB")
        if kind_id not in _ID_TO_KIND:
            raise DataFormatError(f"unknown layer kind id {kind_id} at offset {r.pos - 2}")
        dims = r.unpack(f"<{n_ints}i")
        specs.append(L.LayerSpec(_ID_TO_KIND[kind_id], tuple(dims)))
    arrays, stats = [], []
    for i, spec in enumerate(specs):
        a: dict[str, np.ndarray] = {}
        s: dict[str, np.ndarray] = {}
        for name, shape in _array_shapes(spec):
            n = int(np.prod(shape))
            a[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).copy()
        for name, shape in _stat_shapes(spec):
            n = int(np.prod(shape))
            s[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).copy()
        arrays.append(a)
        stats.append(s)
    if r.pos != len(r.buf):
        raise DataFormatError(f"{len(r.buf) - r.pos} trailing bytes at offset {r.pos}")
    return specs, NetworkParams(arrays, stats), seed, kind, extras

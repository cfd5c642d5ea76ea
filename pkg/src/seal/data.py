"""Dataset ingestion: IDX and CIFAR binaries, delimited tables, and a
deterministic synthetic image generator for desk-scale runs.

All loaders return float32 features in [0, 1] with shape (n, c, h, w) and
int64 labels, in file order. Relative paths resolve against SEAL_DATA_DIR
when that env var is set.
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataFormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073        # 1 label byte + 3*32*32 pixel bytes

DATASET_KINDS = ("synthetic", "idx", "cifar", "table")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.x.ndim != 4 or len(self.x) != len(self.y):
            raise ConfigError(f"dataset needs x (n,c,h,w) and matching y; "
                              f"got {self.x.shape} / {self.y.shape}")

    def __len__(self):
        return len(self.y)


def resolve_data_path(path) -> Path:
    p = Path(path)
    root = os.environ.get("SEAL_DATA_DIR")
    if not p.is_absolute() and root and not p.exists():
        return Path(root) / p
    return p


def _read_bytes(path) -> bytes:
    p = resolve_data_path(path)
    if not p.exists():
        raise DataFormatError(f"dataset file not found: {p}")
    if p.suffix == ".gz":
        with gzip.open(p, "rb") as fh:
            return fh.read()
    return p.read_bytes()


def load_idx_images(path) -> np.ndarray:
    """Big-endian IDX image file -> float32 (n, 1, rows, cols) in [0, 1]."""
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DataFormatError(
            f"{path}: truncated IDX header, {len(raw)} bytes at byte 0")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(
            f"{path}: bad IDX image magic 0x{magic:08x} at byte 0 "
            f"(expected 0x{IDX_IMAGE_MAGIC:08x})")
    expected = 16 + n * rows * cols
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: payload ends at byte {len(raw)}, expected {expected}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    x = pixels.reshape(n, 1, rows, cols).astype(np.float32) / 255.0
    return x


def load_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DataFormatError(
            f"{path}: truncated IDX header, {len(raw)} bytes at byte 0")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABEL_MAGIC:
        raise DataFormatError(
            f"{path}: bad IDX label magic 0x{magic:08x} at byte 0 "
            f"(expected 0x{IDX_LABEL_MAGIC:08x})")
    if len(raw) != 8 + n:
        raise DataFormatError(
            f"{path}: payload ends at byte {len(raw)}, expected {8 + n}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def load_idx(images_path, labels_path) -> Dataset:
    x = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if len(x) != len(y):
        raise DataFormatError(f"IDX pair mismatch: {len(x)} images vs "
                              f"{len(y)} labels")
    return Dataset(x, y, int(y.max()) + 1)


def load_cifar(paths, num_classes: int = 10) -> Dataset:
    """CIFAR binary batches: 3073-byte records of label + RGB planes."""
    xs, ys = [], []
    for path in ([paths] if isinstance(paths, (str, Path)) else paths):
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataFormatError(
                f"{path}: size {len(raw)} is not a positive multiple of "
                f"{CIFAR_RECORD}; trailing fragment starts at byte "
                f"{len(raw) - len(raw) % CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0)
    return Dataset(np.concatenate(xs), np.concatenate(ys), num_classes)


def load_table(path, delimiter=None) -> Dataset:
    """Delimited numeric table, last column = integer label. Features are
    min-max scaled to [0, 1] and zero-padded into the smallest square."""
    p = resolve_data_path(path)
    if not p.exists():
        raise DataFormatError(f"dataset file not found: {p}")
    try:
        body = np.loadtxt(p, delimiter=delimiter, ndmin=2)
    except ValueError:
        try:
            body = np.loadtxt(p, delimiter=",", ndmin=2)
        except ValueError as err:
            raise DataFormatError(f"{path}: unparseable table: {err}") from None
    if body.shape[1] < 2:
        raise DataFormatError(f"{path}: need >= 2 columns, got {body.shape[1]}")
    feats, labels = body[:, :-1], body[:, -1]
    if not np.allclose(labels, np.round(labels)) or labels.min() < 0:
        raise DataFormatError(f"{path}: last column must hold labels >= 0")
    lo, hi = feats.min(axis=0), feats.max(axis=0)
    feats = (feats - lo) / np.where(hi > lo, hi - lo, 1.0)
    side = int(np.ceil(np.sqrt(feats.shape[1])))
    x = np.zeros((len(feats), 1, side, side), dtype=np.float32)
    x.reshape(len(feats), -1)[:, :feats.shape[1]] = feats
    y = labels.astype(np.int64)
    return Dataset(x, y, int(y.max()) + 1)


def synthetic_dataset(num_classes: int, samples: int, seed: int,
                      shape=(1, 28, 28), noise: float = 0.25,
                      max_shift: int = 2) -> Dataset:
    """Smoothed random class prototypes + per-sample shift and pixel noise.

    Labels come out balanced (counts differ by at most 1), which keeps the
    stratified task splits well-posed even for small pools.
    """
    if num_classes < 2 or samples < num_classes:
        raise ConfigError("need >= 2 classes and at least one sample each")
    rng = np.random.default_rng(seed)
    c, h, w = shape
    protos = rng.random((num_classes, c, h, w))
    protos = ndimage.uniform_filter(protos, size=(1, 1, 3, 3), mode="wrap")
    y = np.arange(samples) % num_classes
    rng.shuffle(y)
    x = protos[y]
    shifts = rng.integers(-max_shift, max_shift + 1, size=(samples, 2))
    x = np.stack([np.roll(img, tuple(s), axis=(1, 2))
                  for img, s in zip(x, shifts)])
    x = x + noise * rng.standard_normal(x.shape)
    x = np.clip(x, 0.0, 1.0).astype(np.float32)
    return Dataset(x, y.astype(np.int64), num_classes)


def load_dataset(kind: str, params: dict):
    """Dispatch to a loader; returns (train Dataset, test Dataset)."""
    if kind == "synthetic":
        classes = int(params.get("classes", 10))
        seed = int(params.get("seed", 0))
        side = int(params.get("side", 28))
        noise = float(params.get("noise", 0.25))
        n_train = int(params.get("train_samples", 1500))
        n_test = int(params.get("test_samples", 500))
        whole = synthetic_dataset(classes, n_train + n_test, seed,
                                  shape=(1, side, side), noise=noise)
        train = Dataset(whole.x[:n_train], whole.y[:n_train], classes)
        test = Dataset(whole.x[n_train:], whole.y[n_train:], classes)
        return train, test
    if kind == "idx":
        return (load_idx(params["train_images"], params["train_labels"]),
                load_idx(params["test_images"], params["test_labels"]))
    if kind == "cifar":
        batches = str(params["train_batches"]).split(",")
        train = load_cifar([b.strip() for b in batches])
        test = load_cifar(params["test_batch"])
        return train, test
    if kind == "table":
        train = load_table(params["train_path"])
        test = load_table(params["test_path"])
        return train, test
    raise ConfigError(f"unknown dataset kind {kind!r}; "
                      f"expected one of {DATASET_KINDS}")

import gzip
import struct

import numpy as np
import pytest

from seal.data import (CIFAR_RECORD, Dataset, load_cifar, load_dataset,
                       load_idx, load_idx_images, load_idx_labels, load_table,
                       synthetic_dataset)
from seal.errors import ConfigError, DataFormatError


def idx_image_bytes(images):
    n, r, c = images.shape
    return struct.pack(">IIII", 0x00000803, n, r, c) + images.astype(np.uint8).tobytes()


def idx_label_bytes(labels):
    return struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)


def test_idx_images_decode_shape_and_range(tmp_path):
    imgs = np.arange(10 * 28 * 28, dtype=np.uint8).reshape(10, 28, 28)
    path = tmp_path / "img.idx"
    path.write_bytes(idx_image_bytes(imgs))
    x = load_idx_images(path)
    assert x.shape == (10, 1, 28, 28)
    assert x.dtype == np.float32
    assert x.min() >= 0.0 and x.max() <= 1.0
    assert x[3, 0, 5, 7] == pytest.approx(imgs[3, 5, 7] / 255.0)


def test_idx_gzip_transparent(tmp_path):
    imgs = np.zeros((2, 4, 4), dtype=np.uint8)
    path = tmp_path / "img.idx.gz"
    path.write_bytes(gzip.compress(idx_image_bytes(imgs)))
    assert load_idx_images(path).shape == (2, 1, 4, 4)


def test_idx_error_offsets(tmp_path):
    bad_magic = tmp_path / "bad.idx"
    bad_magic.write_bytes(struct.pack(">IIII", 0xDEADBEEF, 1, 2, 2) + b"\x00" * 4)
    with pytest.raises(DataFormatError, match="at byte 0"):
        load_idx_images(bad_magic)
    truncated = tmp_path / "short.idx"
    truncated.write_bytes(idx_image_bytes(np.zeros((2, 3, 3), np.uint8))[:-5])
    with pytest.raises(DataFormatError, match="expected 34"):
        load_idx_images(truncated)
    with pytest.raises(DataFormatError, match="not found"):
        load_idx_images(tmp_path / "missing.idx")


def test_idx_pair_and_label_checks(tmp_path):
    (tmp_path / "x.idx").write_bytes(
        idx_image_bytes(np.zeros((4, 2, 2), np.uint8)))
    (tmp_path / "y.idx").write_bytes(idx_label_bytes([0, 1, 2, 1]))
    ds = load_idx(tmp_path / "x.idx", tmp_path / "y.idx")
    assert len(ds) == 4 and ds.num_classes == 3
    assert ds.y.tolist() == [0, 1, 2, 1]
    (tmp_path / "y5.idx").write_bytes(idx_label_bytes([0, 1, 2, 1, 0]))
    with pytest.raises(DataFormatError, match="mismatch"):
        load_idx(tmp_path / "x.idx", tmp_path / "y5.idx")
    (tmp_path / "ybad.idx").write_bytes(
        struct.pack(">II", 0x00000803, 2) + b"\x00\x01")
    with pytest.raises(DataFormatError, match="label magic"):
        load_idx_labels(tmp_path / "ybad.idx")


def test_cifar_records(tmp_path):
    rng = np.random.default_rng(0)
    recs = rng.integers(0, 256, size=(5, CIFAR_RECORD), dtype=np.uint8)
    recs[:, 0] = [0, 3, 9, 1, 1]
    path = tmp_path / "batch.bin"
    path.write_bytes(recs.tobytes())
    ds = load_cifar(path)
    assert ds.x.shape == (5, 3, 32, 32)
    assert ds.y.tolist() == [0, 3, 9, 1, 1]
    assert ds.x[2, 1, 0, 0] == pytest.approx(recs[2, 1 + 1024] / 255.0)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(recs.tobytes() + b"\x00")
    with pytest.raises(DataFormatError, match=f"byte {5 * CIFAR_RECORD}"):
        load_cifar(bad)


def test_table_loader(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("0.0,2.0,0\n1.0,4.0,1\n0.5,3.0,2\n")
    ds = load_table(path)
    assert ds.x.shape == (3, 1, 2, 2)           # 2 features pad into a square
    assert ds.x.reshape(3, -1)[:, 2:].max() == 0.0
    assert np.allclose(ds.x.reshape(3, -1)[:, 0], [0.0, 1.0, 0.5])
    assert ds.y.tolist() == [0, 1, 2]
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0,0\n2.0,-1\n")
    with pytest.raises(DataFormatError, match="labels"):
        load_table(bad)


def test_synthetic_reproducible_and_balanced():
    a = synthetic_dataset(2, 100, seed=7)
    b = synthetic_dataset(2, 100, seed=7)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    c = synthetic_dataset(2, 100, seed=8)
    assert not np.array_equal(a.x, c.x)
    counts = np.bincount(a.y, minlength=2)
    assert abs(counts[0] - counts[1]) <= 1
    assert a.x.shape == (100, 1, 28, 28)
    assert a.x.min() >= 0.0 and a.x.max() <= 1.0
    with pytest.raises(ConfigError):
        synthetic_dataset(1, 100, seed=0)


def test_load_dataset_dispatch_and_env_root(tmp_path, monkeypatch):
    train, test = load_dataset("synthetic", {
        "classes": 3, "train_samples": 60, "test_samples": 30,
        "seed": 1, "side": 8})
    assert len(train) == 60 and len(test) == 30
    assert train.x.shape[2:] == (8, 8)
    with pytest.raises(ConfigError, match="unknown dataset kind"):
        load_dataset("imagenet", {})
    # relative paths fall back to SEAL_DATA_DIR
    (tmp_path / "y.idx").write_bytes(idx_label_bytes([1, 0]))
    monkeypatch.setenv("SEAL_DATA_DIR", str(tmp_path))
    monkeypatch.chdir(tmp_path.parent)
    assert load_idx_labels("y.idx").tolist() == [1, 0]


def test_dataset_shape_validation():
    with pytest.raises(ConfigError):
        Dataset(np.zeros((3, 4)), np.zeros(3, dtype=np.int64), 2)

import gzip
import struct

import numpy as np
import pytest

from photonic_gan.data import (
    BadMagicError,
    CountMismatchError,
    EmptySelectionError,
    MnistSet,
    Split,
    TruncatedFileError,
    filter_digit,
    load_mnist_dir,
    load_mnist_idx,
    pool_2x2,
    read_idx,
    write_idx,
)

from conftest import needs_mnist


def synthetic(tmp_path, n=12, seed=0, gz=False, prefix="train"):
    rng = np.random.default_rng(seed)
    imgs = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    ip = tmp_path / f"{prefix}-images-idx3-ubyte"
    lp = tmp_path / f"{prefix}-labels-idx1-ubyte"
    write_idx(ip, imgs)
    write_idx(lp, labels)
    if gz:
        for p in (ip, lp):
            data = p.read_bytes()
            p.unlink()
            with gzip.open(str(p) + ".gz", "wb") as fh:
                fh.write(data)
    return imgs, labels


def test_idx_round_trip(tmp_path):
    imgs, labels = synthetic(tmp_path)
    assert np.array_equal(read_idx(tmp_path / "train-images-idx3-ubyte", 0x803), imgs)
    assert np.array_equal(read_idx(tmp_path / "train-labels-idx1-ubyte", 0x801), labels)


def test_bad_magic(tmp_path):
    synthetic(tmp_path)
    with pytest.raises(BadMagicError):
        read_idx(tmp_path / "train-labels-idx1-ubyte", 0x803)


def test_truncated_payload(tmp_path):
    synthetic(tmp_path)
    p = tmp_path / "train-images-idx3-ubyte"
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(TruncatedFileError):
        read_idx(p, 0x803)


def test_truncated_header(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(struct.pack(">I", 0x803) + b"\x00\x00")
    with pytest.raises(TruncatedFileError):
        read_idx(p, 0x803)


def test_count_mismatch(tmp_path):
    synthetic(tmp_path, n=12)
    write_idx(tmp_path / "train-labels-idx1-ubyte", np.zeros(11, dtype=np.uint8))
    with pytest.raises(CountMismatchError):
        load_mnist_dir(tmp_path)


def test_gzip_and_scaling(tmp_path):
    imgs, labels = synthetic(tmp_path, gz=True, prefix="t10k")
    data = load_mnist_dir(tmp_path, Split.TEST)
    assert data.images.shape == (12, 196)
    assert data.split is Split.TEST
    assert np.array_equal(data.labels, labels)
    expected = imgs.reshape(12, 14, 2, 14, 2).astype(float).mean(axis=(2, 4)).reshape(12, 196)
    np.testing.assert_allclose(data.images, expected / 127.5 - 1, atol=1e-12)
    assert data.images.min() >= -1 and data.images.max() <= 1


def test_pool_preserves_mean():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 256, size=(50, 28, 28)).astype(float)
    np.testing.assert_allclose(pool_2x2(x).mean(axis=(1, 2)), x.mean(axis=(1, 2)), rtol=1e-12)
    assert pool_2x2(np.full((1, 28, 28), 255.0)).max() == 255


def test_pool_rejects_odd():
    with pytest.raises(ValueError):
        pool_2x2(np.zeros((1, 27, 28)))


def test_filter_digit(tmp_path):
    synthetic(tmp_path, n=40, seed=3)
    data = load_mnist_idx(tmp_path / "train-images-idx3-ubyte", tmp_path / "train-labels-idx1-ubyte")
    parts = []
    for d in range(10):
        try:
            parts.append(len(filter_digit(data, d)))
        except EmptySelectionError:
            parts.append(0)
    assert sum(parts) == len(data)


def test_filter_empty():
    data = MnistSet(np.zeros((2, 196)), np.array([1, 2]))
    with pytest.raises(EmptySelectionError):
        filter_digit(data, 7)


def test_mnist_set_validates_range():
    with pytest.raises(ValueError):
        MnistSet(np.full((1, 196), 1.5), np.array([0]))


@needs_mnist
def test_real_mnist_counts(mnist_train, mnist_test):
    assert len(mnist_train) == 60000
    assert len(mnist_test) == 10000
    assert len(filter_digit(mnist_train, 7)) == 6265
    assert len(filter_digit(mnist_test, 7)) == 1028
    assert sum(len(filter_digit(mnist_train, d)) for d in range(10)) == 60000
    assert mnist_train.images.shape[1] == 196


def test_constant_images_scale_to_extremes(tmp_path):
    imgs = np.zeros((2, 28, 28), dtype=np.uint8)
    imgs[1] = 255
    write_idx(tmp_path / "train-images-idx3-ubyte", imgs)
    write_idx(tmp_path / "train-labels-idx1-ubyte", np.array([3, 4], dtype=np.uint8))
    data = load_mnist_dir(tmp_path)
    assert np.all(data.images[0] == -1.0) and np.all(data.images[1] == 1.0)


def test_filter_idempotent_and_ordered(tmp_path):
    synthetic(tmp_path, n=50, seed=5)
    data = load_mnist_dir(tmp_path)
    once = filter_digit(data, int(data.labels[0]))
    twice = filter_digit(once, int(data.labels[0]))
    assert np.array_equal(once.images, twice.images)
    keep = np.flatnonzero(data.labels == data.labels[0])
    assert np.array_equal(once.images, data.images[keep])

"""MNIST IDX ingestion, 14x14 downsampling, and digit filtering."""

from __future__ import annotations

import enum
import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Split",
    "MnistSet",
    "IdxError",
    "BadMagicError",
    "TruncatedFileError",
    "CountMismatchError",
    "EmptySelectionError",
    "read_idx",
    "write_idx",
    "pool_2x2",
    "load_mnist_idx",
    "load_mnist_dir",
    "filter_digit",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


class EmptySelectionError(ValueError):
    pass


@dataclass(frozen=True)
class MnistSet:
    images: np.ndarray  # (n, 196), values in [-1, 1]
    labels: np.ndarray
    split: Split = Split.TRAIN

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels must have matching first dimension")
        if self.images.size and (self.images.min() < -1 or self.images.max() > 1):
            raise ValueError("pixels must lie in [-1, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise ValueError("labels must lie in 0..9")

    def __len__(self):
        return self.labels.shape[0]


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path, magic: int) -> np.ndarray:
    """Parse an unsigned-byte IDX file (optionally gzipped) with the expected magic."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    if len(raw) - header < expected:
        raise TruncatedFileError(
            f"{path}: {len(raw) - header} data bytes, header promises {expected}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (images: 3-D, labels: 1-D)."""
    a = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | a.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def pool_2x2(images: np.ndarray) -> np.ndarray:
    """Mean-pool (n, 28, 28) raw pixels to (n, 14, 14), keeping the 0..255 scale."""
    n, h, w = images.shape
    if h % 2 or w % 2:
        raise ValueError("image sides must be even for 2x2 pooling")
    return images.reshape(n, h // 2, 2, w // 2, 2).astype(float).mean(axis=(2, 4))


def load_mnist_idx(images_path, labels_path, split: Split = Split.TRAIN) -> MnistSet:
    raw = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if raw.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} has {raw.shape[0]} images but {labels_path} has {labels.shape[0]} labels"
        )
    pooled = pool_2x2(raw)
    images = pooled.reshape(len(pooled), -1) / 127.5 - 1.0
    return MnistSet(images, labels.astype(np.int64), split)


def load_mnist_dir(directory, split: Split = Split.TRAIN) -> MnistSet:
    """Load the standard-named IDX pair (plain or ``.gz``) from ``directory``."""
    prefix = "train" if split is Split.TRAIN else "t10k"
    paths = []
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        base = os.path.join(directory, f"{prefix}-{kind}")
        paths.append(base if os.path.exists(base) else base + ".gz")
    return load_mnist_idx(paths[0], paths[1], split)


def filter_digit(data: MnistSet, digit: int) -> MnistSet:
    keep = data.labels == digit
    if not keep.any():
        raise EmptySelectionError(f"no images with label {digit}")
    return MnistSet(data.images[keep], data.labels[keep], data.split)

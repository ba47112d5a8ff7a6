"""MNIST ingestion from IDX files, normalization, and batch iteration.

The parser consumes the classic big-endian IDX layout (magic 0x00000803
for images, 0x00000801 for labels) from a local directory; gzipped files
are handled transparently when the path ends in ``.gz``. No network access
happens here - see scripts/fetch_mnist.py for downloading.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

from .exceptions import FormatError, InputError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


@dataclass
class Dataset:
    """Images (n,1,28,28) float32 in [0,1] plus integer labels (n,)."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def flat_images(self) -> np.ndarray:
        """(n, 784) view for the dense architecture."""
        return self.images.reshape(len(self), -1)


def _read_bytes(path: str) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _read_u32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated at byte {offset}, expected 4-byte field")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Parse an IDX image/label file pair into a normalized Dataset."""
    ibuf = _read_bytes(images_path)
    magic = _read_u32(ibuf, 0, images_path)
    if magic != IMAGE_MAGIC:
        raise FormatError(
            f"{images_path}: bad image magic 0x{magic:08x} at byte 0, "
            f"expected 0x{IMAGE_MAGIC:08x}"
        )
    count = _read_u32(ibuf, 4, images_path)
    rows = _read_u32(ibuf, 8, images_path)
    cols = _read_u32(ibuf, 12, images_path)
    if (rows, cols) != (28, 28):
        raise FormatError(f"{images_path}: expected 28x28 images, got {rows}x{cols} at byte 8")
    need = 16 + count * rows * cols
    if len(ibuf) < need:
        raise FormatError(
            f"{images_path}: truncated at byte {len(ibuf)}, expected {need} bytes"
        )
    pixels = np.frombuffer(ibuf, dtype=np.uint8, count=count * rows * cols, offset=16)

    lbuf = _read_bytes(labels_path)
    magic = _read_u32(lbuf, 0, labels_path)
    if magic != LABEL_MAGIC:
        raise FormatError(
            f"{labels_path}: bad label magic 0x{magic:08x} at byte 0, "
            f"expected 0x{LABEL_MAGIC:08x}"
        )
    lcount = _read_u32(lbuf, 4, labels_path)
    if lcount != count:
        raise FormatError(
            f"{labels_path}: label count {lcount} at byte 4 does not match "
            f"{count} images"
        )
    if len(lbuf) < 8 + count:
        raise FormatError(
            f"{labels_path}: truncated at byte {len(lbuf)}, expected {8 + count} bytes"
        )
    labels = np.frombuffer(lbuf, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"{labels_path}: label {labels[bad]} out of range at item {bad}")

    images = (pixels.astype(np.float32) / np.float32(255.0)).reshape(count, 1, 28, 28)
    return Dataset(images=images, labels=labels)


def load_mnist_dir(data_dir: str) -> Tuple[Dataset, Dataset]:
    """Load (train, test) from a directory holding the four standard files."""
    def find(name: str) -> str:
        for candidate in (name, name + ".gz"):
            path = os.path.join(data_dir, candidate)
            if os.path.exists(path):
                return path
        raise InputError(f"missing {name}[.gz] under {data_dir}")

    train = load_idx(find(TRAIN_IMAGES), find(TRAIN_LABELS))
    test = load_idx(find(TEST_IMAGES), find(TEST_LABELS))
    return train, test


def save_idx_images(path: str, images_u8: np.ndarray) -> None:
    """Write (n,28,28) uint8 images in IDX format (used by tests and synth data)."""
    n, rows, cols = images_u8.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        fh.write(np.ascontiguousarray(images_u8, dtype=np.uint8).tobytes())


def save_idx_labels(path: str, labels: np.ndarray) -> None:
    """Write (n,) labels in IDX format."""
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def batches(dataset: Dataset, batch_size: int, seed=0,
            shuffle: bool = False) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (images, labels) batches; seeded permutation when shuffling.

    The final short batch is included. Identical seeds produce identical
    order; seed may be an int or a sequence of ints.
    """
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        sel = order[start:start + batch_size]
        yield dataset.images[sel], dataset.labels[sel]

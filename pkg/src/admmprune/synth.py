"""Deterministic synthetic digit corpus written as IDX files.

Stands in for MNIST when the real files are not present (tests, offline
machines): 28x28 grayscale digits rendered from a 5x7 dot-matrix font with
random shift, rotation, blur, and noise. Same file names and format as the
real dataset, so the rest of the pipeline is unchanged.
"""

from __future__ import annotations

import os

import numpy as np

from . import mnist

_FONT_5X7 = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}


def _glyph(digit: int) -> np.ndarray:
    """5x7 bitmap upscaled x3 and centered on a 28x28 canvas."""
    bits = np.array([[int(ch) for ch in row] for row in _FONT_5X7[digit]],
                    dtype=np.float32)
    big = np.kron(bits, np.ones((3, 3), dtype=np.float32))  # 21x15
    canvas = np.zeros((28, 28), dtype=np.float32)
    canvas[3:24, 6:21] = big
    return canvas


def _rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Bilinear rotation about the image center."""
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    yy, xx = np.meshgrid(np.arange(28.0), np.arange(28.0), indexing="ij")
    yc, xc = yy - 13.5, xx - 13.5
    src_y = c * yc + s * xc + 13.5
    src_x = -s * yc + c * xc + 13.5
    y0 = np.clip(np.floor(src_y).astype(int), 0, 26)
    x0 = np.clip(np.floor(src_x).astype(int), 0, 26)
    fy = np.clip(src_y - y0, 0.0, 1.0)
    fx = np.clip(src_x - x0, 0.0, 1.0)
    out = (img[y0, x0] * (1 - fy) * (1 - fx)
           + img[y0 + 1, x0] * fy * (1 - fx)
           + img[y0, x0 + 1] * (1 - fy) * fx
           + img[y0 + 1, x0 + 1] * fy * fx)
    inside = (src_y >= 0) & (src_y <= 27) & (src_x >= 0) & (src_x <= 27)
    return np.where(inside, out, 0.0).astype(np.float32)


def _blur(img: np.ndarray) -> np.ndarray:
    """3x3 binomial blur."""
    padded = np.pad(img, 1)
    out = np.zeros_like(img)
    kernel = ((1, 2, 1), (2, 4, 2), (1, 2, 1))
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy][dx] * padded[dy:dy + 28, dx:dx + 28]
    return out / np.float32(16.0)


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    ys = slice(max(dy, 0), 28 + min(dy, 0))
    xs = slice(max(dx, 0), 28 + min(dx, 0))
    out[ys, xs] = img[slice(max(-dy, 0), 28 + min(-dy, 0)),
                      slice(max(-dx, 0), 28 + min(-dx, 0))]
    return out


def render_digits(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Render n jittered digit images; returns (uint8 images (n,28,28), labels)."""
    rng = np.random.default_rng(seed)
    glyphs = [_glyph(d) for d in range(10)]
    labels = rng.integers(0, 10, size=n)
    images = np.empty((n, 28, 28), dtype=np.uint8)
    for i in range(n):
        img = _rotate(glyphs[labels[i]], rng.uniform(-14.0, 14.0))
        img = _shift(img, int(rng.integers(-3, 4)), int(rng.integers(-4, 5)))
        img = _blur(img) * rng.uniform(0.7, 1.0)
        img += rng.normal(0.0, 0.04, size=(28, 28)).astype(np.float32)
        images[i] = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    return images, labels.astype(np.uint8)


def write_synthetic_mnist(out_dir: str, n_train: int = 12000, n_test: int = 2000,
                          seed: int = 20240901) -> str:
    """Write a full train/test IDX corpus under out_dir; returns out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    train_images, train_labels = render_digits(n_train, seed)
    test_images, test_labels = render_digits(n_test, seed + 1)
    mnist.save_idx_images(os.path.join(out_dir, mnist.TRAIN_IMAGES), train_images)
    mnist.save_idx_labels(os.path.join(out_dir, mnist.TRAIN_LABELS), train_labels)
    mnist.save_idx_images(os.path.join(out_dir, mnist.TEST_IMAGES), test_images)
    mnist.save_idx_labels(os.path.join(out_dir, mnist.TEST_LABELS), test_labels)
    return out_dir

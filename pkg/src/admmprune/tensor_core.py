"""Dense float32 tensor kernels for the two reference networks.

Tensors are contiguous row-major numpy float32 arrays. Reductions (matrix
products, convolutions, norms, loss) accumulate in float64 and cast the
result back to float32; elementwise kernels stay in float32. All kernels
are deterministic functions of their inputs (fixed reduction order), so
repeated calls are bitwise identical.

Finite checks: while enabled (the default), every kernel validates that
its output contains no NaN/Inf and raises NonFiniteError instead of
propagating garbage. `set_finite_checks(False)` turns the checks off for
speed in long runs.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .exceptions import DimensionError, InputError, NonFiniteError

_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf output checks; returns the previous setting."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return previous


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


@contextmanager
def finite_checks(enabled: bool):
    """Context manager form of set_finite_checks."""
    previous = set_finite_checks(enabled)
    try:
        yield
    finally:
        set_finite_checks(previous)


def _check_finite(op: str, out: np.ndarray) -> np.ndarray:
    if _FINITE_CHECKS and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op}: output contains NaN/Inf")
    return out


def as_tensor(values, shape=None) -> np.ndarray:
    """Normalize to a contiguous float32 array, optionally reshaped."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim == 0 or any(d < 1 for d in arr.shape):
        raise DimensionError(f"invalid tensor shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """c[i,j] = sum_t a[i,t]*b[t,j], accumulated in float64."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = np.matmul(a, b, dtype=np.float64).astype(np.float32)
    return _check_finite("matmul", out)


def _im2col(x: np.ndarray, r: int, s: int) -> np.ndarray:
    """(B,C,H,W) -> (B, OH*OW, C*R*S) patch matrix for valid stride-1 windows."""
    bsz, c, h, w = x.shape
    oh, ow = h - r + 1, w - s + 1
    cols = np.empty((bsz, c, r, s, oh, ow), dtype=x.dtype)
    for dr in range(r):
        for ds in range(s):
            cols[:, :, dr, ds] = x[:, :, dr:dr + oh, ds:ds + ow]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(bsz, oh * ow, c * r * s)


def _conv_shapes(x: np.ndarray, kernels: np.ndarray):
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-d input and kernels, got {x.shape} and {kernels.shape}"
        )
    _, c, h, w = x.shape
    k, kc, r, s = kernels.shape
    if kc != c:
        raise DimensionError(f"conv2d channel mismatch: input C={c}, kernels C={kc}")
    if h < r or w < s:
        raise DimensionError(f"conv2d spatial dims {h}x{w} smaller than kernel {r}x{s}")
    return h - r + 1, w - s + 1


def conv2d(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Valid, stride-1 cross-correlation: (B,C,H,W) * (K,C,R,S) -> (B,K,OH,OW)."""
    oh, ow = _conv_shapes(x, kernels)
    bsz = x.shape[0]
    k, _, r, s = kernels.shape
    cols = _im2col(x, r, s)
    wflat = kernels.reshape(k, -1)
    out = np.matmul(cols, wflat.T, dtype=np.float64)  # (B, OH*OW, K)
    out = out.transpose(0, 2, 1).reshape(bsz, k, oh, ow).astype(np.float32)
    return _check_finite("conv2d", out)


def conv2d_grad_kernels(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of the valid conv w.r.t. kernels, given upstream (B,K,OH,OW)."""
    bsz, c, h, w = x.shape
    _, k, oh, ow = grad_out.shape
    r, s = h - oh + 1, w - ow + 1
    cols = _im2col(x, r, s)  # (B, P, C*R*S)
    g = grad_out.reshape(bsz, k, oh * ow)
    dw = np.einsum("bkp,bpq->kq", g, cols, dtype=np.float64)
    out = dw.reshape(k, c, r, s).astype(np.float32)
    return _check_finite("conv2d_grad_kernels", out)


def conv2d_grad_input(grad_out: np.ndarray, kernels: np.ndarray,
                      input_hw: tuple[int, int]) -> np.ndarray:
    """Gradient of the valid conv w.r.t. its input (col2im scatter-add)."""
    bsz, k, oh, ow = grad_out.shape
    _, c, r, s = kernels.shape
    h, w = input_hw
    if (oh, ow) != (h - r + 1, w - s + 1):
        raise DimensionError(
            f"grad_out spatial dims {oh}x{ow} inconsistent with input {h}x{w} "
            f"and kernel {r}x{s}"
        )
    wflat = kernels.reshape(k, -1)
    g = grad_out.reshape(bsz, k, oh * ow).transpose(0, 2, 1)  # (B, P, K)
    dcols = np.matmul(g, wflat, dtype=np.float64)  # (B, P, C*R*S)
    dcols = dcols.reshape(bsz, oh, ow, c, r, s).transpose(0, 3, 4, 5, 1, 2)
    dx = np.zeros((bsz, c, h, w), dtype=np.float64)
    for dr in range(r):
        for ds in range(s):
            dx[:, :, dr:dr + oh, ds:ds + ow] += dcols[:, :, dr, ds]
    out = dx.astype(np.float32)
    return _check_finite("conv2d_grad_input", out)


def _pool_windows(x: np.ndarray) -> np.ndarray:
    bsz, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    win = x.reshape(bsz, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(bsz, c, h // 2, w // 2, 4)


def maxpool2d(x: np.ndarray) -> np.ndarray:
    """2x2/stride-2 max pooling: (B,C,H,W) -> (B,C,H/2,W/2)."""
    return _pool_windows(x).max(axis=-1)


def maxpool2d_grad(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Routes upstream gradient to the first (lowest linear index) max per window."""
    win = _pool_windows(x)
    idx = np.argmax(win, axis=-1)  # first max on ties
    g = np.zeros_like(win)
    np.put_along_axis(g, idx[..., None], grad_out[..., None].astype(np.float32), axis=-1)
    bsz, c, h2, w2, _ = win.shape
    return g.reshape(bsz, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        bsz, c, 2 * h2, 2 * w2)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def relu_grad(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Passes gradient where x > 0, zero where x <= 0."""
    return np.where(x > 0, grad_out, np.float32(0.0))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log softmax over the batch; returns (loss, grad).

    grad = (softmax - one_hot) / B, float32. Loss is accumulated in
    float64 with a max-shifted log-sum-exp.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-d, got shape {logits.shape}")
    bsz, nclass = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (bsz,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {bsz}")
    if labels.min() < 0 or labels.max() >= nclass:
        raise InputError(
            f"labels must lie in [0, {nclass}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    sumexp = expz.sum(axis=1, keepdims=True)
    log_probs = z - np.log(sumexp)
    loss = float(-log_probs[np.arange(bsz), labels].mean())
    probs = expz / sumexp
    probs[np.arange(bsz), labels] -= 1.0
    grad = (probs / bsz).astype(np.float32)
    if _FINITE_CHECKS and not np.isfinite(loss):
        raise NonFiniteError("softmax_cross_entropy: loss is NaN/Inf")
    return loss, _check_finite("softmax_cross_entropy", grad)


def frobenius_sq(x: np.ndarray) -> float:
    """Sum of squared entries, accumulated in float64."""
    flat = x.astype(np.float64, copy=False).ravel()
    return float(np.dot(flat, flat))


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """alpha*x + y elementwise in float32."""
    if x.shape != y.shape:
        raise DimensionError(f"axpy shape mismatch: {x.shape} vs {y.shape}")
    out = np.float32(alpha) * x + y
    return _check_finite("axpy", out)

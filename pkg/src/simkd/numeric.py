"""Dense float64 arithmetic, seeded randomness and finite differences.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The helpers
here add shape checking, finiteness checking and fixed evaluation orders on
top of numpy; everything else in the package is written against them.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable

import numpy as np

from .errors import DimensionError, NumericError

DTYPE = np.float64

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains non-finite values")
    return x


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of ``data``."""
    h = _FNV_OFFSET
    # byte-at-a-time; fast enough for desk-scale checkpoints
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


class Rng:
    """Splittable counter-based generator.

    The stream is numpy's Philox-4x64 keyed by the first 16 bytes of
    ``blake2b(b"simkd" | seed | "/" | label path)``. Children are derived
    by appending a label to the path, so ``Rng(3).child("a")`` and
    ``Rng(3).child("b")`` never share a key unless blake2b collides.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.path = tuple(path)
        digest = hashlib.blake2b(
            b"simkd" + self.seed.to_bytes(8, "little") + "/".join(self.path).encode(),
            digest_size=16,
        ).digest()
        key = int.from_bytes(digest, "little")
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, label: str | int) -> "Rng":
        return Rng(self.seed, self.path + (str(label),))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={'/'.join(self.path)!r})"

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(DTYPE)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size=shape).astype(DTYPE) * scale

    def random(self, shape=None):
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of ``a`` (M x K) and ``b`` (K x N)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.matmul(a, b)
    return check_finite(out, "matmul result")


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (N*H*W, C*k*k) with same-size zero padding."""
    n, c, h, w = x.shape
    if k == 1:
        return x.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    xp = _pad(x, (k - 1) // 2)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    # win: (N, C, H, W, k, k)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def _col2im(cols: np.ndarray, shape: tuple[int, ...], k: int) -> np.ndarray:
    n, c, h, w = shape
    if k == 1:
        return cols.reshape(n, h, w, c).transpose(0, 3, 1, 2)
    p = (k - 1) // 2
    cols = cols.reshape(n, h, w, c, k, k)
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=DTYPE)
    for a in range(k):
        for b in range(k):
            out[:, :, a:a + h, b:b + w] += cols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    return out[:, :, p:p + h, p:p + w]


def _check_conv(x: np.ndarray, kernel: np.ndarray, depthwise: bool) -> int:
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    k = kernel.shape[2]
    if k not in (1, 3) or kernel.shape[3] != k:
        raise DimensionError(f"conv2d supports 1x1 and 3x3 kernels, got {kernel.shape}")
    c_in = 1 if depthwise else x.shape[1]
    if kernel.shape[1] != c_in or (depthwise and kernel.shape[0] != x.shape[1]):
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    return k


def conv2d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Bias-free same-size cross-correlation, stride 1, zero padding (k-1)/2.

    ``x`` is (N, C_in, H, W) and ``kernel`` is (C_out, C_in, k, k).
    """
    k = _check_conv(x, kernel, depthwise=False)
    n, _, h, w = x.shape
    c_out = kernel.shape[0]
    cols = _im2col(x, k)
    y = np.matmul(cols, kernel.reshape(c_out, -1).T)
    return check_finite(y.reshape(n, h, w, c_out).transpose(0, 3, 1, 2).copy(), "conv2d result")


def conv2d_backward(x: np.ndarray, kernel: np.ndarray, dy: np.ndarray):
    """Gradients of ``sum(dy * conv2d(x, kernel))`` wrt ``x`` and ``kernel``."""
    k = _check_conv(x, kernel, depthwise=False)
    c_out = kernel.shape[0]
    cols = _im2col(x, k)
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dk = np.matmul(dy_mat.T, cols).reshape(kernel.shape)
    dcols = np.matmul(dy_mat, kernel.reshape(c_out, -1))
    dx = _col2im(dcols, x.shape, k)
    return dx, dk


def depthwise_conv2d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel same-size cross-correlation; ``kernel`` is (C, 1, k, k)."""
    k = _check_conv(x, kernel, depthwise=True)
    n, c, h, w = x.shape
    xp = _pad(x, (k - 1) // 2)
    y = np.zeros_like(x)
    for a in range(k):
        for b in range(k):
            y += xp[:, :, a:a + h, b:b + w] * kernel[:, 0, a, b][None, :, None, None]
    return check_finite(y, "depthwise_conv2d result")


def depthwise_conv2d_backward(x: np.ndarray, kernel: np.ndarray, dy: np.ndarray):
    k = _check_conv(x, kernel, depthwise=True)
    n, c, h, w = x.shape
    p = (k - 1) // 2
    xp = _pad(x, p)
    dxp = np.zeros_like(xp)
    dk = np.zeros_like(kernel)
    for a in range(k):
        for b in range(k):
            dk[:, 0, a, b] = np.einsum("nchw,nchw->c", dy, xp[:, :, a:a + h, b:b + w])
            dxp[:, :, a:a + h, b:b + w] += dy * kernel[:, 0, a, b][None, :, None, None]
    return dxp[:, :, p:p + h, p:p + w], dk


def avg_pool(x: np.ndarray, window: int) -> np.ndarray:
    """Non-overlapping average pooling of an (N, C, H, W) tensor."""
    n, c, h, w = x.shape
    if h % window or w % window:
        raise DimensionError(f"avg_pool window {window} does not divide {h}x{w}")
    return x.reshape(n, c, h // window, window, w // window, window).mean(axis=(3, 5))


def avg_pool_backward(dy: np.ndarray, window: int) -> np.ndarray:
    g = dy / (window * window)
    return np.repeat(np.repeat(g, window, axis=2), window, axis=3)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    x = as_tensor(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``, zero when both vanish."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def one_hot(labels: Iterable[int], num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes), dtype=DTYPE)
    out[np.arange(labels.size), labels] = 1.0
    return out

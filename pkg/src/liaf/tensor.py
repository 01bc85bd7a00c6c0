"""Dense float64 kernels shared by every layer.

Tensors are plain ``numpy.ndarray`` values of dtype float64 in row-major
order; the functions here validate shapes and raise :class:`DimensionError`
naming the offending extents. Layout is channels-last throughout:
``(B, K)`` for vectors, ``(B, H, W, K)`` for feature maps and
``(B, T, ...)`` for sequences.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "DimensionError",
    "as_tensor",
    "matmul",
    "conv2d",
    "conv2d_grad_input",
    "conv2d_grad_kernel",
    "conv3d",
    "conv3d_grad_input",
    "conv3d_grad_kernel",
    "avg_pool2d",
    "avg_pool2d_grad",
    "reduce_mean_time",
]

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand extents are incompatible."""


def as_tensor(x, rank=None) -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if rank is not None and a.ndim != rank:
        raise DimensionError(f"expected rank {rank}, got shape {a.shape}")
    if any(d < 1 for d in a.shape):
        raise DimensionError(f"all extents must be >= 1, got shape {a.shape}")
    return a


def matmul(a, w) -> np.ndarray:
    """``(B, K) @ (K, L) -> (B, L)``."""
    a = np.asarray(a, dtype=DTYPE)
    w = np.asarray(w, dtype=DTYPE)
    if a.ndim != 2 or w.ndim != 2 or a.shape[1] != w.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {w.shape} do not agree")
    return a @ w


def _check_conv(x, k, padding):
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d expects (B,H,W,K) and (I,J,K,L), got {x.shape} and {k.shape}")
    I, J, K, _ = k.shape
    if I % 2 == 0 or J % 2 == 0:
        raise DimensionError(f"kernel extents must be odd, got {(I, J)}")
    if x.shape[3] != K:
        raise DimensionError(f"conv2d input channels {x.shape[3]} != kernel channels {K} "
                             f"(shapes {x.shape} and {k.shape})")
    if padding < 0:
        raise DimensionError(f"padding must be >= 0, got {padding}")
    Hp, Wp = x.shape[1] + 2 * padding, x.shape[2] + 2 * padding
    if I > Hp or J > Wp:
        raise DimensionError(f"kernel {(I, J)} larger than padded input {(Hp, Wp)}")


def _im2col(xp, I, J):
    # (B, H', W', K, I, J) -> (B, H', W', I, J, K)
    win = sliding_window_view(xp, (I, J), axis=(1, 2))
    return win.transpose(0, 1, 2, 4, 5, 3)


def conv2d(x, k, padding: int = 0) -> np.ndarray:
    """Cross-correlation with zero padding.

    ``x`` is ``(B, H, W, K)``, ``k`` is ``(I, J, K, L)``; output is
    ``(B, H + 2p - I + 1, W + 2p - J + 1, L)``.
    """
    x = np.asarray(x, dtype=DTYPE)
    k = np.asarray(k, dtype=DTYPE)
    _check_conv(x, k, padding)
    I, J, K, L = k.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = _im2col(xp, I, J)
    B, Ho, Wo = cols.shape[:3]
    out = cols.reshape(B * Ho * Wo, I * J * K) @ k.reshape(I * J * K, L)
    return out.reshape(B, Ho, Wo, L)


def conv2d_grad_kernel(x, g, padding: int, kshape) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    I, J, K, L = kshape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = _im2col(xp, I, J)
    n = cols.shape[0] * cols.shape[1] * cols.shape[2]
    gk = cols.reshape(n, I * J * K).T @ g.reshape(n, L)
    return gk.reshape(I, J, K, L)


def conv2d_grad_input(g, k, padding: int, xshape) -> np.ndarray:
    k = np.asarray(k, dtype=DTYPE)
    I, J, K, L = k.shape
    B, H, W, _ = xshape
    Ho, Wo = g.shape[1], g.shape[2]
    gp = np.zeros((B, H + 2 * padding, W + 2 * padding, K), dtype=DTYPE)
    for i in range(I):
        for j in range(J):
            gp[:, i:i + Ho, j:j + Wo, :] += g @ k[i, j].T
    return gp[:, padding:padding + H, padding:padding + W, :]


def _check_conv3d(x, k, padding):
    if x.ndim != 5 or k.ndim != 5:
        raise DimensionError(f"conv3d expects (B,T,H,W,K) and (U,I,J,K,L), got {x.shape} and {k.shape}")
    if any(e % 2 == 0 for e in k.shape[:3]):
        raise DimensionError(f"kernel extents must be odd, got {k.shape[:3]}")
    if x.shape[4] != k.shape[3]:
        raise DimensionError(f"conv3d channels disagree: {x.shape} and {k.shape}")
    for n, e, p in zip(x.shape[1:4], k.shape[:3], padding):
        if e > n + 2 * p:
            raise DimensionError(f"kernel {k.shape[:3]} larger than padded input {x.shape[1:4]}")


def conv3d(x, k, padding=(0, 0, 0)) -> np.ndarray:
    """Spatiotemporal cross-correlation over ``(T, H, W)``.

    ``x`` is ``(B, T, H, W, K)``, ``k`` is ``(U, I, J, K, L)`` and
    ``padding`` is a ``(pt, ph, pw)`` triple.
    """
    x = np.asarray(x, dtype=DTYPE)
    k = np.asarray(k, dtype=DTYPE)
    _check_conv3d(x, k, padding)
    U, I, J, K, L = k.shape
    pt, ph, pw = padding
    xp = np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (U, I, J), axis=(1, 2, 3)).transpose(0, 1, 2, 3, 5, 6, 7, 4)
    B, To, Ho, Wo = win.shape[:4]
    out = win.reshape(-1, U * I * J * K) @ k.reshape(U * I * J * K, L)
    return out.reshape(B, To, Ho, Wo, L)


def conv3d_grad_kernel(x, g, padding, kshape) -> np.ndarray:
    U, I, J, K, L = kshape
    pt, ph, pw = padding
    xp = np.pad(np.asarray(x, dtype=DTYPE), ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (U, I, J), axis=(1, 2, 3)).transpose(0, 1, 2, 3, 5, 6, 7, 4)
    cols = win.reshape(-1, U * I * J * K)
    return (cols.T @ g.reshape(-1, L)).reshape(kshape)


def conv3d_grad_input(g, k, padding, xshape) -> np.ndarray:
    U, I, J, K, L = k.shape
    B, T, H, W, _ = xshape
    pt, ph, pw = padding
    To, Ho, Wo = g.shape[1:4]
    gp = np.zeros((B, T + 2 * pt, H + 2 * ph, W + 2 * pw, K), dtype=DTYPE)
    for u in range(U):
        for i in range(I):
            for j in range(J):
                gp[:, u:u + To, i:i + Ho, j:j + Wo, :] += g @ k[u, i, j].T
    return gp[:, pt:pt + T, ph:ph + H, pw:pw + W, :]


def avg_pool2d(x, win) -> np.ndarray:
    """Non-overlapping mean pooling over the two axes before channels.

    Accepts ``(..., H, W, L)``; any leading axes (batch, time) are kept.
    """
    x = np.asarray(x, dtype=DTYPE)
    p, q = win
    if x.ndim < 3:
        raise DimensionError(f"avg_pool2d expects (..., H, W, L), got {x.shape}")
    H, W, L = x.shape[-3:]
    if p < 1 or q < 1 or H % p or W % q:
        raise DimensionError(f"pool window {(p, q)} does not divide spatial extents {(H, W)}")
    lead = x.shape[:-3]
    y = x.reshape(*lead, H // p, p, W // q, q, L)
    return y.mean(axis=(-4, -2))


def avg_pool2d_grad(g, win) -> np.ndarray:
    p, q = win
    g = np.repeat(np.repeat(g, p, axis=-3), q, axis=-2)
    return g / (p * q)


def reduce_mean_time(x) -> np.ndarray:
    """Mean over axis 1 of a ``(B, T, ...)`` tensor."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim < 2:
        raise DimensionError(f"reduce_mean_time expects (B, T, ...), got {x.shape}")
    return x.sum(axis=1) / x.shape[1]

"""Orthonormal 2-D DCT-II / DCT-III on square patches.

Transforms are dense basis products in float64, accumulated term by term in
index order rather than through BLAS, so coefficients are bit-reproducible
across platforms. Inputs may be a single ``p x p`` patch or a stack of shape
``(..., p, p)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def dct_basis(p: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` with ``C[k, n] = s_k cos(pi (2n+1) k / 2p)``.

    The returned array is read-only and shared between callers.
    """
    if p < 1:
        raise ValueError(f"patch size must be positive, got {p}")
    k = np.arange(p, dtype=np.float64)[:, None]
    n = np.arange(p, dtype=np.float64)[None, :]
    basis = np.cos(np.pi * (2 * n + 1) * k / (2 * p))
    basis[0] *= np.sqrt(1.0 / p)
    basis[1:] *= np.sqrt(2.0 / p)
    basis.setflags(write=False)
    return basis


def _square_side(x: np.ndarray) -> int:
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ValueError(f"expected square patches, got shape {x.shape}")
    return x.shape[-1]


_BLOCK_ELEMENTS = 1 << 15


def _left(c: np.ndarray, x: np.ndarray, acc: np.ndarray, tmp: np.ndarray) -> None:
    """``acc = c @ x`` per patch, summing over the inner index in order."""
    acc.fill(0.0)
    for n in range(c.shape[1]):
        np.multiply(c[:, n, None], x[:, n, None, :], out=tmp)
        acc += tmp


def _right(x: np.ndarray, c: np.ndarray, acc: np.ndarray, tmp: np.ndarray) -> None:
    """``acc = x @ c`` per patch, summing over the inner index in order."""
    acc.fill(0.0)
    for j in range(c.shape[0]):
        np.multiply(x[:, :, j, None], c[j, None, :], out=tmp)
        acc += tmp


def _apply(x: np.ndarray, first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """``first @ x @ second`` for every patch, in cache-sized batches."""
    p = x.shape[-1]
    flat = x.reshape(-1, p, p)
    out = np.empty(flat.shape)
    batch = max(1, _BLOCK_ELEMENTS // (p * p))
    mid = np.empty((min(batch, len(flat)), p, p))
    tmp = np.empty_like(mid)
    for start in range(0, len(flat), batch):
        block = flat[start : start + batch]
        n = len(block)
        _left(first, block, mid[:n], tmp[:n])
        _right(mid[:n], second, out[start : start + n], tmp[:n])
    return out.reshape(x.shape)


def dct2(patch: np.ndarray) -> np.ndarray:
    x = np.asarray(patch, dtype=np.float64)
    c = dct_basis(_square_side(x))
    return _apply(x, c, c.T)


def idct2(coeffs: np.ndarray) -> np.ndarray:
    y = np.asarray(coeffs, dtype=np.float64)
    c = dct_basis(_square_side(y))
    return _apply(y, c.T, c)

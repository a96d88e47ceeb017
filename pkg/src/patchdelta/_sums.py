"""Reductions with a fixed left-to-right accumulation order.

numpy's ``sum`` and BLAS products use pairwise or blocked orders that vary
with array size and library build. Stored ranges and gamma are rounded from
these sums, so the codec accumulates sequentially to get the same bits on
every platform.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 1 << 20


def sequential_sum(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sum along ``axis`` as ``((0 + x0) + x1) + ...`` in float64."""
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    if x.shape[-1] == 0:
        return np.zeros(x.shape[:-1])
    # adding 0.0 turns a -0.0 total into +0.0, as starting from 0 would
    return np.cumsum(x, axis=-1)[..., -1] + 0.0


def sequential_total(x: np.ndarray) -> float:
    """Row-major sequential sum of all elements, in bounded memory."""
    flat = np.asarray(x, dtype=np.float64).ravel()
    total = 0.0
    for start in range(0, flat.size, _CHUNK):
        chunk = np.concatenate(([total], flat[start : start + _CHUNK]))
        total = float(np.cumsum(chunk)[-1])
    return total

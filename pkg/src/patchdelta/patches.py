"""Patch grids, patch importance and mixed-precision bit allocation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from patchdelta._sums import sequential_sum


@dataclass
class PatchGrid:
    """A zero-padded matrix cut into raster-ordered ``p x p`` patches."""

    patches: np.ndarray  # (M, p, p)
    patch_size: int
    original_shape: tuple[int, int]

    @property
    def grid_shape(self) -> tuple[int, int]:
        p = self.patch_size
        rows, cols = self.original_shape
        return -(-rows // p), -(-cols // p)

    @property
    def padded_shape(self) -> tuple[int, int]:
        gr, gc = self.grid_shape
        return gr * self.patch_size, gc * self.patch_size

    def __len__(self) -> int:
        return len(self.patches)


def patchlize(matrix: np.ndarray, p: int) -> PatchGrid:
    matrix = np.asarray(matrix)
    if p < 1:
        raise ValueError(f"patch size must be positive, got {p}")
    if matrix.ndim != 2 or matrix.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {matrix.shape}")
    rows, cols = matrix.shape
    gr, gc = -(-rows // p), -(-cols // p)
    padded = np.zeros((gr * p, gc * p), dtype=matrix.dtype)
    padded[:rows, :cols] = matrix
    patches = padded.reshape(gr, p, gc, p).transpose(0, 2, 1, 3).reshape(gr * gc, p, p)
    return PatchGrid(np.ascontiguousarray(patches), p, (rows, cols))


def reassemble(grid: PatchGrid) -> np.ndarray:
    p = grid.patch_size
    gr, gc = grid.grid_shape
    patches = np.asarray(grid.patches)
    if patches.shape != (gr * gc, p, p):
        raise ValueError(
            f"patch array {patches.shape} does not match a {gr}x{gc} grid of {p}x{p} patches"
        )
    padded = patches.reshape(gr, gc, p, p).transpose(0, 2, 1, 3).reshape(gr * p, gc * p)
    rows, cols = grid.original_shape
    return np.ascontiguousarray(padded[:rows, :cols])


def importance_scores(grid: PatchGrid) -> np.ndarray:
    """L2 norm of every patch, in float64."""
    sq = np.square(np.asarray(grid.patches, dtype=np.float64))
    return np.sqrt(sequential_sum(sq.reshape(len(sq), -1)))


@dataclass(frozen=True)
class BitPlan:
    """Bit-widths with the fraction of patches assigned to each.

    ``levels`` is ordered by strictly decreasing bit-width. ``per_patch`` is
    filled in by :func:`allocate_bits`.
    """

    levels: tuple[tuple[int, float], ...] = ((2, 0.5), (0, 0.5))
    per_patch: np.ndarray | None = dataclasses.field(default=None, compare=False)

    def __post_init__(self) -> None:
        levels = tuple((int(b), float(r)) for b, r in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ValueError("bit plan needs at least one level")
        bits = [b for b, _ in levels]
        for b, r in levels:
            if not 0 <= b <= 32:
                raise ValueError(f"bit-width {b} outside 0..32")
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"ratio {r} outside [0, 1]")
        if any(a <= b for a, b in zip(bits, bits[1:])):
            raise ValueError(f"bit-widths must be strictly decreasing, got {bits}")
        total = sum(r for _, r in levels)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"ratios sum to {total}, expected 1")

    @classmethod
    def parse(cls, spec: str) -> "BitPlan":
        """Parse ``"2:0.5,0:0.5"`` style specs; pairs may come in any order."""
        levels = []
        for part in spec.split(","):
            bit, sep, ratio = part.strip().partition(":")
            if not sep:
                raise ValueError(f"malformed bit spec entry {part!r}, expected bit:ratio")
            try:
                levels.append((int(bit), float(ratio)))
            except ValueError:
                raise ValueError(f"malformed bit spec entry {part!r}") from None
        levels.sort(key=lambda lv: -lv[0])
        return cls(tuple(levels))

    def spec(self) -> str:
        return ",".join(f"{b}:{r:g}" for b, r in self.levels)

    @property
    def bit_widths(self) -> tuple[int, ...]:
        return tuple(b for b, _ in self.levels)

    def counts(self, m: int) -> list[int]:
        """Largest-remainder patch counts per level, summing to ``m``."""
        exact = []
        for _, r in self.levels:
            x = r * m
            if abs(x - round(x)) < 1e-9:
                x = float(round(x))
            exact.append(x)
        counts = [math.floor(x) for x in exact]
        left = m - sum(counts)
        # Levels are already in descending bit order, so a stable sort on the
        # fractional part breaks ties toward the higher bit-width.
        order = sorted(range(len(counts)), key=lambda i: -(exact[i] - counts[i]))
        for k in range(left):
            counts[order[k % len(order)]] += 1
        return counts


def allocate_bits(scores: np.ndarray, plan: BitPlan) -> BitPlan:
    scores = np.asarray(scores, dtype=np.float64)
    m = len(scores)
    if m == 0:
        raise ValueError("cannot allocate bits for zero patches")
    ranking = np.argsort(-scores, kind="stable")
    per_patch = np.empty(m, dtype=np.uint8)
    start = 0
    for (bits, _), count in zip(plan.levels, plan.counts(m)):
        per_patch[ranking[start : start + count]] = bits
        start += count
    return dataclasses.replace(plan, per_patch=per_patch)

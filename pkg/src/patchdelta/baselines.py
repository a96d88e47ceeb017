"""Data-free reference codecs: 1-bit sign quantization and SVD mixed precision."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from patchdelta.quantizer import dequantize_rows, pack_rows, packed_size, quantize_rows, unpack_rows

DEFAULT_GROUP_BITS = (8, 3, 2)
DEFAULT_GROUP_RATIO = (1, 8, 16)


def _finite_matrix(delta) -> np.ndarray:
    x = np.asarray(delta, dtype=np.float32)
    if x.ndim != 2 or x.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("delta contains non-finite values")
    return x


# -- sign ---------------------------------------------------------------------

@dataclass
class SignCompressed:
    shape: tuple[int, int]
    alpha: np.float32
    signs: bytes  # 1 bit per value, LSB-first, 1 where the value is positive
    name: str = ""
    dtype: str = "float32"


def sign_compress(delta, *, name: str = "", dtype: str = "float32") -> SignCompressed:
    x = _finite_matrix(delta)
    alpha = np.float32(np.abs(x, dtype=np.float64).mean())
    positive = (x > 0).reshape(1, -1).astype(np.uint64)
    return SignCompressed(x.shape, alpha, pack_rows(positive, 1).tobytes(), name, dtype)


def sign_reconstruct(sc: SignCompressed) -> np.ndarray:
    n = int(np.prod(sc.shape))
    if len(sc.signs) != packed_size(n, 1):
        raise ValueError(f"sign bitmap holds {len(sc.signs)} bytes, expected {packed_size(n, 1)}")
    raw = np.frombuffer(sc.signs, dtype=np.uint8).reshape(1, -1)
    positive = unpack_rows(raw, 1, n)[0].astype(bool)
    alpha = np.float32(sc.alpha)
    return np.where(positive, alpha, -alpha).astype(np.float32).reshape(sc.shape)


# -- SVD ----------------------------------------------------------------------

@dataclass
class SvdGroup:
    r_begin: int
    r_end: int
    bits: int
    u_lo: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u_hi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_lo: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_hi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u_codes: np.ndarray | None = None  # (rank, rows): column r of U
    v_codes: np.ndarray | None = None  # (rank, cols): row r of S V^T

    @property
    def rank(self) -> int:
        return self.r_end - self.r_begin


@dataclass
class SvdMixedCompressed:
    shape: tuple[int, int]
    groups: list[SvdGroup]
    range_dtype: str = "float32"
    name: str = ""
    dtype: str = "float32"


def default_svd_groups(shape: tuple[int, int], range_bits: int = 32) -> list[tuple[int, int, int]]:
    """Rank split for 8/3/2-bit groups in a 1:8:16 ratio sized to ~1 bit per value.

    Each rank costs ``(rows + cols) * bits`` code bits plus four range values.
    At least one rank always goes to the 8-bit group.
    """
    rows, cols = shape
    budget = rows * cols
    unit_cost = sum(k * ((rows + cols) * b + 4 * range_bits)
                    for k, b in zip(DEFAULT_GROUP_RATIO, DEFAULT_GROUP_BITS))
    unit = budget / unit_cost
    ranks = [int(round(k * unit)) for k in DEFAULT_GROUP_RATIO]
    ranks[0] = max(ranks[0], 1)
    available = min(rows, cols)
    groups = []
    start = 0
    for bits, k in zip(DEFAULT_GROUP_BITS, ranks):
        k = min(k, available - start)
        groups.append((start, start + k, bits))
        start += k
    return groups


def _validate_groups(groups, max_rank: int) -> None:
    prev_end = 0
    prev_bits = None
    for r_begin, r_end, bits in groups:
        if not 1 <= bits <= 32:
            raise ValueError(f"group bit-width {bits} outside 1..32")
        if r_begin < prev_end or r_end < r_begin:
            raise ValueError(f"rank range [{r_begin}, {r_end}) overlaps or is not ascending")
        if r_end > max_rank:
            raise ValueError(f"rank range [{r_begin}, {r_end}) exceeds rank {max_rank}")
        if prev_bits is not None and bits >= prev_bits:
            raise ValueError("group bit-widths must strictly decrease")
        prev_end, prev_bits = r_end, bits


def _svd(x: np.ndarray):
    u, s, vt = np.linalg.svd(x.astype(np.float64), full_matrices=False)
    # Deterministic signs: largest-magnitude entry of each left vector is >= 0.
    pivot = np.argmax(np.abs(u), axis=0)
    flip = np.where(u[pivot, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * flip, s, vt * flip[:, None]


def svd_mixed_compress(
    delta,
    groups=None,
    *,
    range_dtype: str = "float32",
    name: str = "",
    dtype: str = "float32",
) -> SvdMixedCompressed:
    """Quantize singular-vector groups of ``delta`` with per-vector ranges.

    ``groups`` is a sequence of ``(r_begin, r_end, bits)``; singular vectors
    past the last group are dropped.
    """
    x = _finite_matrix(delta)
    if groups is None:
        groups = default_svd_groups(x.shape)
    groups = [tuple(int(v) for v in g) for g in groups]
    _validate_groups(groups, min(x.shape))
    u, s, vt = _svd(x)
    svt = s[:, None] * vt
    out = []
    for r_begin, r_end, bits in groups:
        g = SvdGroup(r_begin, r_end, bits)
        if g.rank:
            g.u_lo, g.u_hi, g.u_codes = quantize_rows(u[:, r_begin:r_end].T, bits, range_dtype)
            g.v_lo, g.v_hi, g.v_codes = quantize_rows(svt[r_begin:r_end], bits, range_dtype)
        out.append(g)
    return SvdMixedCompressed(x.shape, out, range_dtype, name, dtype)


def svd_mixed_reconstruct(smc: SvdMixedCompressed) -> np.ndarray:
    acc = np.zeros(smc.shape, dtype=np.float64)
    for g in smc.groups:
        if not g.rank:
            continue
        u = dequantize_rows(g.u_lo, g.u_hi, g.u_codes, g.bits)
        v = dequantize_rows(g.v_lo, g.v_hi, g.v_codes, g.bits)
        acc += u.T @ v
    return acc.astype(np.float32)


def svd_blob(smc: SvdMixedCompressed) -> bytes:
    """Codes of every rank: U column then S V^T row, each byte-aligned."""
    parts = []
    for g in smc.groups:
        if not g.rank:
            continue
        u = pack_rows(g.u_codes, g.bits)
        v = pack_rows(g.v_codes, g.bits)
        parts.append(np.concatenate([u, v], axis=1).tobytes())
    return b"".join(parts)


def svd_blob_size(shape: tuple[int, int], groups) -> int:
    rows, cols = shape
    return sum((r_end - r_begin) * (packed_size(rows, b) + packed_size(cols, b))
               for r_begin, r_end, b in groups)


def svd_unblob(blob: bytes, smc: SvdMixedCompressed) -> None:
    """Fill the code arrays of ``smc`` (ranges already set) from ``blob``."""
    rows, cols = smc.shape
    spec = [(g.r_begin, g.r_end, g.bits) for g in smc.groups]
    if len(blob) != svd_blob_size(smc.shape, spec):
        raise ValueError(f"SVD payload holds {len(blob)} bytes, expected {svd_blob_size(smc.shape, spec)}")
    pos = 0
    for g in smc.groups:
        if not g.rank:
            g.u_codes = g.v_codes = None
            continue
        nu, nv = packed_size(rows, g.bits), packed_size(cols, g.bits)
        size = g.rank * (nu + nv)
        chunk = np.frombuffer(blob[pos : pos + size], dtype=np.uint8).reshape(g.rank, nu + nv)
        g.u_codes = unpack_rows(chunk[:, :nu], g.bits, rows)
        g.v_codes = unpack_rows(chunk[:, nu:], g.bits, cols)
        pos += size

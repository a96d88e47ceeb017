"""Uniform round quantization of patches and LSB-first bit packing.

Codes are ``floor((x - lo) / step + 0.5)`` clamped to ``[0, 2**B - 1]`` with
``step = (hi - lo) / (2**B - 1)``. Rounding is half-up on the non-negative
normalised value, so it differs from numpy's half-to-even ``round``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_BITS = 32
ZERO_BIT_MODES = ("spatial-mean", "dct-mean")
RANGE_DTYPES = {"float64": np.float64, "float32": np.float32, "float16": np.float16}


@dataclass
class QuantizedPatch:
    bit_width: int
    lo: float
    hi: float
    codes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint64))


def _check_bits(bits: int) -> None:
    if not 0 <= bits <= MAX_BITS:
        raise ValueError(f"bit-width {bits} outside 0..{MAX_BITS}")


def store_range(lo: np.ndarray, hi: np.ndarray, range_dtype: str = "float64"):
    """Round ``[lo, hi]`` outward to values representable in ``range_dtype``.

    Returns the stored bounds as float64 so every original value still lies
    inside the stored range.
    """
    dt = RANGE_DTYPES[range_dtype]
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if dt is np.float64:
        return lo.copy(), hi.copy()
    with np.errstate(over="ignore"):
        lo_s = lo.astype(dt)
        hi_s = hi.astype(dt)
    down = lo_s.astype(np.float64) > lo
    lo_s[down] = np.nextafter(lo_s[down], dt(-np.inf))
    up = hi_s.astype(np.float64) < hi
    hi_s[up] = np.nextafter(hi_s[up], dt(np.inf))
    if not (np.isfinite(lo_s).all() and np.isfinite(hi_s).all()):
        raise ValueError(f"quantization range overflows {range_dtype}")
    return lo_s.astype(np.float64), hi_s.astype(np.float64)


def store_value(value: np.ndarray, range_dtype: str = "float64") -> np.ndarray:
    """Round-to-nearest storage of a constant range (0-bit patches)."""
    dt = RANGE_DTYPES[range_dtype]
    with np.errstate(over="ignore"):
        out = np.asarray(value, dtype=np.float64).astype(dt)
    if not np.isfinite(out).all():
        raise ValueError(f"0-bit patch mean overflows {range_dtype}")
    return out.astype(np.float64)


def quantize_rows(values: np.ndarray, bits: int, range_dtype: str = "float64"):
    """Quantize each row of ``values`` with its own min/max range.

    Returns ``(lo, hi, codes)`` where ``codes`` has the shape of ``values``.
    """
    _check_bits(bits)
    if bits == 0:
        raise ValueError("use the 0-bit rule for bit-width 0")
    x = np.asarray(values, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("cannot quantize non-finite values")
    lo, hi = store_range(x.min(axis=1), x.max(axis=1), range_dtype)
    levels = float(2**bits - 1)
    step = (hi - lo) / levels
    flat = step == 0
    safe = np.where(flat, 1.0, step)
    q = np.floor((x - lo[:, None]) / safe[:, None] + 0.5)
    q = np.clip(q, 0.0, levels)
    q[flat] = 0.0
    return lo, hi, q.astype(np.uint64)


def dequantize_rows(lo: np.ndarray, hi: np.ndarray, codes: np.ndarray, bits: int) -> np.ndarray:
    _check_bits(bits)
    levels = 2**bits - 1
    codes = np.asarray(codes, dtype=np.uint64)
    if codes.size and int(codes.max()) > levels:
        raise ValueError(f"code {int(codes.max())} does not fit in {bits} bits")
    lo = np.asarray(lo, dtype=np.float64)[:, None]
    hi = np.asarray(hi, dtype=np.float64)[:, None]
    step = (hi - lo) / float(levels)
    out = lo + codes.astype(np.float64) * step
    return np.where(hi == lo, lo, out)


def quantize_patch(
    coeffs: np.ndarray,
    bits: int,
    spatial_mean: float | None = None,
    *,
    zero_bit_mode: str = "spatial-mean",
    range_dtype: str = "float64",
) -> QuantizedPatch:
    """Quantize one DCT-domain patch at ``bits`` bits.

    At 0 bits no codes are kept and the range collapses to a single value:
    the spatial-domain patch mean (``spatial_mean``) by default, or the mean
    of the DCT coefficients in ``"dct-mean"`` mode.
    """
    _check_bits(bits)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if not np.isfinite(coeffs).all():
        raise ValueError("cannot quantize non-finite values")
    if bits == 0:
        if zero_bit_mode == "spatial-mean":
            if spatial_mean is None:
                raise ValueError("spatial-mean mode needs the spatial patch mean")
            value = float(spatial_mean)
        elif zero_bit_mode == "dct-mean":
            value = float(coeffs.mean())
        else:
            raise ValueError(f"unknown zero-bit mode {zero_bit_mode!r}")
        v = float(store_value(value, range_dtype))
        return QuantizedPatch(0, v, v)
    lo, hi, codes = quantize_rows(coeffs.reshape(1, -1), bits, range_dtype)
    return QuantizedPatch(bits, float(lo[0]), float(hi[0]), codes[0])


def dequantize_patch(qp: QuantizedPatch, p: int) -> np.ndarray:
    """Patch values recovered from ``qp``.

    For 0-bit patches this is the constant ``lo``; whether that is a spatial
    or DCT-domain value depends on the zero-bit mode used at compression.
    """
    if qp.bit_width == 0:
        return np.full((p, p), qp.lo, dtype=np.float64)
    codes = np.asarray(qp.codes)
    if codes.size != p * p:
        raise ValueError(f"expected {p * p} codes, got {codes.size}")
    out = dequantize_rows(np.array([qp.lo]), np.array([qp.hi]), codes.reshape(1, -1), qp.bit_width)
    return out.reshape(p, p)


# -- bit packing --------------------------------------------------------------

def packed_size(count: int, bits: int) -> int:
    return (count * bits + 7) // 8


def pack_rows(codes: np.ndarray, bits: int) -> np.ndarray:
    """Pack each row of codes LSB-first into its own byte-aligned stream.

    Returns a ``uint8`` array of shape ``(rows, packed_size(cols, bits))``.
    """
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"cannot pack codes at {bits} bits")
    codes = np.asarray(codes, dtype=np.uint64)
    if codes.ndim != 2:
        raise ValueError("pack_rows expects a 2-D code array")
    if codes.size and int(codes.max()) >> bits:
        raise ValueError(f"code {int(codes.max())} does not fit in {bits} bits")
    rows, cols = codes.shape
    shifts = np.arange(bits, dtype=np.uint64)
    bitarr = ((codes[:, :, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    bitarr = bitarr.reshape(rows, cols * bits)
    pad = (-cols * bits) % 8
    if pad:
        bitarr = np.concatenate([bitarr, np.zeros((rows, pad), dtype=np.uint8)], axis=1)
    return np.packbits(bitarr, axis=1, bitorder="little")


def unpack_rows(data: np.ndarray, bits: int, count: int) -> np.ndarray:
    """Inverse of :func:`pack_rows` for a ``(rows, nbytes)`` byte array."""
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"cannot unpack codes at {bits} bits")
    data = np.asarray(data, dtype=np.uint8)
    if data.shape[1] < packed_size(count, bits):
        raise ValueError(
            f"{data.shape[1]} bytes cannot hold {count} codes of {bits} bits"
        )
    bitarr = np.unpackbits(data, axis=1, bitorder="little")[:, : count * bits]
    bitarr = bitarr.reshape(len(data), count, bits).astype(np.uint64)
    weights = np.left_shift(np.uint64(1), np.arange(bits, dtype=np.uint64))
    return (bitarr * weights).sum(axis=2, dtype=np.uint64)


def pack_codes(codes, bits: int) -> bytes:
    codes = np.asarray(codes, dtype=np.uint64).reshape(1, -1)
    return pack_rows(codes, bits).tobytes()


def unpack_codes(data: bytes, bits: int, count: int) -> np.ndarray:
    need = packed_size(count, bits)
    if len(data) < need:
        raise ValueError(f"{len(data)} bytes cannot hold {count} codes of {bits} bits")
    arr = np.frombuffer(data[:need], dtype=np.uint8).reshape(1, need)
    return unpack_rows(arr, bits, count)[0]

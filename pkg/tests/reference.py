"""Straight-line brute-force reference for per-tensor compression.

Deliberately slow and literal: nested loops over Python floats, its own
basis, its own rounding to float32/float16 via ``struct`` and its own bit
packer. It imports nothing from ``patchdelta``.
"""

import math
import struct
from fractions import Fraction

_FMT = {"float32": "<f", "float16": "<e"}
_INT = {"float32": "<I", "float16": "<H"}


def to_storage_nearest(x, range_dtype):
    fmt = _FMT[range_dtype]
    return struct.unpack(fmt, struct.pack(fmt, x))[0]


def _step_toward(v, direction, range_dtype):
    """Adjacent representable value of ``v`` (already representable)."""
    fmt, ifmt = _FMT[range_dtype], _INT[range_dtype]
    bits = struct.unpack(ifmt, struct.pack(fmt, v))[0]
    sign_bit = 0x80000000 if range_dtype == "float32" else 0x8000
    if v == 0.0:
        bits = 1 if direction > 0 else sign_bit | 1
    elif (v > 0) == (direction > 0):
        bits += 1
    else:
        bits -= 1
    return struct.unpack(fmt, struct.pack(ifmt, bits))[0]


def to_storage_down(x, range_dtype):
    v = to_storage_nearest(x, range_dtype)
    if v > x:
        v = _step_toward(v, -1, range_dtype)
    return v


def to_storage_up(x, range_dtype):
    v = to_storage_nearest(x, range_dtype)
    if v < x:
        v = _step_toward(v, +1, range_dtype)
    return v


def seq_sum(values):
    """Plain left-to-right float accumulation starting from 0."""
    total = 0.0
    for v in values:
        total += v
    return total


def basis(p):
    c = []
    for k in range(p):
        s = math.sqrt(1.0 / p) if k == 0 else math.sqrt(2.0 / p)
        c.append([s * math.cos(math.pi * (2 * n + 1) * k / (2 * p)) for n in range(p)])
    return c


def dct_forward(x, c):
    p = len(x)
    tmp = [[seq_sum(c[k][n] * x[n][j] for n in range(p)) for j in range(p)] for k in range(p)]
    return [[seq_sum(tmp[k][j] * c[l][j] for j in range(p)) for l in range(p)] for k in range(p)]


def dct_inverse(y, c):
    p = len(y)
    tmp = [[seq_sum(c[k][n] * y[k][j] for k in range(p)) for j in range(p)] for n in range(p)]
    return [[seq_sum(tmp[n][l] * c[l][m] for l in range(p)) for m in range(p)] for n in range(p)]


def level_counts(levels, m):
    exact = [Fraction(str(r)) * m for _, r in levels]
    counts = [math.floor(e) for e in exact]
    left = m - sum(counts)
    by_frac = sorted(range(len(levels)), key=lambda i: (-(exact[i] - counts[i]), -levels[i][0]))
    for k in range(left):
        counts[by_frac[k % len(by_frac)]] += 1
    return counts


def pack_bits(codes, bits):
    stream = []
    for code in codes:
        for b in range(bits):
            stream.append((code >> b) & 1)
    while len(stream) % 8:
        stream.append(0)
    out = bytearray()
    for i in range(0, len(stream), 8):
        byte = 0
        for b in range(8):
            byte |= stream[i + b] << b
        out.append(byte)
    return bytes(out)


def compress(delta, p, levels, range_dtype="float32", zero_bit_mode="spatial-mean"):
    """Return (bit_widths, ranges, blob, gamma) for a 2-D list/array ``delta``."""
    rows = len(delta)
    cols = len(delta[0])
    prow = -(-rows // p) * p
    pcol = -(-cols // p) * p
    padded = [[0.0] * pcol for _ in range(prow)]
    for i in range(rows):
        for j in range(cols):
            padded[i][j] = float(delta[i][j])

    patches = []
    for br in range(prow // p):
        for bc in range(pcol // p):
            patches.append([[padded[br * p + i][bc * p + j] for j in range(p)] for i in range(p)])
    m = len(patches)

    scores = []
    for patch in patches:
        total = 0.0
        for row in patch:
            for v in row:
                total += v * v
        scores.append(math.sqrt(total))

    order = sorted(range(m), key=lambda k: (-scores[k], k))
    counts = level_counts(levels, m)
    widths = [0] * m
    pos = 0
    for (bits, _), count in zip(levels, counts):
        for k in order[pos : pos + count]:
            widths[k] = bits
        pos += count

    c = basis(p)
    ranges = []
    blob = b""
    recon_patches = []
    for k, patch in enumerate(patches):
        coeffs = dct_forward(patch, c)
        flat = [v for row in coeffs for v in row]
        bits = widths[k]
        if bits == 0:
            if zero_bit_mode == "spatial-mean":
                mean = seq_sum(v for row in patch for v in row) / (p * p)
            else:
                mean = seq_sum(flat) / (p * p)
            v = to_storage_nearest(mean, range_dtype)
            ranges.append((v, v))
            const = [[v] * p for _ in range(p)]
            recon_patches.append(const if zero_bit_mode == "spatial-mean" else dct_inverse(const, c))
            continue
        lo = to_storage_down(min(flat), range_dtype)
        hi = to_storage_up(max(flat), range_dtype)
        ranges.append((lo, hi))
        top = 2**bits - 1
        step = (hi - lo) / top
        codes = []
        for x in flat:
            if hi == lo:
                codes.append(0)
            else:
                q = math.floor((x - lo) / step + 0.5)
                codes.append(min(max(q, 0), top))
        blob += pack_bits(codes, bits)
        deq = [lo if hi == lo else lo + q * step for q in codes]
        recon_patches.append(dct_inverse([deq[i * p : (i + 1) * p] for i in range(p)], c))

    grid_cols = pcol // p
    recon = [[0.0] * cols for _ in range(rows)]
    for k, patch in enumerate(recon_patches):
        br, bc = divmod(k, grid_cols)
        for i in range(p):
            for j in range(p):
                r, cc = br * p + i, bc * p + j
                if r < rows and cc < cols:
                    recon[r][cc] = patch[i][j]

    num = seq_sum(abs(float(delta[i][j])) for i in range(rows) for j in range(cols))
    den = seq_sum(abs(recon[i][j]) for i in range(rows) for j in range(cols))
    gamma = 1.0 if num == 0 or den == 0 else to_storage_nearest(num / den, "float32")
    return widths, ranges, blob, gamma

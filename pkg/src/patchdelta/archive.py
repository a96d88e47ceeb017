"""The ``DDC1`` container for compressed delta archives.

Layout (all integers little-endian)::

    magic "DDC1" | version u16 | flags u16 | header length u64 | header | payload

``flags`` bit 0 marks float16 range storage (float32 otherwise). The header
starts with an echo of the compression config followed by the tensor
records; each record points at its blob inside the payload with an offset
relative to the payload start. Blobs are concatenated in record order.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from patchdelta.baselines import (
    SignCompressed,
    SvdGroup,
    SvdMixedCompressed,
    svd_blob,
    svd_blob_size,
    svd_unblob,
)
from patchdelta.checkpoint import DTYPES, ITEMSIZE, Tensor, widen
from patchdelta.codec import (
    FORMAT_VERSION,
    METHODS,
    CompressConfig,
    CompressedTensor,
    DeltaArchive,
    PassthroughRecord,
    _patch_code_sizes,
)
from patchdelta.patches import BitPlan
from patchdelta.quantizer import ZERO_BIT_MODES, packed_size

MAGIC = b"DDC1"
PREAMBLE = struct.Struct("<4sHHQ")
FLAG_F16_RANGES = 0x1

KIND_DCT, KIND_PASSTHROUGH, KIND_SIGN, KIND_SVD = 0, 1, 2, 3
_DTYPE_CODES = {name: i for i, name in enumerate(DTYPES)}
_RANGE_NP = {"float32": "<f4", "float16": "<f2"}


class ArchiveError(ValueError):
    """Malformed, truncated or unsupported archive."""


class _Writer:
    def __init__(self) -> None:
        self.buf = io.BytesIO()

    def put(self, fmt: str, *values) -> None:
        self.buf.write(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes) -> None:
        self.buf.write(data)

    def text(self, s: str) -> None:
        data = s.encode("utf-8")
        self.put("I", len(data))
        self.raw(data)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ArchiveError(f"header ends inside {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def many(self, fmt: str, what: str) -> tuple:
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))

    def get(self, fmt: str, what: str):
        values = self.many(fmt, what)
        return values[0] if len(values) == 1 else values

    def text(self, what: str) -> str:
        n = self.get("I", what)
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise ArchiveError(f"invalid UTF-8 in {what}") from None


def _blob_of(rec) -> bytes:
    if isinstance(rec, CompressedTensor):
        return rec.blob
    if isinstance(rec, SignCompressed):
        return rec.signs
    if isinstance(rec, SvdMixedCompressed):
        return svd_blob(rec)
    return rec.tensor.to_bytes()


def _write_config(w: _Writer, cfg: CompressConfig) -> None:
    w.put("BIB", METHODS.index(cfg.method), cfg.patch_size, ZERO_BIT_MODES.index(cfg.zero_bit_mode))
    w.put("B", len(cfg.bit_plan.levels))
    for bits, ratio in cfg.bit_plan.levels:
        w.put("Bd", bits, ratio)
    w.put("I", len(cfg.passthrough))
    for pattern in cfg.passthrough:
        w.text(pattern)


def _read_config(r: _Reader, range_dtype: str) -> CompressConfig:
    method, p, zbm = r.get("BIB", "config")
    q = r.get("B", "config")
    levels = tuple(r.get("Bd", "bit plan") for _ in range(q))
    patterns = tuple(r.text("passthrough pattern") for _ in range(r.get("I", "config")))
    try:
        return CompressConfig(
            patch_size=p, bit_plan=BitPlan(levels), range_dtype=range_dtype,
            zero_bit_mode=ZERO_BIT_MODES[zbm], passthrough=patterns, method=METHODS[method],
        )
    except (IndexError, ValueError) as exc:
        raise ArchiveError(f"invalid config echo: {exc}") from None


def _ranges_bytes(values: np.ndarray, range_dtype: str) -> bytes:
    return np.asarray(values, dtype=np.float64).astype(_RANGE_NP[range_dtype]).tobytes()


def encode_archive(archive: DeltaArchive, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_bytes(archive))


def encode_bytes(archive: DeltaArchive) -> bytes:
    if not archive.records:
        raise ArchiveError("refusing to write an empty archive")
    cfg = archive.config
    range_dtype = cfg.range_dtype
    w = _Writer()
    _write_config(w, cfg)
    w.put("Q", len(archive.records))
    blobs = []
    offset = 0
    for rec in archive.records:
        blob = _blob_of(rec)
        w.text(rec.name)
        shape = tuple(rec.tensor.shape if isinstance(rec, PassthroughRecord) else rec.shape)
        if isinstance(rec, CompressedTensor):
            kind, patch, zbm = KIND_DCT, rec.patch_size, ZERO_BIT_MODES.index(rec.zero_bit_mode)
            if rec.range_dtype != range_dtype:
                raise ArchiveError(f"tensor {rec.name!r} uses {rec.range_dtype} ranges, archive uses {range_dtype}")
        elif isinstance(rec, SignCompressed):
            kind, patch, zbm = KIND_SIGN, 0, 0
        elif isinstance(rec, SvdMixedCompressed):
            kind, patch, zbm = KIND_SVD, 0, 0
        else:
            kind, patch, zbm = KIND_PASSTHROUGH, 0, 0
        w.put("BBB", kind, _DTYPE_CODES[rec.dtype], len(shape))
        w.put(f"{len(shape)}Q", *shape)
        w.put("IB", patch, zbm)
        if kind == KIND_DCT:
            w.put("Q", rec.num_patches)
            w.raw(np.asarray(rec.bit_widths, dtype=np.uint8).tobytes())
            w.raw(_ranges_bytes(rec.ranges.reshape(-1), range_dtype))
            scale = rec.gamma
        elif kind == KIND_SVD:
            w.put("Q", len(rec.groups))
            w.raw(bytes(g.bits for g in rec.groups))
            for g in rec.groups:
                w.put("QQ", g.r_begin, g.r_end)
            for g in rec.groups:
                if g.rank:
                    quad = np.stack([g.u_lo, g.u_hi, g.v_lo, g.v_hi], axis=1)
                    w.raw(_ranges_bytes(quad.reshape(-1), range_dtype))
            scale = 1.0
        else:
            w.put("Q", 0)
            scale = rec.alpha if kind == KIND_SIGN else 1.0
        w.put("f", np.float32(scale))
        w.put("QQ", offset, len(blob))
        blobs.append(blob)
        offset += len(blob)

    header = w.buf.getvalue()
    flags = FLAG_F16_RANGES if range_dtype == "float16" else 0
    return PREAMBLE.pack(MAGIC, archive.version, flags, len(header)) + header + b"".join(blobs)


def decode_archive(path: str | os.PathLike) -> DeltaArchive:
    with open(path, "rb") as fh:
        return decode_bytes(fh.read())


def decode_bytes(data: bytes) -> DeltaArchive:
    if len(data) < PREAMBLE.size:
        raise ArchiveError("file too short for a DDC1 preamble")
    magic, version, flags, header_len = PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise ArchiveError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    if flags & ~FLAG_F16_RANGES:
        raise ArchiveError(f"unknown flags 0x{flags:04x}")
    if PREAMBLE.size + header_len > len(data):
        raise ArchiveError(f"header length {header_len} exceeds file size {len(data)}")
    range_dtype = "float16" if flags & FLAG_F16_RANGES else "float32"
    range_np = _RANGE_NP[range_dtype]
    range_size = np.dtype(range_np).itemsize
    r = _Reader(data[PREAMBLE.size : PREAMBLE.size + header_len])
    payload = data[PREAMBLE.size + header_len :]

    cfg = _read_config(r, range_dtype)
    count = r.get("Q", "record count")
    records = []
    expected_offset = 0
    for _ in range(count):
        name = r.text("tensor name")
        kind, dtype_code, rank = r.get("BBB", f"record {name!r}")
        if dtype_code >= len(DTYPES):
            raise ArchiveError(f"tensor {name!r}: unknown dtype code {dtype_code}")
        dtype = DTYPES[dtype_code]
        shape = r.many(f"{rank}Q", f"record {name!r}")
        patch, zbm = r.get("IB", f"record {name!r}")
        m = r.get("Q", f"record {name!r}")
        bits = np.frombuffer(r.take(m, f"bit-widths of {name!r}"), dtype=np.uint8).copy()

        if kind == KIND_DCT:
            if rank != 2 or patch < 1 or zbm >= len(ZERO_BIT_MODES):
                raise ArchiveError(f"tensor {name!r}: invalid DCT record")
            ranges = np.frombuffer(r.take(2 * m * range_size, f"ranges of {name!r}"), dtype=range_np)
            ranges = ranges.astype(np.float64).reshape(m, 2)
            expected_blob = int(_patch_code_sizes(bits, patch).sum())
        elif kind == KIND_SVD:
            if rank != 2:
                raise ArchiveError(f"tensor {name!r}: invalid SVD record")
            spans = [r.get("QQ", f"groups of {name!r}") for _ in range(m)]
            groups = []
            for (rb, re_), b in zip(spans, bits):
                g = SvdGroup(int(rb), int(re_), int(b))
                if g.rank < 0:
                    raise ArchiveError(f"tensor {name!r}: invalid rank range")
                if g.rank:
                    quad = np.frombuffer(r.take(4 * g.rank * range_size, f"ranges of {name!r}"),
                                         dtype=range_np).astype(np.float64).reshape(g.rank, 4)
                    g.u_lo, g.u_hi, g.v_lo, g.v_hi = (quad[:, i].copy() for i in range(4))
                groups.append(g)
            expected_blob = svd_blob_size(shape, [(g.r_begin, g.r_end, g.bits) for g in groups])
        elif kind == KIND_SIGN:
            if rank != 2:
                raise ArchiveError(f"tensor {name!r}: invalid sign record")
            expected_blob = packed_size(int(np.prod(shape)), 1)
        elif kind == KIND_PASSTHROUGH:
            expected_blob = int(np.prod(shape, dtype=np.int64)) * ITEMSIZE[dtype]
        else:
            raise ArchiveError(f"tensor {name!r}: unknown record kind {kind}")

        scale = np.float32(r.get("f", f"record {name!r}"))
        offset, length = r.get("QQ", f"record {name!r}")
        if offset != expected_offset or length != expected_blob:
            raise ArchiveError(
                f"tensor {name!r}: blob [{offset}, +{length}) inconsistent with "
                f"expected [{expected_offset}, +{expected_blob})"
            )
        if offset + length > len(payload):
            raise ArchiveError(
                f"tensor {name!r}: payload truncated, blob ends at {offset + length} "
                f"but only {len(payload)} payload bytes present"
            )
        blob = payload[offset : offset + length]
        expected_offset += length

        if kind == KIND_DCT:
            records.append(CompressedTensor(
                shape=shape, patch_size=patch, bit_widths=bits, ranges=ranges, blob=blob,
                gamma=scale, zero_bit_mode=ZERO_BIT_MODES[zbm], range_dtype=range_dtype,
                name=name, dtype=dtype,
            ))
        elif kind == KIND_SVD:
            smc = SvdMixedCompressed(shape, groups, range_dtype, name, dtype)
            svd_unblob(blob, smc)
            records.append(smc)
        elif kind == KIND_SIGN:
            records.append(SignCompressed(shape, scale, blob, name, dtype))
        else:
            records.append(PassthroughRecord(name, Tensor(widen(blob, dtype, shape), dtype)))

    if r.pos != len(r.data):
        raise ArchiveError(f"{len(r.data) - r.pos} unread header bytes")
    if expected_offset != len(payload):
        raise ArchiveError(f"payload holds {len(payload)} bytes, records cover {expected_offset}")
    if not records:
        raise ArchiveError("archive holds no records")
    return DeltaArchive(cfg, records, version)

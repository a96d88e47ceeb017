"""Fidelity and storage reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from patchdelta.baselines import (
    SignCompressed,
    SvdMixedCompressed,
    default_svd_groups,
    svd_blob_size,
)
from patchdelta.codec import CompressConfig, CompressedTensor, DeltaArchive, PassthroughRecord
from patchdelta.quantizer import packed_size


@dataclass
class FidelityReport:
    frobenius_rel: float
    max_abs: float
    mean_abs: float
    cosine: float

    def format(self) -> str:
        return (f"frob_rel={self.frobenius_rel:.6e} max_abs={self.max_abs:.6e} "
                f"mean_abs={self.mean_abs:.6e} cosine={self.cosine:.9f}")


def fidelity(original, reconstructed) -> FidelityReport:
    """Error of ``reconstructed`` against ``original``.

    Zero against zero counts as a perfect match (error 0, cosine 1). A zero
    vector against a nonzero one has cosine 0 and relative error 1.
    """
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(reconstructed, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    nd = np.linalg.norm(diff)
    if na > 0:
        rel = nd / na
    else:
        rel = 0.0 if nd == 0 else 1.0
    if na == 0 and nb == 0:
        cos = 1.0
    elif na == 0 or nb == 0:
        cos = 0.0
    else:
        cos = float(np.clip(np.dot(a.ravel(), b.ravel()) / (na * nb), -1.0, 1.0))
    n = max(a.size, 1)
    return FidelityReport(
        frobenius_rel=float(rel),
        max_abs=float(np.abs(diff).max()) if diff.size else 0.0,
        mean_abs=float(np.abs(diff).sum() / n),
        cosine=cos,
    )


def histogram(tensor, bins: int, value_range: tuple[float, float] | None = None):
    """Uniform-bin histogram as ``(left, right, count)`` rows.

    Values outside ``value_range`` are clamped into the edge bins so the
    counts always add up to the element count.
    """
    if bins < 1:
        raise ValueError("bins must be at least 1")
    x = np.asarray(tensor, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot histogram an empty tensor")
    if value_range is not None:
        lo, hi = value_range
        if not lo <= hi:
            raise ValueError(f"invalid histogram range {value_range}")
        x = np.clip(x, lo, hi)
    else:
        lo, hi = float(x.min()), float(x.max())
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi) if hi > lo else None)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def histogram_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_left", "bin_right", "count"])
    for left, right, count in rows:
        writer.writerow([repr(left), repr(right), count])
    return buf.getvalue()


# -- storage ------------------------------------------------------------------

@dataclass
class StorageEntry:
    """Bit counts of one archive record, summing to its exact serialized size."""

    name: str
    method: str
    params: int
    payload_bits: int
    range_bits: int
    scale_bits: int
    map_bits: int
    meta_bits: int
    dtype: str = "bfloat16"

    @property
    def total_bits(self) -> int:
        return self.payload_bits + self.range_bits + self.scale_bits + self.map_bits + self.meta_bits

    @property
    def bits_per_param(self) -> float:
        """Code and range bits per parameter, excluding per-tensor fields."""
        return (self.payload_bits + self.range_bits) / self.params

    @property
    def amortized_bits_per_param(self) -> float:
        return (self.payload_bits + self.range_bits + self.scale_bits) / self.params

    @property
    def alpha16(self) -> float:
        return self.bits_per_param / 16

    @property
    def alpha32(self) -> float:
        return self.bits_per_param / 32

    @property
    def alpha(self) -> float:
        return self.alpha32 if self.dtype == "float32" else self.alpha16


def _meta_bits(name: str, rank: int) -> int:
    # name length + name, kind/dtype/rank bytes, dims, patch size + zero-bit
    # mode, M, blob offset + length
    return 8 * (4 + len(name.encode("utf-8")) + 3 + 8 * rank + 5 + 8 + 16)


def storage_accounting(cfg: CompressConfig, shape: tuple[int, int], *, name: str = "",
                       dtype: str = "bfloat16") -> StorageEntry:
    """Analytic size of a compressed ``shape`` tensor under ``cfg``."""
    rows, cols = shape
    params = rows * cols
    meta = _meta_bits(name, 2)
    if cfg.method == "sign":
        return StorageEntry(name, "sign", params, 8 * packed_size(params, 1), 0, 32, 0, meta, dtype)
    if cfg.method == "svd":
        groups = default_svd_groups(shape, cfg.range_bits)
        ranks = sum(e - b for b, e, _ in groups)
        return StorageEntry(
            name, "svd", params, 8 * svd_blob_size(shape, groups), 4 * ranks * cfg.range_bits,
            32, 8 * len(groups) + 128 * len(groups), meta, dtype,
        )
    p = cfg.patch_size
    m = math.ceil(rows / p) * math.ceil(cols / p)
    counts = cfg.bit_plan.counts(m)
    payload = sum(c * 8 * packed_size(p * p, b) for (b, _), c in zip(cfg.bit_plan.levels, counts))
    return StorageEntry(name, "dct", params, payload, 2 * m * cfg.range_bits, 32, 8 * m, meta, dtype)


def record_storage(rec, range_bits: int) -> StorageEntry:
    """Exact bit counts of a record as :mod:`patchdelta.archive` writes it."""
    if isinstance(rec, PassthroughRecord):
        shape = rec.tensor.shape
        params = int(np.prod(shape, dtype=np.int64))
        return StorageEntry(rec.name, "passthrough", params, 8 * len(rec.tensor.to_bytes()), 0, 32, 0,
                            _meta_bits(rec.name, len(shape)), rec.dtype)
    rows, cols = rec.shape
    params = rows * cols
    meta = _meta_bits(rec.name, 2)
    if isinstance(rec, CompressedTensor):
        m = rec.num_patches
        return StorageEntry(rec.name, "dct", params, 8 * len(rec.blob), 2 * m * range_bits, 32,
                            8 * m, meta, rec.dtype)
    if isinstance(rec, SignCompressed):
        return StorageEntry(rec.name, "sign", params, 8 * len(rec.signs), 0, 32, 0, meta, rec.dtype)
    if isinstance(rec, SvdMixedCompressed):
        spans = [(g.r_begin, g.r_end, g.bits) for g in rec.groups]
        ranks = sum(g.rank for g in rec.groups)
        return StorageEntry(rec.name, "svd", params, 8 * svd_blob_size(rec.shape, spans),
                            4 * ranks * range_bits, 32, 136 * len(spans), meta, rec.dtype)
    raise TypeError(f"unknown record type {type(rec).__name__}")


@dataclass
class StorageReport:
    entries: list[StorageEntry]
    container_bits: int

    @property
    def compressed(self) -> list[StorageEntry]:
        return [e for e in self.entries if e.method != "passthrough"]

    @property
    def total_bits(self) -> int:
        return self.container_bits + sum(e.total_bits for e in self.entries)

    @property
    def total_bytes(self) -> int:
        return self.total_bits // 8

    @property
    def bits_per_param(self) -> float:
        """Code and range bits per compressed parameter."""
        ents = self.compressed
        params = sum(e.params for e in ents)
        return sum(e.payload_bits + e.range_bits for e in ents) / params if params else 0.0

    @property
    def amortized_bits_per_param(self) -> float:
        ents = self.compressed
        params = sum(e.params for e in ents)
        return sum(e.payload_bits + e.range_bits + e.scale_bits for e in ents) / params if params else 0.0

    def format(self) -> str:
        lines = []
        for e in self.entries:
            if e.method == "passthrough":
                lines.append(f"{e.name}: passthrough {e.params} params {e.payload_bits // 8} bytes")
            else:
                lines.append(
                    f"{e.name}: {e.method} {e.params} params {e.bits_per_param:.3f} bits/param "
                    f"(+{e.scale_bits} bits/tensor) alpha16={e.alpha16:.6f} alpha32={e.alpha32:.6f} "
                    f"map={e.map_bits} bits meta={e.meta_bits} bits"
                )
        n = len(self.compressed)
        lines.append(
            f"total: {self.bits_per_param:.3f} bits/param (+32 bits/tensor) over {n} compressed tensors; "
            f"alpha16={self.bits_per_param / 16:.6f} alpha32={self.bits_per_param / 32:.6f}; "
            f"{self.total_bytes} bytes"
        )
        return "\n".join(lines)


def _config_bits(cfg: CompressConfig) -> int:
    patterns = sum(4 + len(p.encode("utf-8")) for p in cfg.passthrough)
    return 8 * (6 + 1 + 9 * len(cfg.bit_plan.levels) + 4 + patterns)


def archive_storage(archive: DeltaArchive) -> StorageReport:
    """Storage report whose ``total_bytes`` equals the encoded archive size."""
    range_bits = archive.config.range_bits
    entries = [record_storage(r, range_bits) for r in archive.records]
    # preamble (magic, version, flags, header length) + config echo + record count
    container = 8 * 16 + _config_bits(archive.config) + 64
    return StorageReport(entries, container)

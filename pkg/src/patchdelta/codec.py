"""Per-tensor and whole-checkpoint compression in the patchwise DCT domain.

Compression of one delta matrix:

1. cut it into zero-padded ``p x p`` patches,
2. rank patches by L2 norm and hand out bit-widths from the bit plan,
3. DCT each patch and round-quantize it at its bit-width,
4. reconstruct in-process and store the scale ``gamma`` that restores the
   original sum of absolute values.

Reconstruction dequantizes, inverts the DCT, reassembles and multiplies by
``gamma``.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from patchdelta._sums import sequential_sum, sequential_total
from patchdelta.baselines import (
    SignCompressed,
    SvdMixedCompressed,
    sign_compress,
    sign_reconstruct,
    svd_mixed_compress,
    svd_mixed_reconstruct,
)
from patchdelta.checkpoint import (
    CheckpointError,
    NamedTensorMap,
    Tensor,
    compute_delta,
    round_to_dtype,
)
from patchdelta.dct import dct2, idct2
from patchdelta.patches import BitPlan, PatchGrid, allocate_bits, importance_scores, patchlize, reassemble
from patchdelta.quantizer import (
    RANGE_DTYPES,
    ZERO_BIT_MODES,
    dequantize_rows,
    pack_rows,
    packed_size,
    quantize_rows,
    store_value,
    unpack_rows,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
METHODS = ("dct", "sign", "svd")
DEFAULT_PASSTHROUGH = ("*embed*", "*lm_head*")


@dataclass
class CompressConfig:
    patch_size: int = 16
    bit_plan: BitPlan = field(default_factory=BitPlan)
    range_dtype: str = "float32"
    zero_bit_mode: str = "spatial-mean"
    passthrough: tuple[str, ...] = DEFAULT_PASSTHROUGH
    method: str = "dct"

    def __post_init__(self) -> None:
        if self.patch_size < 1:
            raise ValueError(f"patch size must be positive, got {self.patch_size}")
        if self.range_dtype not in ("float32", "float16"):
            raise ValueError(f"range dtype must be float32 or float16, got {self.range_dtype!r}")
        if self.zero_bit_mode not in ZERO_BIT_MODES:
            raise ValueError(f"unknown zero-bit mode {self.zero_bit_mode!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        self.passthrough = tuple(self.passthrough)

    @property
    def range_bits(self) -> int:
        return 8 * np.dtype(RANGE_DTYPES[self.range_dtype]).itemsize


@dataclass
class CompressedTensor:
    shape: tuple[int, int]
    patch_size: int
    bit_widths: np.ndarray  # (M,) uint8, raster order
    ranges: np.ndarray  # (M, 2) float64 lo/hi, exactly representable in range_dtype
    blob: bytes  # per-patch byte-aligned code streams, raster order, 0-bit patches absent
    gamma: np.float32
    zero_bit_mode: str = "spatial-mean"
    range_dtype: str = "float32"
    name: str = ""
    dtype: str = "float32"

    @property
    def num_patches(self) -> int:
        return len(self.bit_widths)


@dataclass
class PassthroughRecord:
    name: str
    tensor: Tensor

    @property
    def dtype(self) -> str:
        return self.tensor.dtype


Record = Union[CompressedTensor, SignCompressed, SvdMixedCompressed, PassthroughRecord]


@dataclass
class DeltaArchive:
    config: CompressConfig
    records: list[Record]
    version: int = FORMAT_VERSION


def _check_delta(delta) -> np.ndarray:
    x = np.asarray(delta, dtype=np.float32)
    if x.ndim != 2 or x.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("delta contains non-finite values")
    return x


def _patch_code_sizes(bit_widths: np.ndarray, p: int) -> np.ndarray:
    return np.array([packed_size(p * p, int(b)) for b in bit_widths], dtype=np.int64)


def compress_tensor(delta, cfg: CompressConfig | None = None, *, name: str = "",
                    dtype: str = "float32") -> CompressedTensor:
    cfg = cfg or CompressConfig()
    x = _check_delta(delta)
    p = cfg.patch_size
    grid = patchlize(x, p)
    plan = allocate_bits(importance_scores(grid), cfg.bit_plan)
    bit_widths = plan.per_patch
    coeffs = dct2(grid.patches)
    m = len(grid)
    ranges = np.zeros((m, 2), dtype=np.float64)
    chunks: list[bytes | None] = [None] * m

    for bits in np.unique(bit_widths):
        idx = np.flatnonzero(bit_widths == bits)
        if bits == 0:
            if cfg.zero_bit_mode == "spatial-mean":
                source = grid.patches[idx].astype(np.float64)
            else:
                source = coeffs[idx]
            means = sequential_sum(source.reshape(len(idx), -1)) / (p * p)
            stored = store_value(means, cfg.range_dtype)
            ranges[idx, 0] = ranges[idx, 1] = stored
            for k in idx:
                chunks[k] = b""
        else:
            lo, hi, codes = quantize_rows(coeffs[idx].reshape(len(idx), -1), int(bits), cfg.range_dtype)
            ranges[idx, 0], ranges[idx, 1] = lo, hi
            packed = pack_rows(codes, int(bits))
            for j, k in enumerate(idx):
                chunks[k] = packed[j].tobytes()

    ct = CompressedTensor(
        shape=x.shape, patch_size=p, bit_widths=bit_widths, ranges=ranges,
        blob=b"".join(chunks), gamma=np.float32(1.0), zero_bit_mode=cfg.zero_bit_mode,
        range_dtype=cfg.range_dtype, name=name, dtype=dtype,
    )
    ct.gamma = rescale_factor(x, _reconstruct_unscaled(ct))
    return ct


def rescale_factor(original: np.ndarray, recon: np.ndarray) -> np.float32:
    """Ratio of absolute-value sums, pinned to 1 when either sum is zero."""
    num = sequential_total(np.abs(np.asarray(original, dtype=np.float64)))
    den = sequential_total(np.abs(np.asarray(recon, dtype=np.float64)))
    if num == 0 or den == 0:
        return np.float32(1.0)
    gamma = np.float32(num / den)
    if not np.isfinite(gamma) or gamma <= 0:
        return np.float32(1.0)
    return gamma


def _reconstruct_unscaled(ct: CompressedTensor) -> np.ndarray:
    p = ct.patch_size
    m = ct.num_patches
    sizes = _patch_code_sizes(ct.bit_widths, p)
    if int(sizes.sum()) != len(ct.blob):
        raise ValueError(
            f"tensor {ct.name!r}: code blob holds {len(ct.blob)} bytes, expected {int(sizes.sum())}"
        )
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    raw = np.frombuffer(ct.blob, dtype=np.uint8)
    patches = np.empty((m, p, p), dtype=np.float64)
    lo, hi = ct.ranges[:, 0], ct.ranges[:, 1]

    for bits in np.unique(ct.bit_widths):
        idx = np.flatnonzero(ct.bit_widths == bits)
        if bits == 0:
            const = np.broadcast_to(lo[idx, None, None], (len(idx), p, p))
            patches[idx] = const if ct.zero_bit_mode == "spatial-mean" else idct2(const)
            continue
        nbytes = packed_size(p * p, int(bits))
        gather = offsets[idx][:, None] + np.arange(nbytes)
        codes = unpack_rows(raw[gather], int(bits), p * p)
        values = dequantize_rows(lo[idx], hi[idx], codes, int(bits))
        patches[idx] = idct2(values.reshape(len(idx), p, p))

    return reassemble(PatchGrid(patches, p, tuple(ct.shape)))


def reconstruct_tensor(ct: CompressedTensor) -> np.ndarray:
    return (_reconstruct_unscaled(ct) * np.float64(ct.gamma)).astype(np.float32)


def reconstruct_record(rec: Record) -> np.ndarray:
    if isinstance(rec, CompressedTensor):
        return reconstruct_tensor(rec)
    if isinstance(rec, SignCompressed):
        return sign_reconstruct(rec)
    if isinstance(rec, SvdMixedCompressed):
        return svd_mixed_reconstruct(rec)
    raise TypeError(f"record {rec.name!r} holds no compressed delta")


# -- checkpoints --------------------------------------------------------------

def _workers(threads: int) -> int:
    if threads == 0:
        return os.cpu_count() or 1
    return max(threads, 1)


def compress_checkpoint(base: NamedTensorMap, finetuned: NamedTensorMap,
                        cfg: CompressConfig | None = None, *, threads: int = 1) -> DeltaArchive:
    """Compress ``finetuned - base`` into an archive.

    ``threads=0`` uses every available core; output never depends on it.
    """
    cfg = cfg or CompressConfig()
    deltas = compute_delta(finetuned, base, min_dim=cfg.patch_size,
                           passthrough_patterns=cfg.passthrough)

    def work(entry):
        if cfg.method == "dct":
            return compress_tensor(entry.delta, cfg, name=entry.name, dtype=entry.dtype)
        if cfg.method == "sign":
            return sign_compress(entry.delta, name=entry.name, dtype=entry.dtype)
        return svd_mixed_compress(entry.delta, range_dtype=cfg.range_dtype,
                                  name=entry.name, dtype=entry.dtype)

    n = _workers(threads)
    if n == 1:
        compressed = [work(e) for e in deltas.compressible]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            compressed = list(pool.map(work, deltas.compressible))
    log.info("compressed %d tensors, %d passthrough", len(compressed), len(deltas.passthrough))

    by_name: dict[str, Record] = {r.name: r for r in compressed}
    by_name.update({name: PassthroughRecord(name, t) for name, t in deltas.passthrough})
    return DeltaArchive(cfg, [by_name[name] for name in deltas.order])


def apply_archive(base: NamedTensorMap, archive: DeltaArchive) -> NamedTensorMap:
    """Rebuild the fine-tuned checkpoint from ``base`` and a delta archive."""
    if archive.version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported archive version {archive.version}")
    out: NamedTensorMap = {}
    for rec in archive.records:
        if isinstance(rec, PassthroughRecord):
            out[rec.name] = Tensor(rec.tensor.values.copy(), rec.tensor.dtype)
            continue
        if rec.name not in base:
            raise CheckpointError(f"tensor {rec.name!r} missing from base checkpoint")
        b = base[rec.name]
        if b.shape != tuple(rec.shape):
            raise CheckpointError(
                f"tensor {rec.name!r}: archive shape {list(rec.shape)} vs base {list(b.shape)}"
            )
        if b.dtype != rec.dtype:
            raise CheckpointError(f"tensor {rec.name!r}: archive dtype {rec.dtype} vs base {b.dtype}")
        values = b.values + reconstruct_record(rec)
        out[rec.name] = Tensor(round_to_dtype(values, rec.dtype), rec.dtype)
    return out

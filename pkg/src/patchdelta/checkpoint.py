"""Reading and writing safetensors checkpoints, and delta computation.

Tensors are held in float32 working precision. The stored dtype tag is kept
alongside the values so a checkpoint can be written back in its original
format; narrowing rounds to nearest-even.
"""

from __future__ import annotations

import fnmatch
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

DTYPES = ("float32", "float16", "bfloat16")

_ST_CODES = {"float32": "F32", "float16": "F16", "bfloat16": "BF16"}
_ST_NAMES = {v: k for k, v in _ST_CODES.items()}
ITEMSIZE = {"float32": 4, "float16": 2, "bfloat16": 2}


class CheckpointError(ValueError):
    """Malformed, unsupported or incompatible checkpoint data."""


@dataclass
class Tensor:
    """Working float32 values of a tensor stored as ``dtype``.

    Values are rounded on construction so they are always representable in
    ``dtype``.
    """

    values: np.ndarray
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.dtype not in DTYPES:
            raise CheckpointError(f"unsupported dtype {self.dtype!r}")
        self.values = round_to_dtype(self.values, self.dtype)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    def to_bytes(self) -> bytes:
        return narrow(self.values, self.dtype).tobytes()


NamedTensorMap = dict[str, Tensor]


# -- dtype conversion ---------------------------------------------------------

def bf16_to_f32(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.uint32) << 16).view(np.float32)


def f32_to_bf16(values: np.ndarray) -> np.ndarray:
    bits = np.ascontiguousarray(values, dtype=np.float32).view(np.uint32)
    rounded = (bits + (((bits >> 16) & 1) + 0x7FFF)) >> 16
    nan = np.isnan(values)
    if nan.any():
        rounded = np.where(nan, (bits >> 16) | 0x0040, rounded)
    return rounded.astype(np.uint16)


def narrow(values: np.ndarray, dtype: str) -> np.ndarray:
    """Little-endian array of ``values`` stored as ``dtype``."""
    values = np.asarray(values, dtype=np.float32)
    if dtype == "float32":
        return values.astype("<f4")
    if dtype == "float16":
        return values.astype("<f2")
    if dtype == "bfloat16":
        return f32_to_bf16(values).astype("<u2")
    raise CheckpointError(f"unsupported dtype {dtype!r}")


def widen(raw: bytes, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    if dtype == "float32":
        out = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    elif dtype == "float16":
        out = np.frombuffer(raw, dtype="<f2").astype(np.float32)
    elif dtype == "bfloat16":
        out = bf16_to_f32(np.frombuffer(raw, dtype="<u2"))
    else:
        raise CheckpointError(f"unsupported dtype {dtype!r}")
    return out.reshape(shape)


def round_to_dtype(values: np.ndarray, dtype: str) -> np.ndarray:
    """Values after a narrow/widen round trip through ``dtype``."""
    if dtype == "float32":
        return np.asarray(values, dtype=np.float32)
    return widen(narrow(values, dtype).tobytes(), dtype, np.shape(values))


# -- safetensors --------------------------------------------------------------

def load_checkpoint(path: str | os.PathLike) -> NamedTensorMap:
    """Load every tensor of a safetensors file, in header order."""
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise CheckpointError(f"{path}: file too short for a safetensors header")
    (header_len,) = struct.unpack("<Q", data[:8])
    if header_len > len(data) - 8:
        raise CheckpointError(
            f"{path}: header length {header_len} exceeds file size {len(data)}"
        )
    try:
        header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header at offset 8: {exc}") from None
    if not isinstance(header, dict):
        raise CheckpointError(f"{path}: header is not a JSON object")

    payload_start = 8 + header_len
    payload_len = len(data) - payload_start
    tensors: NamedTensorMap = {}
    for name, info in header.items():
        if name == "__metadata__":
            continue
        if not name:
            raise CheckpointError(f"{path}: empty tensor name in header")
        try:
            st_dtype = info["dtype"]
            shape = tuple(int(d) for d in info["shape"])
            begin, end = (int(x) for x in info["data_offsets"])
        except (KeyError, TypeError, ValueError):
            raise CheckpointError(f"{path}: malformed header entry for tensor {name!r}") from None
        if st_dtype not in _ST_NAMES:
            raise CheckpointError(
                f"{path}: tensor {name!r} at offset {payload_start + begin} "
                f"has unsupported dtype {st_dtype}"
            )
        dtype = _ST_NAMES[st_dtype]
        if any(d < 0 for d in shape):
            raise CheckpointError(f"{path}: tensor {name!r} has negative dimension")
        if not 0 <= begin <= end:
            raise CheckpointError(f"{path}: tensor {name!r} has invalid offsets [{begin}, {end})")
        if end > payload_len:
            raise CheckpointError(
                f"{path}: tensor {name!r} extends to offset {payload_start + end} "
                f"beyond end of file ({len(data)} bytes)"
            )
        expected = int(np.prod(shape, dtype=np.int64)) * ITEMSIZE[dtype]
        if end - begin != expected:
            raise CheckpointError(
                f"{path}: tensor {name!r} at offset {payload_start + begin} holds "
                f"{end - begin} bytes, expected {expected} for shape {list(shape)}"
            )
        raw = data[payload_start + begin : payload_start + end]
        tensors[name] = Tensor(widen(raw, dtype, shape), dtype)
    return tensors


def save_checkpoint(tensors: NamedTensorMap | Iterable[tuple[str, Tensor]], path) -> None:
    """Write tensors as a safetensors file in iteration order."""
    items = list(tensors.items() if isinstance(tensors, dict) else tensors)
    if not items:
        raise CheckpointError("refusing to write an empty checkpoint")
    header: dict[str, dict] = {}
    blobs = []
    offset = 0
    for name, tensor in items:
        if not name:
            raise CheckpointError("tensor names must be non-empty")
        if name in header:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        blob = tensor.to_bytes()
        header[name] = {
            "dtype": _ST_CODES[tensor.dtype],
            "shape": list(tensor.shape),
            "data_offsets": [offset, offset + len(blob)],
        }
        blobs.append(blob)
        offset += len(blob)
    text = json.dumps(header, separators=(",", ":")).encode("utf-8")
    text += b" " * (-len(text) % 8)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        for blob in blobs:
            fh.write(blob)


# -- deltas -------------------------------------------------------------------

@dataclass
class DeltaEntry:
    name: str
    delta: np.ndarray
    dtype: str


@dataclass
class DeltaSet:
    compressible: list[DeltaEntry] = field(default_factory=list)
    passthrough: list[tuple[str, Tensor]] = field(default_factory=list)
    order: list[str] = field(default_factory=list)


def matches_any(name: str, patterns: Iterable[str]) -> bool:
    return any(fnmatch.fnmatchcase(name, pat) for pat in patterns)


def compute_delta(
    finetuned: NamedTensorMap,
    base: NamedTensorMap,
    *,
    min_dim: int = 1,
    passthrough_patterns: Iterable[str] = (),
) -> DeltaSet:
    """Split ``finetuned`` into float32 deltas against ``base`` and raw tensors.

    A tensor is compressible when it is 2-D, both sides are at least
    ``min_dim`` and its name matches none of ``passthrough_patterns``.
    """
    patterns = tuple(passthrough_patterns)
    for name in base:
        if name not in finetuned:
            raise CheckpointError(f"tensor {name!r} present in base checkpoint only")
    out = DeltaSet()
    for name, ft in finetuned.items():
        if name not in base:
            raise CheckpointError(f"tensor {name!r} present in fine-tuned checkpoint only")
        b = base[name]
        if b.shape != ft.shape:
            raise CheckpointError(
                f"tensor {name!r}: shape mismatch {list(ft.shape)} vs base {list(b.shape)}"
            )
        if b.dtype != ft.dtype:
            raise CheckpointError(f"tensor {name!r}: dtype mismatch {ft.dtype} vs base {b.dtype}")
        out.order.append(name)
        if len(ft.shape) == 2 and min(ft.shape) >= max(min_dim, 1) and not matches_any(name, patterns):
            out.compressible.append(DeltaEntry(name, ft.values - b.values, ft.dtype))
        else:
            out.passthrough.append((name, Tensor(ft.values.copy(), ft.dtype)))
    return out

"""Data-free compression of fine-tuning deltas in the block-DCT domain."""

from patchdelta.checkpoint import (
    CheckpointError,
    DeltaSet,
    Tensor,
    compute_delta,
    load_checkpoint,
    save_checkpoint,
)
from patchdelta.codec import (
    CompressConfig,
    CompressedTensor,
    DeltaArchive,
    apply_archive,
    compress_checkpoint,
    compress_tensor,
    reconstruct_tensor,
)
from patchdelta.archive import ArchiveError, decode_archive, encode_archive
from patchdelta.patches import BitPlan, allocate_bits, importance_scores, patchlize, reassemble

__all__ = [
    "ArchiveError",
    "BitPlan",
    "CheckpointError",
    "CompressConfig",
    "CompressedTensor",
    "DeltaArchive",
    "DeltaSet",
    "Tensor",
    "allocate_bits",
    "apply_archive",
    "compress_checkpoint",
    "compress_tensor",
    "compute_delta",
    "decode_archive",
    "encode_archive",
    "importance_scores",
    "load_checkpoint",
    "patchlize",
    "reassemble",
    "reconstruct_tensor",
    "save_checkpoint",
]

__version__ = "0.1.0"

"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error. Reports go to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from patchdelta.archive import MAGIC, ArchiveError, decode_archive, encode_archive
from patchdelta.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from patchdelta.codec import (
    DEFAULT_PASSTHROUGH,
    CompressConfig,
    apply_archive,
    compress_checkpoint,
    reconstruct_record,
)
from patchdelta.metrics import archive_storage, fidelity, histogram, histogram_csv
from patchdelta.patches import BitPlan

log = logging.getLogger("patchdelta")

EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bit_plan(text: str) -> BitPlan:
    try:
        return BitPlan.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patchdelta", description="Data-free delta compression of fine-tuned checkpoints.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compress", help="compress finetuned - base into a DDC1 archive")
    c.add_argument("--base", required=True, type=Path)
    c.add_argument("--finetuned", required=True, type=Path)
    c.add_argument("--out", required=True, type=Path)
    c.add_argument("--method", choices=("dct", "sign", "svd"), default="dct",
                   help="codec (default: dct)")
    c.add_argument("--patch-size", type=_positive, default=16, help="patch side p (default: 16)")
    c.add_argument("--bits", type=_bit_plan, default=BitPlan(), metavar="SPEC",
                   help="comma-separated bit:ratio pairs (default: 2:0.5,0:0.5)")
    c.add_argument("--range-dtype", choices=("f32", "f16"), default="f32",
                   help="storage of per-patch ranges (default: f32)")
    c.add_argument("--zero-bit-mode", choices=("spatial-mean", "dct-mean"), default="spatial-mean",
                   help="value kept for 0-bit patches (default: spatial-mean)")
    c.add_argument("--passthrough", nargs="*", metavar="PATTERN", default=list(DEFAULT_PASSTHROUGH),
                   help="glob patterns of tensors stored verbatim (default: %(default)s)")
    c.add_argument("--threads", type=_non_negative, default=1,
                   help="worker threads, 0 for all cores (default: 1)")

    d = sub.add_parser("decompress", help="rebuild a checkpoint from base + archive")
    d.add_argument("--base", required=True, type=Path)
    d.add_argument("--delta", required=True, type=Path)
    d.add_argument("--out", required=True, type=Path)

    i = sub.add_parser("inspect", help="storage report of an archive")
    i.add_argument("--delta", required=True, type=Path)

    f = sub.add_parser("diff", help="fidelity report between two checkpoints")
    f.add_argument("--a", required=True, type=Path)
    f.add_argument("--b", required=True, type=Path)

    h = sub.add_parser("histogram", help="value histogram of one tensor as CSV")
    h.add_argument("--input", required=True, type=Path,
                   help="safetensors checkpoint or DDC1 archive (reconstructed delta)")
    h.add_argument("--tensor", required=True)
    h.add_argument("--bins", type=_positive, default=100, help="number of bins (default: 100)")
    h.add_argument("--base", type=Path, help="subtract this checkpoint's tensor first")
    h.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"))
    h.add_argument("--out", type=Path, help="CSV path (default: stdout)")
    return parser


def cmd_compress(args) -> None:
    cfg = CompressConfig(
        patch_size=args.patch_size,
        bit_plan=args.bits,
        range_dtype={"f32": "float32", "f16": "float16"}[args.range_dtype],
        zero_bit_mode=args.zero_bit_mode,
        passthrough=tuple(args.passthrough),
        method=args.method,
    )
    base = load_checkpoint(args.base)
    finetuned = load_checkpoint(args.finetuned)
    archive = compress_checkpoint(base, finetuned, cfg, threads=args.threads)
    encode_archive(archive, args.out)
    log.info("wrote %s", args.out)
    print(archive_storage(archive).format())


def cmd_decompress(args) -> None:
    base = load_checkpoint(args.base)
    archive = decode_archive(args.delta)
    save_checkpoint(apply_archive(base, archive), args.out)
    log.info("wrote %s", args.out)


def cmd_inspect(args) -> None:
    archive = decode_archive(args.delta)
    cfg = archive.config
    print(f"format: DDC1 v{archive.version} method={cfg.method} patch_size={cfg.patch_size} "
          f"bits={cfg.bit_plan.spec()} range_dtype={cfg.range_dtype} zero_bit_mode={cfg.zero_bit_mode}")
    print(archive_storage(archive).format())


def cmd_diff(args) -> None:
    a = load_checkpoint(args.a)
    b = load_checkpoint(args.b)
    missing = [n for n in a if n not in b] + [n for n in b if n not in a]
    if missing:
        raise CheckpointError(f"tensor {missing[0]!r} present in only one checkpoint")
    flat_a, flat_b = [], []
    for name, ta in a.items():
        tb = b[name]
        if ta.shape != tb.shape:
            raise CheckpointError(f"tensor {name!r}: shape mismatch {list(ta.shape)} vs {list(tb.shape)}")
        print(f"{name}: {fidelity(ta.values, tb.values).format()}")
        flat_a.append(ta.values.ravel())
        flat_b.append(tb.values.ravel())
    print(f"aggregate: {fidelity(np.concatenate(flat_a), np.concatenate(flat_b)).format()}")


def _tensor_values(path: Path, name: str):
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        for rec in decode_archive(path).records:
            if rec.name == name:
                if hasattr(rec, "tensor"):
                    return rec.tensor.values
                return reconstruct_record(rec)
        raise KeyError(name)
    tensors = load_checkpoint(path)
    if name not in tensors:
        raise KeyError(name)
    return tensors[name].values


def cmd_histogram(args) -> None:
    values = _tensor_values(args.input, args.tensor)
    if args.base is not None:
        base = _tensor_values(args.base, args.tensor)
        if base.shape != values.shape:
            raise CheckpointError(f"tensor {args.tensor!r}: shape mismatch with base")
        values = values - base
    rows = histogram(values, args.bins, tuple(args.range) if args.range else None)
    text = histogram_csv(rows)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)


COMMANDS = {
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "inspect": cmd_inspect,
    "diff": cmd_diff,
    "histogram": cmd_histogram,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except KeyError as exc:
        print(f"error: unknown tensor {exc.args[0]!r}", file=sys.stderr)
        return EXIT_DATA
    except (CheckpointError, ArchiveError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())

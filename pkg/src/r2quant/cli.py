"""Command line front end: ``r2quant {gen,quantize,dequantize,analyze,bench,train}``.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 parse, 5 scheme mismatch, 6 bad file
format, 7 shape mismatch, 8 training diverged, 1 anything else from the
library.  Relative output paths are resolved against ``$R2QUANT_OUTPUT_DIR``
when it is set.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, lowbit_gemm, qat_toy, r2q, rtn
from .errors import (
    DivergenceDetected,
    FormatError,
    ParseError,
    R2QError,
    SchemeMismatch,
    ShapeMismatch,
)
from .tensor import GroupScheme, load_matrix, save_matrix

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_SCHEME = 5
EXIT_FORMAT = 6
EXIT_SHAPE = 7
EXIT_DIVERGED = 8

OUTPUT_DIR_ENV = "R2QUANT_OUTPUT_DIR"


def _out_path(p: str) -> Path:
    path = Path(p)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    return path


def _in_path(p: str) -> Path:
    path = Path(p)
    if not path.is_file():
        raise FileNotFoundError(f"no such input file: {p}")
    return path


def _write_text(dest: str | None, text: str) -> None:
    if dest is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        _out_path(dest).write_text(text if text.endswith("\n") else text + "\n")


def load_quantized(path):
    """Load an R2Q1 or RTN1 file, picking the reader by magic."""
    raw = Path(path).read_bytes()
    if raw[:4] == r2q.R2Q_MAGIC:
        return r2q.from_bytes(raw)
    if raw[:4] == rtn.RTN_MAGIC:
        return rtn.from_bytes(raw)
    raise FormatError(f"{path}: unrecognised magic {raw[:4]!r}")


def dequantize_any(t) -> np.ndarray:
    return r2q.dequantize(t) if isinstance(t, r2q.R2QTensor) else rtn.dequantize_rtn(t)


# -- subcommands -----------------------------------------------------------


def cmd_gen(args) -> int:
    m = analysis.sample_weights(args.dist, (args.rows, args.cols), seed=args.seed, scale=args.scale)
    save_matrix(_out_path(args.output), m)
    return EXIT_OK


def quantize_matrix(m, method: str, group_size: int, k: int = 2):
    scheme = GroupScheme(group_size)
    if method == "r2q":
        return r2q.quantize(m, scheme)
    return rtn.quantize_rtn(m, scheme, k)


def summary_line(m, t) -> str:
    w_hat = dequantize_any(t)
    report = analysis.layer_mse([m], [w_hat])
    occ = analysis.occupancy(t).digest()
    if isinstance(t, r2q.R2QTensor):
        cr = analysis.compression_ratio(m.shape, t.scheme, "r2q")
    else:
        cr = analysis.compression_ratio(m.shape, t.scheme, "rtn", t.k)
    return (
        f"mse={report.mean!r} cr={cr:.6f} "
        f"levels_used={occ['levels_used']:.4f} max_share={occ['max_share']:.4f}"
    )


def cmd_quantize(args) -> int:
    m = load_matrix(_in_path(args.input))
    t = quantize_matrix(m, args.method, args.group_size, args.k)
    out = _out_path(args.output)
    if isinstance(t, r2q.R2QTensor):
        r2q.save(out, t, args.format_version)
    else:
        rtn.save(out, t, args.format_version)
    print(summary_line(m, t))
    return EXIT_OK


def cmd_dequantize(args) -> int:
    t = load_quantized(_in_path(args.input))
    save_matrix(_out_path(args.output), dequantize_any(t))
    return EXIT_OK


def cmd_analyze(args) -> int:
    if args.input:
        m = load_matrix(_in_path(args.input))
    else:
        m = analysis.sample_weights(args.dist, (args.rows, args.cols), seed=args.seed)
    rows = analysis.compare(m, args.group_sizes, args.methods)
    if args.format == "csv":
        text = analysis.report_csv(rows)
    elif args.format == "long":
        text = analysis.report_long_csv(rows)
    else:
        text = analysis.report_text(rows)
    _write_text(args.output, text)
    return EXIT_OK


def _parse_dims(spec: str) -> tuple[int, int, int]:
    try:
        m, n, k = (int(v) for v in spec.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"dims must look like MxNxK, got {spec!r}") from exc
    if min(m, n, k) < 1:
        raise argparse.ArgumentTypeError("dims must be positive")
    return m, n, k


def cmd_bench(args) -> int:
    rows = lowbit_gemm.bench(args.dims, seed=args.seed, repeats=args.repeats)
    dest = open(_out_path(args.output), "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.DictWriter(dest, fieldnames=lowbit_gemm.BENCH_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if dest is not sys.stdout:
            dest.close()
    return EXIT_OK


def config_from_args(args) -> qat_toy.TrainConfig:
    return qat_toy.TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        quantizer=args.quantizer,
        group_size=args.group_size,
        loss=args.loss,
    )


def cmd_train(args) -> int:
    trace, model = qat_toy.train(config_from_args(args), return_model=True)
    trace.to_csv(_out_path(args.output))
    if args.checkpoint:
        qat_toy.save_checkpoint(model, _out_path(args.checkpoint))
    print(f"initial_loss={trace.initial_loss!r} final_loss={trace.final_loss!r}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="r2quant", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic weight matrix")
    g.add_argument("--dist", choices=analysis.DISTRIBUTIONS, default="gaussian")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    q = sub.add_parser("quantize", help="quantize a matrix file to R2Q1 or RTN1")
    q.add_argument("-i", "--input", required=True)
    q.add_argument("-o", "--output", required=True)
    q.add_argument("--method", choices=("r2q", "rtn"), default="r2q")
    q.add_argument("--group-size", type=int, default=-1)
    q.add_argument("--k", type=int, default=2, help="RTN bit width")
    q.add_argument("--format-version", type=int, choices=(1, 2), default=2,
                   help="1: 32-bit reals, 2: 64-bit reals (lossless)")
    q.set_defaults(func=cmd_quantize)

    d = sub.add_parser("dequantize", help="dequantize an R2Q1/RTN1 file to a matrix file")
    d.add_argument("-i", "--input", required=True)
    d.add_argument("-o", "--output", required=True)
    d.set_defaults(func=cmd_dequantize)

    a = sub.add_parser("analyze", help="compare methods and group sizes")
    a.add_argument("-i", "--input")
    a.add_argument("--dist", choices=analysis.DISTRIBUTIONS, default="gaussian")
    a.add_argument("--rows", type=int, default=512)
    a.add_argument("--cols", type=int, default=512)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--group-sizes", type=int, nargs="+", default=[-1, 64])
    a.add_argument("--methods", nargs="+", default=["r2q", "rtn"])
    a.add_argument("--format", choices=("text", "csv", "long"), default="text")
    a.add_argument("-o", "--output")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bench", help="benchmark the dense and addition-only GEMM paths")
    b.add_argument("--dims", type=_parse_dims, nargs="+", default=[(64, 64, 128)],
                   help="one or more MxNxK triples")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("-o", "--output")
    b.set_defaults(func=cmd_bench)

    defaults = qat_toy.TrainConfig()
    t = sub.add_parser("train", help="run the toy distillation experiment")
    t.add_argument("--quantizer", choices=qat_toy.QUANTIZERS, default=defaults.quantizer)
    t.add_argument("--group-size", type=int, default=defaults.group_size)
    t.add_argument("--steps", type=int, default=defaults.steps)
    t.add_argument("--lr", type=float, default=defaults.lr)
    t.add_argument("--batch-size", type=int, default=defaults.batch_size)
    t.add_argument("--loss", choices=tuple(qat_toy.LOSSES), default=defaults.loss)
    t.add_argument("--seed", type=int, default=defaults.seed)
    t.add_argument("-o", "--output", required=True, help="metrics CSV")
    t.add_argument("--checkpoint", help="directory for the trained student")
    t.set_defaults(func=cmd_train)
    return p


_EXIT_FOR = (
    (SchemeMismatch, EXIT_SCHEME),
    (FormatError, EXIT_FORMAT),
    (ParseError, EXIT_PARSE),
    (ShapeMismatch, EXIT_SHAPE),
    (DivergenceDetected, EXIT_DIVERGED),
    (R2QError, EXIT_ERROR),
    (OSError, EXIT_IO),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (R2QError, OSError, ValueError) as exc:
        print(f"r2quant {args.command}: {exc}", file=sys.stderr)
        for cls, code in _EXIT_FOR:
            if isinstance(exc, cls):
                return code
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""``tcsr`` command line: train, eval, infer, analyze, gradcheck.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return h, w


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tcsr", description="Neighborhood-attention super-resolution.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on a folder of HR PNGs")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--data", required=True, type=Path, help="HR training images")
    t.add_argument("--lr-data", type=Path, help="pre-made LR images matching --data")
    t.add_argument("--out", required=True, type=Path, help="checkpoint path")
    t.add_argument("--curve", type=Path, help="loss curve CSV (default: OUT.csv)")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--dtype", choices=("float32", "float64"), default="float32")

    e = sub.add_parser("eval", help="PSNR/SSIM on the Y channel")
    e.add_argument("--ckpt", type=Path)
    e.add_argument("--hr", required=True, type=Path)
    e.add_argument("--lr", type=Path, help="pre-made LR images (default: bicubic reduction)")
    e.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    e.add_argument("--method", choices=("model", "bicubic", "identity"), default="model",
                   help="'identity' scores HR against itself and needs no checkpoint")
    e.add_argument("--tile", type=int)
    e.add_argument("--csv", type=Path)

    i = sub.add_parser("infer", help="super-resolve one PNG")
    i.add_argument("--ckpt", required=True, type=Path)
    i.add_argument("--input", required=True, type=Path)
    i.add_argument("--output", required=True, type=Path)
    i.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    i.add_argument("--tile", type=int, help="LR tile size; tiles overlap by the kernel size")

    a = sub.add_parser("analyze", help="parameter and FLOP table")
    a.add_argument("--config", required=True, type=Path)
    a.add_argument("--hw", type=_hw, default=(64, 64), help="LR input size HxW")
    a.add_argument("--csv", action="store_true", help="CSV instead of a text table")

    g = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    g.add_argument("--op", help="single op name")
    g.add_argument("--seeds", type=int, default=3)
    for name, sp in sub.choices.items():
        sp.set_defaults(_parser=sp)
    return p


def _train(args) -> int:
    from .io import read_config
    from .model import init_model
    from .train import train
    from dataclasses import replace

    mc, tc = read_config(args.config)
    overrides = {k: v for k, v in (("steps", args.steps), ("seed", args.seed)) if v is not None}
    tc = replace(tc, **overrides)
    model = init_model(mc, seed=tc.seed, dtype=np.dtype(args.dtype))
    curve = args.curve or args.out.with_suffix(args.out.suffix + ".csv")
    result = train(model, tc, args.data, out=args.out, lr_data=args.lr_data, curve=curve)
    last = f"{result.losses[-1]:.6f}" if result.losses else "n/a"
    print(f"trained {tc.steps} steps, final loss {last}; checkpoint {args.out}, curve {curve}")
    return EXIT_OK


def _eval(args) -> int:
    from .io import load_model
    from .train import evaluate

    model = None
    if args.method == "model":
        if args.ckpt is None:
            args._parser.error("--ckpt is required unless --method is bicubic or identity")
        model = load_model(args.ckpt)
    res = evaluate(model, args.hr, args.scale, lr_data=args.lr, method=args.method, tile=args.tile)
    print(res.to_text())
    if args.csv:
        args.csv.write_text(res.to_csv())
    return EXIT_OK


def _infer(args) -> int:
    from .data import load_image, save_image
    from .io import load_model
    from .train import super_resolve

    model = load_model(args.ckpt)
    if model.config.scale != args.scale:
        raise ValueError(f"checkpoint is for x{model.config.scale}, asked for x{args.scale}")
    lr = load_image(args.input).astype(model.params["shallow.weight"].dtype)
    sr = super_resolve(lr, model, args.tile)
    save_image(args.output, sr)
    print(f"{args.input} {lr.shape[1]}x{lr.shape[0]} -> {args.output} {sr.shape[1]}x{sr.shape[0]}")
    return EXIT_OK


def _analyze(args) -> int:
    from .io import read_config
    from .model import count_params, init_model

    mc, _ = read_config(args.config)
    h, w = args.hw
    report = count_params(init_model(mc, seed=0), h, w)
    print(report.to_csv() if args.csv else report.to_text(), end="" if args.csv else "\n")
    return EXIT_OK


def _gradcheck(args) -> int:
    from . import gradcheck

    ops = [args.op] if args.op else list(gradcheck.OPS)
    if args.op and args.op not in gradcheck.OPS:
        args._parser.error(f"unknown op {args.op!r} (choose from {', '.join(gradcheck.OPS)})")
    ok = True
    for report in gradcheck.run_all(ops, range(args.seeds)):
        print("\n".join(report.lines()))
        ok &= report.passed
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_ERROR


COMMANDS = {"train": _train, "eval": _eval, "infer": _infer, "analyze": _analyze,
            "gradcheck": _gradcheck}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s")
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"tcsr: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: gen-data, train, eval, predict, grad-check, ablate.

Exit codes: 0 success, 1 usage error, 2 data/contract error, 3 numerical
failure (non-finite values or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .metrics import ConfusionMatrix
from .model import HfcnConfig, build, forward, predict
from .objective import LAMBDA_GROUPS, composite_loss, validate_lambdas
from .tensor import NonFiniteError, Tensor, grad_check
from .trainer import CheckpointError, TrainConfig, evaluate, load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _lambdas(text: str) -> tuple[float, ...]:
    if text.lower() in LAMBDA_GROUPS:
        return LAMBDA_GROUPS[text.lower()]
    try:
        return validate_lambdas(float(v) for v in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _model_flags(p):
    g = p.add_argument_group("model shape")
    g.add_argument("--widths", type=_int_list, default=(8, 16, 32, 48, 48), help="five encoder widths")
    g.add_argument("--convs", type=_int_list, default=(2, 2, 3, 3, 3), help="convolutions per encoder block")
    g.add_argument("--head", type=int, default=None, help="head channels (default: last width)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hfcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoint and log")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--lambdas", type=_lambdas, default=LAMBDA_GROUPS["model7"],
                   help="five pre-output proportions or a group name model1..model9")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-every", type=int, default=0)
    _model_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="val", choices=dataio.SPLITS)
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--batch", type=int, default=10)

    p = sub.add_parser("predict", help="write a colourised prediction for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("grad-check", help="finite-difference check of the composite loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--lambdas", type=_lambdas, default=LAMBDA_GROUPS["model7"])

    p = sub.add_parser("ablate", help="train every proportion group and compare")
    p.add_argument("--manifest", required=True)
    p.add_argument("--groups", default=",".join(LAMBDA_GROUPS))
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="val", choices=dataio.SPLITS)
    p.add_argument("--out", default=None, help="write the table as JSON here")
    _model_flags(p)
    return parser


def _echo_config(args):
    cfg = {k: v for k, v in vars(args).items()}
    print("config: " + json.dumps(cfg, default=list, sort_keys=True))


def _model_config(args, manifest) -> HfcnConfig:
    h, w = _split_size(manifest)
    return HfcnConfig(manifest.num_classes, args.widths, args.convs, args.head, 3, h, w).validate()


def _split_size(manifest) -> tuple[int, int]:
    pairs = manifest.pairs("train") or manifest.pairs("val") or manifest.pairs("test")
    if not pairs:
        raise ValueError("manifest has no samples")
    gray = dataio.read_netpbm(pairs[0][1])
    return gray.shape


def cmd_gen_data(args):
    m = dataio.gen_synthetic(args.out, args.count, args.size, args.classes, args.seed)
    print(f"wrote {sum(len(v) for v in m.splits.values())} pairs to {args.out}")


def cmd_train(args):
    manifest = dataio.load_manifest(args.manifest)
    model_cfg = _model_config(args, manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tc = TrainConfig(args.lr, args.batch, args.epochs, args.momentum, args.lambdas, args.seed,
                     str(out / "model.ckpt"), args.eval_every)
    _, lines = train(model_cfg, tc, manifest, log_path=out / "train.log")
    for line in lines:
        print(line)
    print(f"checkpoint: {out / 'model.ckpt'}")


def evaluate_split(predict_fn, manifest, split: str, batch_size: int = 10):
    """Confusion-matrix report for ``predict_fn(batch) -> (N, H, W) labels``."""
    data = dataio.Dataset(manifest, split)
    cm = ConfusionMatrix(manifest.num_classes, manifest.ignore_index)
    for batch in data.batches(batch_size, seed=None):
        cm.accumulate(predict_fn(batch), batch.labels)
    return cm.report()


def cmd_eval(args):
    ckpt = load_checkpoint(args.ckpt)
    manifest = dataio.load_manifest(args.manifest)
    if ckpt.config.num_classes != manifest.num_classes:
        raise ValueError(f"checkpoint has {ckpt.config.num_classes} classes, manifest has {manifest.num_classes}")
    report = evaluate_split(lambda b: predict(forward(ckpt.params, b.images)), manifest, args.split, args.batch)
    print(report.to_text(manifest.classes))
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")


def cmd_predict(args):
    ckpt = load_checkpoint(args.ckpt)
    image = dataio.decode_image(args.image)
    labels = predict(forward(ckpt.params, image))
    palette = ckpt.meta.get("palette") or dataio.default_palette(ckpt.config.num_classes)
    dataio.export_colorized(args.out, labels, palette, ckpt.meta.get("ignore_index"))
    print(f"wrote {args.out}")


def run_grad_check(seed: int, tol: float, h: float, lambdas=LAMBDA_GROUPS["model7"]):
    cfg = HfcnConfig.minimal(num_classes=2, size=32)
    params = build(cfg, seed)
    rng = np.random.default_rng([seed, 1])
    x = Tensor(rng.random((1, 3, 32, 32)))
    labels = rng.integers(0, 2, size=(1, 32, 32))
    return grad_check(lambda ps: composite_loss(forward(ps, x), labels, lambdas).loss, params, h, tol, seed=seed)


def cmd_grad_check(args):
    report = run_grad_check(args.seed, args.tol, args.h, args.lambdas)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_NUMERIC


def run_ablation(manifest, groups, model_cfg, epochs, lr, batch, momentum, seed, split="val"):
    """Train one model per proportion group; returns a list of result rows."""
    eval_data = dataio.Dataset(manifest, split if manifest.pairs(split) else "train")
    rows = []
    for name in groups:
        tc = TrainConfig(lr, batch, epochs, momentum, LAMBDA_GROUPS[name], seed)
        ckpt, lines = train(model_cfg, tc, manifest)
        report = evaluate(ckpt.params, eval_data, batch)
        rows.append({"group": name, "lambdas": list(tc.lambdas),
                     "final_loss": float(lines[-1].split("\t")[1]), **report.to_dict()})
    return rows


def format_ablation(rows) -> str:
    def pct(v):
        return "   n/a" if v is None else f"{100 * v:6.2f}"

    lines = [f"{'Method':<8}{'Proportion group':<30}{'Mean IoU (%)':>14}{'Mean pix.acc (%)':>18}"
             f"{'Pixel acc (%)':>15}"]
    for r in rows:
        lam = ", ".join(f"{v:g}" for v in r["lambdas"])
        lines.append(f"{r['group'].capitalize():<8}{lam:<30}{pct(r['mean_iou']):>14}"
                     f"{pct(r['mean_pixel_accuracy']):>18}{pct(r['pixel_accuracy']):>15}")
    return "\n".join(lines)


def cmd_ablate(args):
    groups = [g.strip().lower() for g in args.groups.split(",") if g.strip()]
    unknown = [g for g in groups if g not in LAMBDA_GROUPS]
    if unknown:
        raise UsageError(f"unknown group(s): {', '.join(unknown)}")
    manifest = dataio.load_manifest(args.manifest)
    rows = run_ablation(manifest, groups, _model_config(args, manifest), args.epochs, args.lr, args.batch,
                        args.momentum, args.seed, args.split)
    print(format_ablation(rows))
    if any(not math.isfinite(r["final_loss"]) for r in rows):
        return EXIT_NUMERIC
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "grad-check": cmd_grad_check,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _echo_config(args)
    try:
        code = COMMANDS[args.command](args)
    except UsageError as e:
        print(f"hfcn: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as e:
        print(f"hfcn: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, CheckpointError) as e:
        print(f"hfcn: error: {e}", file=sys.stderr)
        return EXIT_DATA
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

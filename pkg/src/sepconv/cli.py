"""Command-line entry point: ``sepconv <command> [flags]``.

Data goes to standard output, the resolved configuration and all diagnostics
to standard error. Commands never write into the data directory; files go
under ``--out-dir`` (default ``$SEPCONV_OUT_DIR`` or ``./sepconv-out``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .data import DatasetManifest, ImageLoadError, ManifestError, batches, build_manifest, split_dataset
from .dedup import DEFAULT_THRESHOLD, dedup_scan
from .model import STANDARD_RESOLUTIONS, REFERENCE_MODELS, VARIANTS, HEADS, ModelConfig, build_model, count_costs
from .report import render_report
from .train import MetricsError, TrainConfig, evaluate, fit, predict

OUT_DIR_ENV = "SEPCONV_OUT_DIR"
DEFAULT_OUT_DIR = "sepconv-out"
USER_ERRORS = (ManifestError, CheckpointError, ImageLoadError, MetricsError, ValueError, OSError)


class CommandError(Exception):
    pass


def _unit_alpha(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"alpha must be in (0, 1], got {value}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _show_config(args, **extra) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "handler"}
    config.update(extra)
    print("config: " + json.dumps(config, sort_keys=True), file=sys.stderr)


def _load_manifest(args) -> DatasetManifest:
    """The manifest named by ``--manifest`` (rooted at ``--data-dir``), or a fresh default split."""
    data_dir = Path(args.data_dir)
    if not data_dir.is_dir():
        raise CommandError(f"data directory {data_dir} does not exist")
    if args.manifest:
        return DatasetManifest.read(args.manifest, root=data_dir)
    return split_dataset(build_manifest(data_dir), seed=args.seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_cost(args) -> int:
    _show_config(args)
    report = count_costs(ModelConfig(alpha=args.alpha, resolution=args.resolution, variant=args.variant,
                                     head=args.head))
    print(f"{'layer':<18}{'kind':<12}{'mult-adds':>16}{'params':>12}")
    for row in report.rows:
        print(f"{row.name:<18}{row.kind:<12}{row.mult_adds:>16,}{row.params:>12,}")
    print(f"total: {report.summary()}")
    print("reference models:")
    for name, accuracy, madds, params in REFERENCE_MODELS:
        print(f"  {name}: {madds}M mult-adds, {params}M params, ImageNet top-1 {accuracy:.1%}")
    return 0


def cmd_split(args) -> int:
    _show_config(args)
    data_dir = Path(args.data_dir)
    if not data_dir.is_dir():
        raise CommandError(f"data directory {data_dir} does not exist")
    manifest = split_dataset(build_manifest(data_dir, workers=args.workers), fractions=args.fractions,
                             counts=args.counts, seed=args.seed)
    path = _out_dir(args) / "manifest.csv"
    manifest.write(path)
    counts = manifest.counts()
    print(f"{'class':<16}{'train':>8}{'val':>8}{'test':>8}")
    for label, name in enumerate(manifest.class_names):
        print(f"{name:<16}" + "".join(f"{counts.get((s, label), 0):>8}" for s in ("train", "val", "test")))
    print(f"manifest: {path}")
    return 0


def cmd_dedup(args) -> int:
    _show_config(args)
    report = dedup_scan(_load_manifest(args), threshold=args.threshold)
    print(report.summary())
    for cluster in report.leaks:
        print(f"leak [{', '.join(cluster.splits)}]: {' '.join(cluster.paths)}")
    return 0


def cmd_train(args) -> int:
    manifest = _load_manifest(args)
    leaks = dedup_scan(manifest).leaks
    if leaks and not args.allow_leaks:
        raise CommandError(
            f"refusing to train: {len(leaks)} duplicate cluster(s) span more than one split, "
            "which would inflate validation and test accuracy (pass --allow-leaks to override)"
        )
    model_config = ModelConfig(alpha=args.alpha, resolution=args.resolution, variant=args.variant,
                               head="binary_head", seed=args.seed)
    train_config = TrainConfig(batch_size=args.batch_size, epochs=args.epochs, initial_lr=args.lr,
                               seed=args.seed, interactive=args.interactive)
    out = _out_dir(args)
    _show_config(args, model=model_config.to_dict(), train=vars(train_config), leaks=len(leaks))
    manifest.write(out / "manifest.csv")
    state = fit(build_model(model_config), manifest, train_config, out_dir=out,
                metrics_path=out / "metrics.csv")
    print(f"epochs: {len(state.history)}")
    print(f"best val accuracy: {state.best_val_accuracy:.4f}")
    print(f"checkpoint: {out / 'best.ckpt'}")
    print(f"metrics: {out / 'metrics.csv'}")
    return 0


def cmd_eval(args) -> int:
    _show_config(args)
    model, _ = load_checkpoint(args.checkpoint)
    manifest = _load_manifest(args)
    loss, accuracy, confusion = evaluate(model, batches(manifest, args.split, args.batch_size,
                                                         model.config.resolution, seed=None))
    print(f"samples {int(confusion.sum())}")
    print(f"loss {loss:.4f}")
    print(f"accuracy {accuracy:.4f}")
    print("confusion (rows true, columns predicted):")
    for row in confusion:
        print("  " + " ".join(f"{v:>6d}" for v in row))
    return 0


def cmd_predict(args) -> int:
    _show_config(args)
    model, _ = load_checkpoint(args.checkpoint)
    for image in args.images:
        label, probs = predict(model, image)
        print(f"{image}\t{label}\t" + "\t".join(f"{p:.6f}" for p in probs))
    return 0


def cmd_report(args) -> int:
    _show_config(args)
    written = render_report(args.metrics, _out_dir(args))
    for key, path in written.items():
        print(f"{key}: {path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_data_flags(p, manifest_required=False):
    p.add_argument("--data-dir", required=True, help="directory with one subdirectory per class")
    p.add_argument("--manifest", required=manifest_required,
                   help="split manifest (paths relative to --data-dir); default: build and split afresh")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sepconv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost", help="per-layer mult-adds and parameters")
    p.add_argument("--alpha", type=_unit_alpha, default=1.0)
    p.add_argument("--resolution", type=int, choices=STANDARD_RESOLUTIONS, default=224)
    p.add_argument("--variant", choices=VARIANTS, default="separable")
    p.add_argument("--head", choices=HEADS, default="imagenet1000")
    p.set_defaults(handler=cmd_cost)

    p = sub.add_parser("split", help="hash a class-per-directory dataset and assign train/val/test")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--fractions", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    group.add_argument("--counts", type=_non_negative_int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--workers", type=_positive_int, default=4)
    p.add_argument("--out-dir")
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("dedup", help="report duplicate clusters and cross-split leaks")
    _add_data_flags(p)
    p.add_argument("--threshold", type=_non_negative_int, default=DEFAULT_THRESHOLD)
    p.set_defaults(handler=cmd_dedup)

    p = sub.add_parser("train", help="train the binary classifier")
    _add_data_flags(p)
    p.add_argument("--alpha", type=_unit_alpha, default=1.0)
    p.add_argument("--resolution", type=_positive_int, default=224)
    p.add_argument("--variant", choices=VARIANTS, default="separable")
    p.add_argument("--batch-size", type=_positive_int, default=80)
    p.add_argument("--epochs", type=_non_negative_int, default=15)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--interactive", action="store_true", help="ask for more epochs after the last one")
    p.add_argument("--allow-leaks", action="store_true", help="train even if duplicates span splits")
    p.add_argument("--out-dir")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="loss, accuracy and confusion matrix of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p, manifest_required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--batch-size", type=_positive_int, default=80)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("predict", help="classify images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("report", help="SVG loss and accuracy charts from a metrics file")
    p.add_argument("metrics")
    p.add_argument("--out-dir")
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(message)s")
    try:
        return args.handler(args)
    except (CommandError, *USER_ERRORS) as exc:
        print(f"sepconv {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

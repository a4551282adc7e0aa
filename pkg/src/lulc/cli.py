"""Command-line entry point: ``lulc <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error (nothing written), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import difflib
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from .container import atomic_write_text
from .dataset import (
    DatasetIndex, compute_mean, fold_csv, kfold, load_images, normalize, read_split_csv, scan_dataset, split,
)
from .evaluation import cross_validate, evaluate, merge_classes, per_class_accuracy
from .network import (
    build_network, caffenet_spec, extract_features, from_checkpoint, load_checkpoint, replace_head,
    save_checkpoint, toy_cnn_spec,
)
from .ppm import write_ppm
from .svm import load_svm, read_features_csv, save_svm, svm_predict, svm_train_ovr, write_features_csv
from .trainer import TrainConfig, predict, train
from .viz import render_filter_grid

DEFAULT_SEED = 42
SUBCOMMANDS = ("augment", "split", "train", "finetune", "extract", "svm-train", "svm-predict",
               "eval", "cross-validate", "viz-filters")


class UsageError(Exception):
    pass


def _option_strings(parser) -> list[str]:
    out = []
    for action in parser._actions:
        out += action.option_strings
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                out += _option_strings(sub)
    return sorted(set(out))


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        if "unrecognized arguments" in message:
            options = _option_strings(self)
            for token in message.split(":", 1)[1].split():
                close = difflib.get_close_matches(token.split("=")[0], options, n=1)
                if close:
                    message += f" (did you mean {close[0]}?)"
                    break
        elif "invalid choice" in message:
            bad = message.split("'")[1] if "'" in message else ""
            close = difflib.get_close_matches(bad, SUBCOMMANDS, n=1)
            if close:
                message += f" (did you mean {close[0]!r}?)"
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated classes, got {text!r}")
    return parts


def _add_training_flags(p, iters=25000, base_lr=0.001):
    p.add_argument("--iters", type=int, default=iters)
    p.add_argument("--base-lr", type=float, default=base_lr)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr-policy", choices=("fixed", "step"), default="step")
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--step-size", type=int, default=10000)
    p.add_argument("--log-interval", type=int, default=100)


def _add_data_flags(p, required=True, part="train"):
    p.add_argument("--data", required=required, help="directory with one subdirectory per class")
    p.add_argument("--split", help="split CSV (path,part,class); restricts to --part")
    p.add_argument("--part", default=part)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser = _Parser(prog="lulc", description="Land-use scene classification toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("augment", parents=[common], help="rotate-and-crop augmentation")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--angles", type=_floats, default=[5, 10, 30, 40],
                   help="rotation magnitudes; each is applied with both signs")
    p.add_argument("--no-original", action="store_true")
    p.add_argument("--output-size", type=int)
    p.add_argument("--split")
    p.add_argument("--part", default="train")
    p.add_argument("--manifest", help="manifest CSV path (default OUT/manifest.csv)")

    p = sub.add_parser("split", parents=[common], help="stratified split or k folds")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--ratios", type=_ints, default=[60, 20, 20])
    g.add_argument("--kfold", type=int)

    p = sub.add_parser("train", parents=[common], help="train a network from scratch")
    _add_data_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--arch", choices=("toy", "caffenet"), default="toy")
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--hidden", type=int, default=32)
    _add_training_flags(p)

    p = sub.add_parser("finetune", parents=[common], help="replace the head and optionally train")
    p.add_argument("--base", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--head-lr-mult", type=float, default=10.0)
    p.add_argument("--body-lr-mult", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    _add_data_flags(p, required=False)
    _add_training_flags(p)

    p = sub.add_parser("extract", parents=[common], help="dump a layer's activations as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--layer", required=True)
    _add_data_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("svm-train", parents=[common], help="one-vs-rest linear SVM on a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--classes", type=int, help="number of classes (default: max label + 1)")

    p = sub.add_parser("svm-predict", parents=[common], help="predict classes for a feature CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="confusion matrix and accuracy")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions", help="CSV with prediction,label columns")
    src.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--split")
    p.add_argument("--part", default="test")
    p.add_argument("--out", required=True, help="confusion matrix CSV")
    p.add_argument("--per-class", help="per-class recall CSV")
    p.add_argument("--merge", type=_pair, help="two classes to fuse, e.g. G,M")

    p = sub.add_parser("cross-validate", parents=[common], help="k-fold scoring of a pipeline")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--pipeline", choices=("cnn", "svm"), default="cnn")
    p.add_argument("--out", required=True)
    p.add_argument("--base", help="checkpoint to fine-tune (cnn) or to extract from (svm)")
    p.add_argument("--layer", default="fc7")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--head-lr-mult", type=float, default=10.0)
    p.add_argument("--body-lr-mult", type=float, default=1.0)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--hidden", type=int, default=32)
    _add_training_flags(p)

    p = sub.add_parser("viz-filters", parents=[common], help="render first-layer filters as a PPM grid")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--layer", default="conv1")
    p.add_argument("--out", required=True)
    return parser


# -- helpers ----------------------------------------------------------------

def _index(args, part_default=None) -> DatasetIndex:
    index = scan_dataset(args.data)
    if getattr(args, "split", None):
        parts = read_split_csv(args.split)
        part = args.part if part_default is None else part_default
        keep = [i for i, (p, _) in enumerate(index.samples) if parts.get(p) == part]
        index = index.subset(keep)
    if not len(index):
        raise ValueError(f"no images selected from {args.data}")
    return index


def _train_config(args) -> TrainConfig:
    return TrainConfig(base_lr=args.base_lr, momentum=args.momentum, weight_decay=args.weight_decay,
                       iterations=args.iters, batch_size=args.batch_size, lr_policy=args.lr_policy,
                       gamma=args.gamma, step_size=args.step_size, seed=args.seed,
                       log_interval=args.log_interval)


def _write_log(path, log):
    if path:
        atomic_write_text(path, log.to_csv())


# -- subcommands ------------------------------------------------------------

def cmd_augment(args):
    index = scan_dataset(args.src)
    if args.split:
        parts = read_split_csv(args.split)
        samples = [(p, index.classes[c]) for p, c in index.samples if parts.get(p) == args.part]
    else:
        samples = [(p, index.classes[c]) for p, c in index.samples]
    plan = aug.AugmentPlan.symmetric(args.angles, include_original=not args.no_original,
                                     output_size=args.output_size)
    manifest = aug.augment_dataset(samples, plan, args.out)
    aug.write_manifest(manifest, args.manifest or Path(args.out) / "manifest.csv")
    print(f"{len(samples)} sources x {plan.multiplier} = {len(manifest)} images; {len(manifest.errors)} errors")
    return 0


def cmd_split(args):
    index = scan_dataset(args.data)
    if args.kfold:
        atomic_write_text(args.out, fold_csv(kfold(index, args.kfold, args.seed), index))
    else:
        plan = split(index, args.ratios, args.seed)
        plan.save(args.out, index)
        counts = {part: len(plan.paths(part)) for part in ("train", "val", "test")}
        print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def cmd_train(args):
    index = _index(args)
    imgs, labels = load_images(index)
    mean = compute_mean([p for p, _ in index.samples])
    x = normalize(imgs, mean)
    if args.arch == "caffenet":
        spec = caffenet_spec(len(index.classes))
    else:
        spec = toy_cnn_spec(x.shape[1:], len(index.classes), args.width, args.hidden)
    net = build_network(spec, init_seed=args.seed)
    net.meta["mean"] = [float(m) for m in mean]
    net.meta["classes"] = list(index.classes)
    ckpt, log = train(net, (x, labels), _train_config(args))
    save_checkpoint(ckpt, args.out)
    _write_log(args.log, log)
    if log.rows:
        print(f"iteration {log.rows[-1][0]}: loss {log.rows[-1][1]:.4f}, train accuracy {log.rows[-1][2]:.4f}")
    return 0


def cmd_finetune(args):
    base = load_checkpoint(args.base)
    ckpt = replace_head(base, args.classes, args.head_lr_mult, args.body_lr_mult, init_seed=args.seed)
    if args.data:
        index = _index(args)
        if len(index.classes) != args.classes:
            raise ValueError(f"--classes {args.classes} but {args.data} has {len(index.classes)} classes")
        imgs, labels = load_images(index)
        mean = ckpt.meta.get("mean") or compute_mean([p for p, _ in index.samples])
        net = from_checkpoint(ckpt)
        net.meta["mean"] = [float(m) for m in mean]
        net.meta["classes"] = list(index.classes)
        ckpt, log = train(net, (normalize(imgs, mean), labels), _train_config(args))
        _write_log(args.log, log)
    save_checkpoint(ckpt, args.out)
    return 0


def _features(ckpt, layer, index):
    imgs, labels = load_images(index)
    net = from_checkpoint(ckpt)
    x = normalize(imgs, ckpt.meta.get("mean") or [0.0, 0.0, 0.0])
    feats = np.concatenate([extract_features(net, layer, x[i:i + 256]) for i in range(0, len(x), 256)])
    return feats, labels


def cmd_extract(args):
    ckpt = load_checkpoint(args.ckpt)
    ckpt.spec.layer(args.layer)
    feats, labels = _features(ckpt, args.layer, _index(args))
    write_features_csv(args.out, feats, labels)
    return 0


def cmd_svm_train(args):
    x, y = read_features_csv(args.features)
    K = args.classes or int(y.max()) + 1
    model = svm_train_ovr(x, y, K, C=args.C, seed=args.seed, iterations=args.iters)
    save_svm(model, args.out)
    return 0


def cmd_svm_predict(args):
    model = load_svm(args.model)
    x, y = read_features_csv(args.features)
    preds = svm_predict(model, x)
    lines = ["index,prediction,label"] + [f"{i},{int(p)},{int(t)}" for i, (p, t) in enumerate(zip(preds, y))]
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    acc = float(np.mean(preds == y)) if len(y) else 0.0
    print(f"accuracy {acc:.4f}")
    return 0


def cmd_eval(args):
    if args.predictions:
        with open(args.predictions, newline="") as fh:
            rows = list(csv.DictReader(fh))
        preds = [int(r["prediction"]) for r in rows]
        truths = [int(r["label"]) for r in rows]
        cm, acc = evaluate(preds, truths)
    else:
        if not args.data:
            raise UsageError("eval --ckpt requires --data")
        ckpt = load_checkpoint(args.ckpt)
        index = _index(args)
        imgs, labels = load_images(index)
        net = from_checkpoint(ckpt)
        preds = predict(net, normalize(imgs, ckpt.meta.get("mean") or [0.0, 0.0, 0.0]))
        cm, acc = evaluate(preds, labels, class_names=index.classes)
    print(f"accuracy {acc:.4f}")
    if args.merge:
        a, b = (c if c in cm.class_names else int(c) for c in args.merge)
        cm = merge_classes(cm, a, b)
        print(f"accuracy after merging {'+'.join(args.merge)}: {cm.accuracy:.4f}")
    atomic_write_text(args.out, cm.to_csv())
    if args.per_class:
        lines = ["class,recall"] + [f"{n},{'undefined' if r is None else repr(r)}"
                                    for n, r in zip(cm.class_names, per_class_accuracy(cm))]
        atomic_write_text(args.per_class, "\n".join(lines) + "\n")
    return 0


def cmd_cross_validate(args):
    index = scan_dataset(args.data)
    imgs, labels = load_images(index)
    cfg = _train_config(args)
    base = load_checkpoint(args.base) if args.base else None
    if args.pipeline == "svm" and base is None:
        raise UsageError("cross-validate --pipeline svm requires --base")

    def pipeline(train_pos, val_pos):
        mean = compute_mean([index.samples[i][0] for i in train_pos])
        x = normalize(imgs, mean)
        if args.pipeline == "svm":
            net = from_checkpoint(base)
            tr = extract_features(net, args.layer, x[train_pos])
            model = svm_train_ovr(tr, labels[train_pos], len(index.classes), C=args.C, seed=args.seed)
            return svm_predict(model, extract_features(net, args.layer, x[val_pos]))
        if base is not None:
            net = from_checkpoint(replace_head(base, len(index.classes), args.head_lr_mult,
                                               args.body_lr_mult, init_seed=args.seed))
        else:
            spec = toy_cnn_spec(x.shape[1:], len(index.classes), args.width, args.hidden)
            net = build_network(spec, init_seed=args.seed)
        train(net, (x[train_pos], labels[train_pos]), cfg)
        return predict(net, x[val_pos])

    result = cross_validate(pipeline, index, args.k, args.seed)
    atomic_write_text(args.out, result.to_csv())
    print(f"mean accuracy {result.mean:.4f} (std {result.std:.4f}) over {args.k} folds")
    return 0


def cmd_viz_filters(args):
    write_ppm(args.out, render_filter_grid(load_checkpoint(args.ckpt), args.layer))
    return 0


COMMANDS = {
    "augment": cmd_augment, "split": cmd_split, "train": cmd_train, "finetune": cmd_finetune,
    "extract": cmd_extract, "svm-train": cmd_svm_train, "svm-predict": cmd_svm_predict,
    "eval": cmd_eval, "cross-validate": cmd_cross_validate, "viz-filters": cmd_viz_filters,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            raise UsageError(parser.format_help())
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as err:
        print(str(err).rstrip(), file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"lulc {args.command}: error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - report any runtime failure as exit 2
        print(f"lulc {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

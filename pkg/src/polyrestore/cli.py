"""Operator command line.

Subcommands: train, restore, classify, eval, make-toy, export-study,
serve-study. Every command is deterministic given its flags and --seed.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import TensorNode, no_grad
from .data import (Dataset, ToyCorpusConfig, denormalize, load_image,
                   load_manifest, normalize, save_image, synthesize_toy_corpus)
from .losses import LossWeights
from .metrics import (accuracy, classify_testset, f_beta, precision,
                      restore_iterative, sensitivity, specificity)
from .models import DiscriminatorConfig, GeneratorConfig
from .optim import LrSchedule, OptimizerConfig
from .study import export_study, serve_study
from .training import (TrainConfig, generator_config_from_checkpoint,
                       load_generator, load_state, train)

EVAL_CSV_HEADER = ["model", "Q", "accuracy", "sensitivity", "specificity",
                   "precision", "f1", "f2"]


@dataclass(frozen=True)
class RunConfig:
    command: str
    manifest: str | None
    q: int
    use_operational: bool
    base_channels: int
    num_classes: int
    image_size: int
    weights: LossWeights
    optimizer: OptimizerConfig
    schedule: LrSchedule
    epochs: int
    seed: int
    batch_size: int
    checkpoint_dir: str | None
    iterate_k: int


def _generator_config(cfg: RunConfig) -> GeneratorConfig:
    return GeneratorConfig(q=cfg.q, base_channels=cfg.base_channels,
                           num_classes=cfg.num_classes,
                           image_size=(cfg.image_size, cfg.image_size),
                           use_operational=cfg.use_operational)


def _train_config(cfg: RunConfig, loss_csv=None) -> TrainConfig:
    return TrainConfig(
        generator=_generator_config(cfg),
        discriminator=DiscriminatorConfig(q=cfg.q, base_channels=cfg.base_channels,
                                          use_operational=cfg.use_operational),
        weights=cfg.weights, optimizer=cfg.optimizer, schedule=cfg.schedule,
        epochs=cfg.epochs, seed=cfg.seed, batch_size=cfg.batch_size,
        checkpoint_dir=cfg.checkpoint_dir, loss_csv=loss_csv)


def _add_common(p):
    p.add_argument("--q", type=int, default=3, help="polynomial order of the operational layers")
    p.add_argument("--plain-conv", action="store_true",
                   help="use the plain convolution + ReLU variant instead of operational layers")
    p.add_argument("--channels", type=int, default=64, help="base channel width")
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--gamma", type=float, default=0.1, help="classification loss weight")
    p.add_argument("--lambda", dest="lam", type=float, default=10.0, help="cycle loss weight")
    p.add_argument("--beta", type=float, default=5.0, help="identity loss weight")
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--hold-epochs", type=int, default=100,
                   help="epochs before linear learning-rate decay starts")
    p.add_argument("--total-epochs", type=int, default=2000,
                   help="epoch at which the decayed learning rate reaches zero")
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--iterate-k", type=int, default=3,
                   help="how many times the restorer is composed with itself")
    p.add_argument("--manifest", type=str, default=None)
    p.add_argument("--ckpt-dir", type=str, default=None)


def _run_config(args, command) -> RunConfig:
    weights = LossWeights(cycle=args.lam, identity=args.beta, classify=args.gamma)
    return RunConfig(
        command=command, manifest=args.manifest, q=args.q,
        use_operational=not args.plain_conv, base_channels=args.channels,
        num_classes=args.num_classes, image_size=args.image_size, weights=weights,
        optimizer=OptimizerConfig(alpha=args.lr),
        schedule=LrSchedule(alpha0=args.lr, hold_epochs=args.hold_epochs,
                            total_epochs=max(args.total_epochs, args.hold_epochs)),
        epochs=args.epochs, seed=args.seed, batch_size=args.batch,
        checkpoint_dir=args.ckpt_dir, iterate_k=args.iterate_k)


class CliError(Exception):
    pass


def _require(condition, message):
    if not condition:
        raise CliError(message)


def _load_dataset(cfg: RunConfig) -> Dataset:
    _require(cfg.manifest, "--manifest is required")
    _require(Path(cfg.manifest).is_file(), f"manifest not found: {cfg.manifest}")
    return load_manifest(cfg.manifest, num_classes=cfg.num_classes)


def cmd_train(args):
    cfg = _run_config(args, "train")
    _require(cfg.checkpoint_dir, "--ckpt-dir is required for training")
    dataset = _load_dataset(cfg)
    Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
    loss_csv = str(Path(cfg.checkpoint_dir) / "losses.csv")
    tconf = _train_config(cfg, loss_csv=loss_csv)
    state = None
    if args.resume:
        _require(Path(args.resume).is_file(), f"checkpoint not found: {args.resume}")
        state = load_state(tconf, args.resume)
        print(f"resumed from {args.resume} at epoch {state.epochs_done}")

    def progress(epoch, rows):
        mean_g = float(np.mean([r[2] for r in rows]))
        mean_d = float(np.mean([r[7] for r in rows]))
        print(f"epoch {epoch + 1}/{cfg.epochs}  L_G={mean_g:.4f}  L_D={mean_d:.4f}  "
              f"lr={rows[-1][8]:.2e}", flush=True)

    train(dataset, tconf, state=state, progress=progress)
    print(f"done; checkpoints in {cfg.checkpoint_dir}, losses in {loss_csv}")
    return 0


def _load_gen(args):
    # model shape comes from the checkpoint itself; the hyperparameter flags
    # only matter for training
    _require(args.checkpoint, "--checkpoint is required")
    _require(Path(args.checkpoint).is_file(), f"checkpoint not found: {args.checkpoint}")
    return load_generator(args.checkpoint)


def cmd_restore(args):
    cfg = _run_config(args, "restore")
    gen = _load_gen(args)
    _require(args.out, "--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _require(args.images, "at least one input image is required")
    for path in args.images:
        _require(Path(path).is_file(), f"image not found: {path}")
        image = normalize(load_image(path))
        restored = restore_iterative(gen, image, k=cfg.iterate_k)
        target = out / Path(path).name
        save_image(target, denormalize(restored))
        print(f"{path} -> {target}")
    return 0


def _metric_row(name, q, counts):
    fmt = lambda v: "undefined" if v is None else f"{v:.4f}"
    return [name, q, fmt(accuracy(counts)), fmt(sensitivity(counts)),
            fmt(specificity(counts)), fmt(precision(counts)),
            fmt(f_beta(counts, 1.0)), fmt(f_beta(counts, 2.0))]


def cmd_eval(args, command="eval"):
    cfg = _run_config(args, command)
    gen = _load_gen(args)
    dataset = _load_dataset(cfg)
    samples = dataset.poor + dataset.high
    _require(samples, "manifest contains no samples")
    counts = classify_testset(gen, samples, positive_class=args.positive_class)
    model_q = generator_config_from_checkpoint(args.checkpoint).q
    row = _metric_row(Path(args.checkpoint).stem, model_q, counts)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        new = not Path(args.report).exists()
        with open(args.report, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(EVAL_CSV_HEADER)
            writer.writerow(row)
    print(",".join(EVAL_CSV_HEADER))
    print(",".join(str(c) for c in row))
    print(f"confusion: TP={counts.tp} TN={counts.tn} FP={counts.fp} FN={counts.fn}")
    return 0


def cmd_classify(args):
    gen = _load_gen(args)
    _require(args.images, "at least one input image is required")
    with no_grad():
        for path in args.images:
            _require(Path(path).is_file(), f"image not found: {path}")
            image = normalize(load_image(path))[None, None, :, :]
            out = gen.forward(TensorNode(image.astype(np.float32)))
            probs = out.class_probs.values[0]
            print(f"{path}: class {int(np.argmax(probs))} probs "
                  + " ".join(f"{p:.4f}" for p in probs))
    return 0


def cmd_make_toy(args):
    config = ToyCorpusConfig(out_dir=args.out, image_size=args.image_size,
                             num_classes=args.num_classes,
                             train_per_domain=args.train_per_domain,
                             test_per_domain=args.test_per_domain,
                             seed=args.seed)
    paths = synthesize_toy_corpus(config)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_export_study(args):
    cfg = _run_config(args, "export-study")
    _require(len(args.model) > 0, "at least one --model NAME=CKPT is required")
    models = []
    for spec in args.model:
        _require("=" in spec, f"--model must be NAME=CKPT, got {spec!r}")
        name, ckpt = spec.split("=", 1)
        _require(Path(ckpt).is_file(), f"checkpoint not found: {ckpt}")
        k = cfg.iterate_k
        if ":" in name:
            name, ks = name.split(":", 1)
            k = int(ks)
        models.append((name, load_generator(ckpt), k))
    _require(args.images, "at least one query image is required")
    for path in args.images:
        _require(Path(path).is_file(), f"image not found: {path}")
    labels = args.labels.split(",") if args.labels else None
    if labels:
        _require(len(labels) == len(args.images), "--labels must match the image count")
    out = export_study(args.study_id, models, args.images, args.out,
                       seed=cfg.seed, labels=labels)
    print(f"study bundle written to {out}")
    return 0


def cmd_serve_study(args):
    _require(Path(args.bundle).is_dir(), f"bundle not found: {args.bundle}")
    assets = args.assets
    if assets:
        _require(Path(assets).is_dir(), f"assets dir not found: {assets}")
    server = serve_study(args.bundle, args.port, assets_dir=assets)
    print(f"serving study on port {args.port} (ctrl-c to stop)", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="polyrestore",
                                     description="joint blind restoration + classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the cycle model on a two-domain manifest")
    _add_common(p)
    p.add_argument("--resume", type=str, default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("restore", help="restore images with a trained model")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("images", nargs="*")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("classify", help="classify images with a trained model")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("images", nargs="*")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", help="evaluate classification metrics on a manifest")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--report", type=str, default=None, help="append the metric row to this CSV")
    p.add_argument("--positive-class", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-toy", help="synthesize the two-domain toy corpus")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--train-per-domain", type=int, default=400)
    p.add_argument("--test-per-domain", type=int, default=80)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("export-study", help="export a blind rating study bundle")
    _add_common(p)
    p.add_argument("--study-id", type=str, required=True)
    p.add_argument("--model", action="append", default=[],
                   help="NAME=CKPT or NAME:K=CKPT (repeatable)")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--labels", type=str, default=None,
                   help="comma-separated disease labels, one per image")
    p.add_argument("images", nargs="*")
    p.set_defaults(func=cmd_export_study)

    p = sub.add_parser("serve-study", help="serve a study bundle over HTTP")
    p.add_argument("--bundle", type=str, required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--assets", type=str, default=None,
                   help="static frontend directory to serve at /")
    p.set_defaults(func=cmd_serve_study)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 success, 2 usage error (bad flags, missing inputs the user
must supply, bad config keys), 1 runtime failure (unreadable data or
checkpoint, training divergence, size mismatch).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, plotting
from .checkpoint import CheckpointError
from .config import ConfigError, read_config, merge, write_config
from .datasets import DatasetError, corrupt, ingest_directory, load_image, make_synthetic, save_image, write_dataset
from .metrics import psnr
from .models import AutoencoderConfig, ClassifierConfig, load_checkpoint, save_checkpoint
from .training import (
    TrainConfig,
    TrainingDiverged,
    autoencoder_terms,
    classifier_loss,
    train_autoencoder,
    train_classifier,
    write_epoch_log,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("octdenoise")

DATA_DEFAULTS = dict(data=None, per_class=150, size=32, data_seed=0, val_count=0, test_count=0)

DEFAULTS = {
    "make-synthetic": dict(per_class=150, size=32, seed=0, out="synthetic"),
    "train-classifier": dict(DATA_DEFAULTS, seed=0, out="runs/classifier", epochs=30, lr=2e-3, batch_size=32,
                             patience=10, base_channels=8, blocks=2, stages=3),
    "train-ae": dict(DATA_DEFAULTS, seed=0, out="runs/autoencoder", classifier=None, alpha=0.1, sigma=0.1,
                     epochs=40, lr=2e-3, batch_size=16, patience=10, widths="16,32,32", refine=1),
    "denoise": dict(seed=0, out="denoised", sigma=0.1, method="ae", autoencoder=None, index=0),
    "bench": dict(DATA_DEFAULTS, seed=0, out="runs/bench", sigma=0.1, methods=None, classifier=None,
                  autoencoder=None, examples=4),
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags given here override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def _data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data", "a folder dataset with --data, otherwise a synthetic one")
    g.add_argument("--data", help="root with train/ (and optionally val/, test/) class folders")
    g.add_argument("--per-class", type=int, help="synthetic images per class (default 150)")
    g.add_argument("--size", type=int, help="image side; folder images are resized to it (default 32)")
    g.add_argument("--data-seed", type=int, help="seed of the synthetic set (default 0)")
    g.add_argument("--val-count", type=int, help="images carved from train when val/ is missing")
    g.add_argument("--test-count", type=int, help="images carved from train when test/ is missing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="octdenoise", description="Classifier-regularised OCT denoising.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="write the synthetic 4-class set as class folders")
    _common(p)
    p.add_argument("--per-class", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("train-classifier", help="stage 1: fit the classifier on clean images")
    _common(p)
    _data_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int, help="plateau patience in epochs")
    p.add_argument("--base-channels", type=int)
    p.add_argument("--blocks", type=int, help="residual blocks per stage")
    p.add_argument("--stages", type=int)

    p = sub.add_parser("train-ae", help="stage 2: fit the autoencoder against a frozen classifier")
    _common(p)
    _data_flags(p)
    p.add_argument("--classifier", help="classifier checkpoint (required)")
    p.add_argument("--alpha", type=float, help="weight of the classification term (default 0.1)")
    p.add_argument("--sigma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--widths", help="encoder widths, comma separated")
    p.add_argument("--refine", type=int, help="extra stride-1 convs per stage")

    p = sub.add_parser("denoise", help="corrupt one image and denoise it")
    _common(p)
    p.add_argument("image")
    p.add_argument("--method", choices=[m for m in bench.METHODS if m != "corrupted"])
    p.add_argument("--autoencoder", help="autoencoder checkpoint, needed for --method ae")
    p.add_argument("--sigma", type=float)
    p.add_argument("--index", type=int, help="test index mixed into the corruption seed, as in bench")

    p = sub.add_parser("bench", help="score methods on the test split")
    _common(p)
    _data_flags(p)
    p.add_argument("--sigma", type=float)
    p.add_argument("--methods", help="comma separated subset of " + ",".join(bench.METHODS))
    p.add_argument("--classifier", help="frozen classifier for the ACC column")
    p.add_argument("--autoencoder", help="autoencoder checkpoint for the ae row")
    p.add_argument("--examples", type=int, help="rows in the example figure (default 4)")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    defaults = DEFAULTS[args.command]
    file_values = read_config(args.config) if args.config else {}
    cli = {k: v for k, v in vars(args).items() if k in defaults}
    values = merge(defaults, file_values, cli)
    if args.command == "denoise":
        values["image"] = args.image
    return values


# ---------------------------------------------------------------- helpers


def _out_dir(values: dict) -> Path:
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(out: Path, command: str, values: dict) -> None:
    write_config(out / "config.txt", {k: v for k, v in values.items() if k != "image"})
    log.info("%s: effective config written to %s", command, out / "config.txt")


def load_data(values: dict):
    if values["data"]:
        return ingest_directory(values["data"], size=values["size"], val_count=values["val_count"],
                                test_count=values["test_count"], carve_seed=values["data_seed"])
    return make_synthetic(values["per_class"], size=values["size"], seed=values["data_seed"])


def _require(path, what: str) -> str:
    if not path:
        raise UsageError(f"{what} is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} {path} does not exist")
    return path


# ---------------------------------------------------------------- commands


def cmd_make_synthetic(values: dict) -> int:
    out = _out_dir(values)
    ds = make_synthetic(values["per_class"], size=values["size"], seed=values["seed"])
    paths = write_dataset(ds, out)
    print(f"wrote {len(paths)} images to {out} ({ds.sizes})")
    return EXIT_OK


def _train_config(values: dict, **extra) -> TrainConfig:
    return TrainConfig(epochs=values["epochs"], batch_size=values["batch_size"], lr=values["lr"],
                       plateau_patience=values["patience"], seed=values["seed"], **extra)


def cmd_train_classifier(values: dict) -> int:
    out = _out_dir(values)
    ds = load_data(values)
    mcfg = ClassifierConfig(input_size=values["size"], base_channels=values["base_channels"],
                            blocks_per_stage=values["blocks"], n_stages=values["stages"])
    _echo(out, "train-classifier", values)
    res = train_classifier(ds, _train_config(values), mcfg)
    save_checkpoint(res.model, out / "classifier.octd", res.checkpoint.metadata)
    write_epoch_log(out / "classifier_log.csv", res.history)
    plotting.plot_training(res.history, out / "classifier_curves.png", "classifier")
    best = res.history[res.best_epoch - 1]
    _, test_acc = classifier_loss(res.model, ds.test)
    print(f"best epoch {res.best_epoch}: val loss {best.val_loss:.4f}, val accuracy {best.val_accuracy:.1f}%")
    print(f"test accuracy {test_acc:.1f}%")
    print(f"checkpoint: {out / 'classifier.octd'}")
    return EXIT_OK


def cmd_train_ae(values: dict) -> int:
    clf_path = _require(values["classifier"], "--classifier")
    try:
        widths = tuple(int(w) for w in str(values["widths"]).split(",") if w.strip())
    except ValueError:
        raise UsageError(f"--widths must be comma separated integers, got {values['widths']!r}") from None
    out = _out_dir(values)
    clf = load_checkpoint(clf_path, "classifier").freeze()
    ds = load_data(values)
    mcfg = AutoencoderConfig(input_size=values["size"], widths=widths, refine=values["refine"])
    _echo(out, "train-ae", values)
    cfg = _train_config(values, alpha=values["alpha"], sigma=values["sigma"])
    res = train_autoencoder(ds, clf, cfg, mcfg)
    save_checkpoint(res.model, out / "autoencoder.octd", res.checkpoint.metadata)
    write_epoch_log(out / "autoencoder_log.csv", res.history)
    plotting.plot_training(res.history, out / "autoencoder_curves.png", f"autoencoder, alpha={cfg.alpha:g}")
    best = res.history[res.best_epoch - 1]
    print(f"best epoch {res.best_epoch}: val loss {best.val_loss:.5f} "
          f"(L_r {best.val_lr_term:.5f}, L_c {best.val_lc_term:.4f}), val PSNR {best.val_psnr:.2f} dB")
    test = autoencoder_terms(res.model, clf, ds.test, cfg.sigma, cfg.seed)
    print(f"test PSNR {test['val_psnr']:.2f} dB")
    print(f"checkpoint: {out / 'autoencoder.octd'}")
    return EXIT_OK


def cmd_denoise(values: dict) -> int:
    image_path = Path(values["image"])
    if not image_path.is_file():
        raise UsageError(f"input image {image_path} does not exist")
    method = values["method"]
    if method not in bench.METHODS or method == "corrupted":
        raise UsageError(f"unknown method {method!r}")
    ae = None
    if method == "ae":
        ae = load_checkpoint(_require(values["autoencoder"], "--autoencoder"), "autoencoder")
    clean = load_image(image_path)
    out = _out_dir(values)
    noisy = corrupt(clean, values["sigma"], bench.corruption_seed(values["seed"], values["index"]))
    result = bench.denoise_image(method, noisy, ae)
    stem = image_path.stem
    save_image(out / f"{stem}.orig.png", clean)
    save_image(out / f"{stem}.noisy.png", noisy)
    save_image(out / f"{stem}.{method}.png", result)
    print(f"corrupted PSNR {psnr(clean, noisy):.4f} dB")
    print(f"{method} PSNR {psnr(clean, result):.4f} dB")
    return EXIT_OK


def cmd_bench(values: dict) -> int:
    methods = values["methods"]
    if methods is None:
        methods = ",".join(m for m in bench.METHODS if m != "ae" or values["autoencoder"])
    try:
        bcfg = bench.BenchConfig(tuple(m.strip() for m in str(methods).split(",") if m.strip()), values["sigma"],
                                 values["seed"], values["classifier"], values["autoencoder"])
    except bench.BenchError as exc:
        raise UsageError(str(exc)) from exc
    clf = ae = None
    if bcfg.classifier:
        clf = load_checkpoint(_require(bcfg.classifier, "--classifier"), "classifier").freeze()
    if bcfg.autoencoder:
        ae = load_checkpoint(_require(bcfg.autoencoder, "--autoencoder"), "autoencoder")
    out = _out_dir(values)
    ds = load_data(values)
    _echo(out, "bench", dict(values, methods=",".join(bcfg.methods)))
    res = bench.run_bench(ds.test, bcfg.methods, bcfg.sigma, bcfg.seed, clf, ae, keep_examples=values["examples"])
    bench.write_report(out / "report.csv", res.reports)
    plotting.plot_bench(res.reports, out / "report.png")
    if res.examples:
        plotting.plot_examples(res.examples, bcfg.methods, out / "examples.png")
    print(bench.format_summary(res.reports))
    print(f"report: {out / 'report.csv'}")
    return EXIT_OK


COMMANDS = {
    "make-synthetic": cmd_make_synthetic,
    "train-classifier": cmd_train_classifier,
    "train-ae": cmd_train_ae,
    "denoise": cmd_denoise,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        values = resolve(args)
        return COMMANDS[args.command](values)
    except (UsageError, ConfigError) as exc:
        print(f"octdenoise {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, TrainingDiverged, bench.BenchError, ValueError, OSError) as exc:
        print(f"octdenoise {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

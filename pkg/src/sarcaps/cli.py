"""Command-line entry point: ``sarcaps <command> ...``.

Every command exits 0 on success and prints ``error: <message>`` with exit
code 2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import CLASSES, Manifest, augment, split_dataset, synth_dataset
from .data.importer import import_directory
from .data.pipeline import select_polarization
from .data.tiles import TileFormatError
from .gan import GanConfig, GanPair, history_csv as gan_history_csv, rebalance, train_gan
from .gradsuite import SUITES, TOLERANCE, run_suite
from .harness import TrainConfig, build_model, evaluate, format_accuracy, load_model, prepare_splits, save_model, train
from .harness.checkpoint import CheckpointError, save_checkpoint
from .harness.report import architecture_label, build_table, load_results, render_text, write_report
from .harness.train import history_csv, tiles_to_arrays

logger = logging.getLogger("sarcaps")

USER_ERRORS = (ValueError, KeyError, FileNotFoundError, NotADirectoryError, TileFormatError, CheckpointError,
               json.JSONDecodeError)


def _read_config(path) -> dict:
    if not path:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return data


def _overrides(args, names) -> dict:
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def _save_manifest(manifest: Manifest, out, source=None) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if source is not None and Path(source).resolve().parent != out.resolve().parent:
        # tile paths are relative to the manifest, so rewrite them next to the new one
        for t in manifest.tiles:
            t.path = ""
    manifest.save(out)
    return out


def _fingerprint_line(manifest: Manifest) -> str:
    fp = manifest.fingerprint()
    return f"{fp['tiles']} tiles, classes {fp['classes']}, splits {fp['splits']}"


# -- dataset ----------------------------------------------------------------

def cmd_dataset_import(args) -> None:
    manifest = import_directory(args.input, args.size)
    if not manifest.tiles:
        raise ValueError(f"no labelled chips found under {args.input}")
    _save_manifest(manifest, args.out)
    print(f"imported {_fingerprint_line(manifest)} -> {args.out}")


def cmd_dataset_synth(args) -> None:
    pols = tuple(p.strip().upper() for p in args.polarizations.split(","))
    tiles = synth_dataset(args.per_class, args.size, args.seed, polarizations=pols)
    manifest = Manifest(tiles, seed=args.seed)
    _save_manifest(manifest, args.out)
    print(f"wrote {_fingerprint_line(manifest)} -> {args.out}")


def cmd_dataset_split(args) -> None:
    manifest = Manifest.load(args.manifest)
    proportions = tuple(int(p) for p in args.proportions.split(","))
    result = Manifest(split_dataset(manifest.tiles, proportions, args.seed), seed=args.seed)
    out = args.out or args.manifest
    _save_manifest(result, out, args.manifest)
    print(f"split {_fingerprint_line(result)} -> {out}")


def cmd_augment(args) -> None:
    manifest = Manifest.load(args.manifest)
    train_tiles = manifest.split("train")
    if not train_tiles:
        raise ValueError("the manifest has no train split; run 'dataset split' first")
    rest = [t for t in manifest.tiles if t.split != "train"]
    result = Manifest(augment(train_tiles, args.policy, args.seed) + rest, seed=manifest.seed)
    out = args.out or args.manifest
    _save_manifest(result, out, args.manifest)
    print(f"policy {args.policy}: train {len(train_tiles)} -> {len(result.split('train'))} tiles -> {out}")


# -- gan --------------------------------------------------------------------

def _gan_config(args) -> GanConfig:
    data = _read_config(args.config)
    data = data.get("gan", data)
    data.update(_overrides(args, ["epochs", "batch", "lr"]))
    return GanConfig.desk(**data) if args.desk else GanConfig(**data)


def cmd_gan_train(args) -> None:
    if args.ship_class not in CLASSES:
        raise ValueError(f"unknown class {args.ship_class!r}; expected one of {CLASSES}")
    config = _gan_config(args)
    manifest = Manifest.load(args.manifest)
    tiles = [t for t in manifest.tiles if t.split in ("train", "") and not t.synthetic]
    gan = train_gan(tiles, args.ship_class, config, args.seed, args.mode,
                    callback=lambda r: logger.info("gan epoch %d d %.4f g %.4f", r["epoch"], r["d_loss"], r["g_loss"]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    gan.save(out)
    out.with_name(out.name + ".history.csv").write_text(gan_history_csv(gan.history))
    last = gan.history[-1]
    print(f"trained {args.ship_class} GAN for {config.epochs} epochs "
          f"(d {last['d_loss']:.4f}, g {last['g_loss']:.4f}) -> {out}")


def cmd_gan_rebalance(args) -> None:
    gans = {}
    for path in sorted(Path(args.gans).glob("*.ckpt")):
        gan = GanPair.load(path)
        if gan.ship_class in gans:
            raise ValueError(f"two GAN checkpoints for class {gan.ship_class} in {args.gans}")
        gans[gan.ship_class] = gan
    if not gans:
        raise FileNotFoundError(f"no GAN checkpoints (*.ckpt) in {args.gans}")
    manifest = Manifest.load(args.manifest)
    result = Manifest(rebalance(manifest.tiles, gans, args.target, args.seed), seed=manifest.seed)
    out = args.out or args.manifest
    _save_manifest(result, out, args.manifest)
    split = "train" if any(t.split for t in result.tiles) else None
    print(f"rebalanced to {result.class_counts(split)} -> {out}")


# -- train / eval / report ----------------------------------------------------

TRAIN_FLAGS = ["model", "head", "mode", "epochs", "batch", "lr", "lr_decay", "seed", "augmentation", "select"]


def train_config_from_args(args) -> TrainConfig:
    data = _read_config(args.config)
    data.update(_overrides(args, TRAIN_FLAGS))
    return TrainConfig.from_dict(data)


def run_training(config: TrainConfig, manifest_path, out_dir) -> dict:
    manifest = Manifest.load(manifest_path)
    model = build_model(config)
    arrays = prepare_splits(manifest.tiles, config, model.input_size)
    val = arrays["val"] if len(arrays["val"][1]) else None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    result = train(model, arrays["train"], val, config,
                   callback=lambda r: logger.info("epoch %d loss %.4f acc %.4f", r["epoch"], r["train_loss"],
                                                  r["train_acc"]))
    (out / "history.csv").write_text(history_csv(result.history))
    extra = {"db_min": config.db_min, "db_max": config.db_max, "mode": config.mode}
    save_model(out / "final.ckpt", model, {**extra, "epoch": config.epochs})
    save_checkpoint(out / "best.ckpt", result.best_state, {**model.meta(), **extra, "epoch": result.best_epoch})
    if config.select == "best":
        result.load_best()
    summary = {
        "architecture": architecture_label(config.model, config.head if config.model == "cnn" else None,
                                           config.augmentation),
        "mode": config.mode,
        "selected": config.select,
        "best_epoch": result.best_epoch,
        "fingerprint": {**manifest.fingerprint(), "mode": config.mode, "seed": config.seed},
    }
    test_x, test_y = arrays["test"]
    if len(test_y):
        report = evaluate(model, test_x, test_y, summary["fingerprint"])
        summary.update(accuracy=report.accuracy, report=report.to_dict())
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_train(args) -> None:
    config = train_config_from_args(args)
    summary = run_training(config, args.manifest, args.out)
    acc = summary.get("accuracy")
    shown = format_accuracy(acc) if acc is not None else "n/a (no test split)"
    print(f"{summary['architecture']} {config.mode}: best epoch {summary['best_epoch']}, "
          f"test accuracy {shown} -> {args.out}")


def cmd_eval(args) -> None:
    model, meta = load_model(args.model_ckpt)
    manifest = Manifest.load(args.manifest)
    mode = args.mode or meta.get("mode", "VHVV")
    tiles = [t for t in select_polarization(manifest.tiles, mode) if t.split == args.split]
    if not tiles:
        raise ValueError(f"no {mode} tiles in the {args.split!r} split")
    x, y = tiles_to_arrays(tiles, model.input_size, meta.get("db_min", -35.0), meta.get("db_max", 0.0))
    report = evaluate(model, x, y, {**manifest.fingerprint(), "mode": mode, "split": args.split})
    payload = report.to_dict()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"accuracy {format_accuracy(report.accuracy)} on {report.total} {mode} tiles")
    print("confusion (rows true, columns predicted):")
    for cls, row in zip(CLASSES, report.confusion.tolist()):
        print(f"  {cls:<14} {row}")


def cmd_report(args) -> None:
    results = load_results(args.input)
    if not results:
        raise FileNotFoundError(f"no result files with architecture/mode/accuracy under {args.input}")
    csv_path, txt_path = write_report(results, args.out)
    print(render_text(*build_table(results)), end="")
    print(f"-> {csv_path}, {txt_path}")


def cmd_gradcheck(args) -> int:
    names = sorted(SUITES) if args.module == "all" else [args.module]
    if args.module != "all" and args.module not in SUITES:
        raise ValueError(f"unknown module {args.module!r}; choose from all, {', '.join(sorted(SUITES))}")
    failed = 0
    for name in names:
        res = run_suite(name, args.seeds)
        failed += not res.passed
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {name:<20} max rel err {res.max_error:.2e} over {res.seeds} seeds ({res.seconds:.1f}s)")
    print(f"{len(names) - failed}/{len(names)} suites below {TOLERANCE:g}")
    return 1 if failed else 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sarcaps", description="SAR ship classification experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="build, import and split manifests").add_subparsers(dest="action",
                                                                                           required=True)
    p = ds.add_parser("import", help="import labelled chips from a directory")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=128, help="tile size after pad/resize")
    p.set_defaults(func=cmd_dataset_import)

    p = ds.add_parser("synth", help="write a procedural ship dataset")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--polarizations", default="VH", help="comma list, e.g. VH,VV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset_synth)

    p = ds.add_parser("split", help="assign train/val/test")
    p.add_argument("--manifest", required=True)
    p.add_argument("--proportions", default="64,16,20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="defaults to rewriting the manifest")
    p.set_defaults(func=cmd_dataset_split)

    p = sub.add_parser("augment", help="materialize flip/rotate copies of the train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--policy", choices=["A", "B"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_augment)

    gan = sub.add_parser("gan", help="per-class GANs").add_subparsers(dest="action", required=True)
    p = gan.add_parser("train", help="train one class GAN")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class", dest="ship_class", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="VHVV", choices=["VH", "VV", "VHVV"])
    p.add_argument("--desk", action="store_true", help="32x32 tiles, 200 epochs")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gan_train)

    p = gan.add_parser("rebalance", help="top classes up with generated tiles")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", type=int, default=2000)
    p.add_argument("--gans", required=True, help="directory of GAN checkpoints")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gan_rebalance)

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON with TrainConfig fields")
    p.add_argument("--model", choices=["capsnet", "cnn"])
    p.add_argument("--head", choices=["S", "L"])
    p.add_argument("--mode", choices=["VH", "VV", "VHVV"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--augmentation", choices=["none", "A", "B", "gan", "gan+A", "gan+B"])
    p.add_argument("--select", choices=["best", "final"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--model-ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=["VH", "VV", "VHVV"])
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="accuracy table from result files")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="64-bit finite-difference gradient suites")
    p.add_argument("--module", default="all", help=f"all or one of: {', '.join(sorted(SUITES))}")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except USER_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())

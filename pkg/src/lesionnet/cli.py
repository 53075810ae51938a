"""``lesionnet`` command line.

Every command writes under an output path that must not already hold
results unless ``--force`` is given, echoes its resolved configuration there
as ``config.txt``, and on failure prints one JSON error record to stderr and
exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, describe

log = logging.getLogger("lesionnet")

EXIT_ERROR = 1
EXIT_CONFIG = 2


class CliError(RuntimeError):
    pass


def _prepare_dir(path: str | Path, force: bool) -> Path:
    p = Path(path)
    if p.exists() and (not p.is_dir() or any(p.iterdir())):
        if not force:
            raise CliError(f"output {p} already exists; pass --force to overwrite")
        if p.is_dir():
            shutil.rmtree(p)
        else:
            p.unlink()
    p.mkdir(parents=True, exist_ok=True)
    return p


def _prepare_file(path: str | Path, force: bool) -> Path:
    p = Path(path)
    if p.exists() and not force:
        raise CliError(f"output {p} already exists; pass --force to overwrite")
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _config(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None), getattr(args, "set", None) or [])
    for key in ("manifest", "folds", "variant", "seed", "k", "fold", "epochs", "mapping"):
        v = getattr(args, key, None)
        if v is not None:
            cfg.set(key, str(v))
    return cfg


def _require(cfg: RunConfig, key: str) -> str:
    if not cfg[key]:
        raise ConfigError(f"config key {key!r} is required for this command", key)
    return cfg[key]


def _jsonl_sink(path: Path):
    fh = path.open("w", encoding="utf-8")

    def emit(rec: dict) -> None:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()

    return fh, emit


# ---------------------------------------------------------------- commands

def cmd_phantom(args) -> int:
    from .data.phantom import generate_phantom_dataset

    cfg = _config(args)
    out = _prepare_dir(args.out, args.force)
    m = generate_phantom_dataset(cfg.phantom_config(), out)
    cfg.echo(out)
    print(json.dumps({"manifest": str(out / "manifest.csv"), "images": len(m.samples)}))
    return 0


def cmd_folds(args) -> int:
    from .data.folds import make_folds
    from .data.manifest import load_manifest

    cfg = _config(args)
    manifest = load_manifest(_require(cfg, "manifest"))
    out = _prepare_file(args.out, args.force)
    fa = make_folds(manifest, k=cfg.k, seed=cfg.seed)
    fa.save(out)
    for w in fa.warnings:
        print(json.dumps({"warning": w}), file=sys.stderr)
    print(json.dumps({"folds": str(out), "k": fa.k, "images": len(fa.assignment)}))
    return 0


def _fold_list(cfg: RunConfig, folds) -> list[int | None]:
    if folds is None:
        if cfg.fold not in ("all", "none", ""):
            raise ConfigError("a fold index needs a folds file", "fold")
        return [None]
    if cfg.fold == "all":
        return list(range(folds.k))
    try:
        f = int(cfg.fold)
    except ValueError:
        raise ConfigError(f"invalid value {cfg.fold!r} for key 'fold'", "fold") from None
    if not 0 <= f < folds.k:
        raise ConfigError(f"fold {f} out of range for k={folds.k}", "fold")
    return [f]


def _ckpt_name(fold: int | None) -> str:
    return "model.ckpt" if fold is None else f"fold{fold}.ckpt"


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .data.folds import FoldAssignment
    from .data.loader import SampleCache
    from .data.manifest import load_manifest
    from .training import train

    cfg = _config(args)
    manifest = load_manifest(_require(cfg, "manifest"))
    folds = FoldAssignment.load(cfg.folds) if cfg.folds else None
    fold_ids = _fold_list(cfg, folds)
    tcfgs = [cfg.train_config(f) for f in fold_ids]
    out = _prepare_dir(args.out, args.force)
    cfg.echo(out)
    cache = SampleCache(manifest, cfg.target_width, cfg.resize_above)
    written = []
    for f, tc in zip(fold_ids, tcfgs):
        fh, emit = _jsonl_sink(out / f"train_{'all' if f is None else f'fold{f}'}.jsonl")
        try:
            res = train(tc, manifest, folds, sink=emit, cache=cache)
        finally:
            fh.close()
        written.append(str(save_checkpoint(res.checkpoint, out / _ckpt_name(f))))
    print(json.dumps({"checkpoints": written}))
    return 0


def cmd_finetune(args) -> int:
    from dataclasses import replace

    from .checkpoint import load_checkpoint, save_checkpoint
    from .data.folds import FoldAssignment
    from .data.manifest import load_manifest
    from .training import TrainConfig, fine_tune

    cfg = _config(args)
    target = load_manifest(_require(cfg, "manifest"))
    folds = FoldAssignment.load(cfg.folds) if cfg.folds else None
    out = _prepare_dir(args.out, args.force)
    cfg.echo(out)
    written = []
    for i, path in enumerate(args.checkpoint):
        ck = load_checkpoint(path)
        base = ck.config.get("train", {})
        fold = None
        if folds is not None:
            fold = i if len(args.checkpoint) == folds.k else _fold_list(cfg, folds)[0]
        tc = TrainConfig(**{**base, "epochs": cfg.finetune_epochs, "init_source": "checkpoint", "fold": fold,
                            "seed": cfg.seed})
        tc = replace(tc, learning_rate=cfg.learning_rate if args.lr is None else args.lr)
        fh, emit = _jsonl_sink(out / f"finetune_{i}.jsonl")
        try:
            res = fine_tune(ck, target, folds, tc, sink=emit)
        finally:
            fh.close()
        written.append(str(save_checkpoint(res.checkpoint, out / f"finetuned_{Path(path).stem}.ckpt")))
    print(json.dumps({"checkpoints": written}))
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data.folds import FoldAssignment
    from .data.manifest import load_manifest
    from .evaluation.run import evaluate_run
    from .schema import CrossDatasetMapping

    cfg = _config(args)
    if args.task:
        cfg.set("tasks", ",".join(args.task))
    tasks = [t.strip() for t in cfg.tasks.split(",") if t.strip()]
    manifest = load_manifest(_require(cfg, "manifest"))
    folds = FoldAssignment.load(cfg.folds) if cfg.folds else None
    mapping = CrossDatasetMapping.load(cfg.mapping) if cfg.mapping else None
    cks = [load_checkpoint(p) for p in args.checkpoint]
    if folds is not None and len(cks) != folds.k:
        folds = None  # one model per fold is required for held-out scoring; otherwise score everything
    out = _prepare_dir(args.out, args.force)
    res = evaluate_run(cks, manifest, folds, tasks, mapping=mapping, out_dir=out)
    cfg.echo(out)
    summary = [{k: m[k] for k in ("task", "lesion", "mean", "std")} for m in res.metrics if m["task"] != "pointing"]
    print(json.dumps({"metrics": str(out / "metrics.json"), "summary": summary}))
    return 0


def cmd_export_maps(args) -> int:
    from .checkpoint import load_checkpoint
    from .export import export_image_maps

    ck = load_checkpoint(args.checkpoint)
    if not ck.variant.has_lesions:
        raise CliError("variant provides no lesion outputs")
    out = _prepare_dir(args.out, args.force)
    model = ck.build()
    for img in args.images:
        if not Path(img).is_file():
            raise CliError(f"image not found: {img}")
        export_image_maps(ck, img, out, model)
    print(json.dumps({"out": str(out), "images": len(args.images), "channels": list(ck.schema.lesions)}))
    return 0


def cmd_plot_roc(args) -> int:
    from .evaluation.run import read_curve_csv
    from .plotting import plot_roc

    curves = {}
    for item in args.curves:
        label, _, path = item.rpartition("=") if "=" in item else (Path(item).stem, "", item)
        if not Path(path).is_file():
            raise CliError(f"curve file not found: {path}")
        curves[label] = read_curve_csv(path)
    out = _prepare_file(args.out, args.force)
    plot_roc(curves, out, title=args.title)
    print(json.dumps({"figure": str(out), "curves": list(curves)}))
    return 0


def cmd_accept(args) -> int:
    from .acceptance import run_acceptance

    out = _prepare_dir(args.out, args.force)
    only = {int(x) for x in args.only.split(",")} if args.only else None
    report = run_acceptance(args.seed, out, only=only)
    sys.stdout.write(report.to_text())
    return 0 if report.passed else EXIT_ERROR


def cmd_config(args) -> int:
    sys.stdout.write(describe())
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lesionnet", description="Lesion-map AMD classifier tooling.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory"):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--force", action="store_true", help="overwrite existing output")

    sp = sub.add_parser("phantom", help="generate the synthetic fundus dataset")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=cmd_phantom)

    sp = sub.add_parser("folds", help="patient-grouped stratified folds")
    common(sp, "fold JSON file")
    sp.add_argument("--manifest")
    sp.add_argument("--k", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=cmd_folds)

    sp = sub.add_parser("train", help="train one model per held-out fold")
    common(sp)
    sp.add_argument("--manifest")
    sp.add_argument("--folds")
    sp.add_argument("--fold", help="fold index or 'all'")
    sp.add_argument("--variant", choices=("al-max", "al-fc", "a-only"))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("finetune", help="continue training checkpoints on a target dataset")
    common(sp)
    sp.add_argument("--checkpoint", nargs="+", required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--folds")
    sp.add_argument("--fold")
    sp.add_argument("--lr", type=float, help="learning rate (default: config learning_rate)")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=cmd_finetune)

    sp = sub.add_parser("eval", help="ROC/AUC evaluation of checkpoints")
    common(sp)
    sp.add_argument("--checkpoint", nargs="+", required=True, help="one per fold, in fold order")
    sp.add_argument("--manifest")
    sp.add_argument("--folds")
    sp.add_argument("--task", action="append", choices=("diagnosis", "lesions", "segmentation"))
    sp.add_argument("--mapping", help="cross-dataset mapping JSON")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("export-maps", help="per-lesion probability PNGs and overlays")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--force", action="store_true")
    sp.add_argument("images", nargs="+")
    sp.set_defaults(fn=cmd_export_maps)

    sp = sub.add_parser("plot-roc", help="plot merged ROC curves from curve CSVs")
    sp.add_argument("curves", nargs="+", help="CSV path or LABEL=PATH")
    sp.add_argument("--out", required=True, help="figure file (.png, .pdf, .svg)")
    sp.add_argument("--title", default="Mean ROC curves")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(fn=cmd_plot_roc)

    sp = sub.add_parser("accept", help="run the acceptance suite on the phantom dataset")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--only", help="comma-separated criterion ids")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(fn=cmd_accept)

    sp = sub.add_parser("config", help="print every config key with its default")
    sp.set_defaults(fn=cmd_config)
    return p


def _error(command: str | None, exc: BaseException, code: int) -> int:
    rec = {"error": type(exc).__name__, "message": str(exc), "command": command}
    if isinstance(exc, ConfigError) and exc.key:
        rec["key"] = exc.key
    record = getattr(exc, "record", None)
    if record:
        rec["record"] = record
    print(json.dumps(rec, sort_keys=True, default=str), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        return _error(args.command, e, EXIT_CONFIG)
    except Exception as e:  # every failure becomes a machine-readable record
        log.debug("command failed", exc_info=True)
        return _error(args.command, e, EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 success, 2 config/usage error, 3 data error, 4 training error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import datagen, experiment
from .ebe import SourceIndex, explain, write_report, write_strip
from .errors import ConfigError, DataError, FormatError, ReprogramError, SpecError, TrainingError
from .labelmap import LabelMapping
from .models import FrozenClassifier, save_checkpoint
from .prompting import load_prompt
from .vptrain import post_prompt_remap_drift

log = logging.getLogger("reprogram")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0,2,5"`` or the inclusive range ``"0..4"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds: cannot parse {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise ConfigError(f"--seeds: need non-negative seeds, got {text!r}")
    return seeds


def _config(args) -> experiment.ExperimentConfig:
    cfg = experiment.load_config(args.config) if args.config else experiment.canonical_config()
    updates = {}
    if getattr(args, "seeds", None):
        updates["seeds"] = parse_seeds(args.seeds)
    if getattr(args, "lm", None):
        updates["lm_mode"] = args.lm
    if getattr(args, "epochs", None) is not None:
        updates["train"] = {**cfg.train, "epochs": args.epochs}
    return cfg.with_(**updates) if updates else cfg


def _model(cfg, out: Path | None = None) -> FrozenClassifier:
    model = experiment.source_model(cfg, log=log.info)
    if out is not None and not cfg.checkpoint:
        save_checkpoint(model, out / "source.rpkt")
    return model


def cmd_gen_data(args) -> int:
    if args.config:
        cfg = experiment.load_config(args.config)
        sec = cfg.source if args.which == "source" else cfg.target
        spec = datagen.GenSpec.from_dict({**sec, "seed": sec.get("seed", 0) + (args.seed or 0)})
    else:
        if not args.family:
            raise ConfigError("gen-data needs --config or --family")
        spec = datagen.GenSpec(args.family, seed=args.seed or 0, noise=args.noise,
                               train_per_class=args.train_per_class, test_per_class=args.test_per_class)
    out = experiment.prepare_dir(args.out, args.overwrite)
    for split in datagen.SPLITS:
        ds = datagen.generate(spec, split)
        datagen.save_dataset(ds, out / f"{split}.rpkt")
        print(f"{split}: {len(ds)} images {ds.image_shape} -> {out / f'{split}.rpkt'}")
    (out / "genspec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _config(args).with_(checkpoint=None)
    out = Path(args.out)
    if out.exists() and not args.overwrite:
        raise FileExistsError(f"{out} exists; pass --overwrite to replace it")
    model = experiment.source_model(cfg, log=log.info)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    print(f"train_acc={model.provenance['train_acc']:.4f} test_acc={model.provenance.get('test_acc', float('nan')):.4f}"
          f" -> {out}")
    return EXIT_OK


def _write_sweep(out: Path, cfg, results) -> None:
    rows = [r.summary_row() for r in results]
    experiment.write_summary(rows, out / "summary.csv")
    (out / "config.json").write_text(cfg.to_json())
    for agg in experiment.aggregate(rows):
        print(f"{agg['arm']}: {agg['cell']} over {agg['n']} seed(s)")


def cmd_vp_train(args) -> int:
    cfg = _config(args)
    out = experiment.prepare_dir(args.out, args.overwrite)
    model = _model(cfg, out)
    checksum = model.checksum()
    results = []
    for seed in cfg.seeds:
        try:
            res = experiment.run_arm(cfg, model, seed, log=log.info)
        except TrainingError:
            (out / f"seed_{seed}.FAILED").write_text("training error; outputs for this seed are partial\n")
            raise
        experiment.write_run(out / f"seed_{seed}", cfg, res)
        results.append(res)
        print(f"seed {seed}: {cfg.lm_mode} test_acc={res.history.final_test_acc:.4f} mapping={list(res.mapping.map)}")
    if model.checksum() != checksum:
        raise TrainingError("source model weights changed during training")
    _write_sweep(out, cfg, results)
    return EXIT_OK


def _run_dirs(path: Path) -> list[Path]:
    if (path / "mapping.json").exists():
        return [path]
    dirs = sorted(p for p in path.iterdir() if p.is_dir() and (p / "mapping.json").exists())
    if not dirs:
        raise DataError(f"{path}: no run directories found")
    return dirs


def cmd_post_drift(args) -> int:
    results = []
    for run in _run_dirs(Path(args.run)):
        cfg = experiment.load_config(run / "config.json")
        if not cfg.checkpoint and (run.parent / "source.rpkt").exists():
            cfg = cfg.with_(checkpoint=str(run.parent / "source.rpkt"))
        model = experiment.source_model(cfg)
        train, _ = experiment.target_data(cfg, cfg.seeds[0])
        drift = post_prompt_remap_drift(model, load_prompt(run / "prompt.rpkt"), LabelMapping.load(run / "mapping.json"),
                                        train)
        results.append({"run": str(run), "drift": drift})
        print(f"{run}: drift={drift}")
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2) + "\n")
    return EXIT_OK


def cmd_text_lm(args) -> int:
    cfg = _config(args)
    if args.templates:
        cfg = cfg.with_(text={**cfg.text, "templates": str(Path(args.templates).resolve())})
    if args.m is not None:
        cfg = cfg.with_(text={**cfg.text, "m": args.m})
    out = experiment.prepare_dir(args.out, args.overwrite)
    model = _model(cfg, out)
    results = []
    for seed in cfg.seeds:
        res = experiment.run_text_arm(cfg, model, seed, fixed=args.fixed, log=log.info)
        experiment.write_run(out / f"seed_{seed}", cfg, res)
        results.append(res)
        picks = "; ".join(f"{r['target_label']} <- {r['rendered']!r}" for r in res.extra["templates"])
        print(f"seed {seed}: {res.arm} test_acc={res.history.final_test_acc:.4f} | {picks}")
    _write_sweep(out, cfg, results)
    return EXIT_OK


def cmd_explain(args) -> int:
    run = Path(args.run)
    cfg = experiment.load_config(run / "config.json")
    if not cfg.checkpoint and (run.parent / "source.rpkt").exists():
        cfg = cfg.with_(checkpoint=str(run.parent / "source.rpkt"))
    model = experiment.source_model(cfg)
    prompt = load_prompt(run / "prompt.rpkt")
    mapping = LabelMapping.load(run / "mapping.json")
    if mapping.num_source != model.num_classes:
        raise DataError("explain needs a run over the source model's own label space")
    _, test = experiment.target_data(cfg, cfg.seeds[0])
    source_train, _ = experiment.source_data(cfg)
    index = SourceIndex(model, source_train)
    out = experiment.prepare_dir(args.out, args.overwrite)
    for i in (int(s) for s in args.indices.split(",")):
        if not 0 <= i < len(test):
            raise DataError(f"test index {i} out of range")
        res = explain(model, prompt, test.images[i], mapping, int(test.labels[i]), k=args.k, index=index,
                      all_classes=args.all_classes, query_id=i)
        write_report(res, out / f"query_{i}.json")
        if args.images:
            write_strip(prompt, test.images[i], res, source_train, out / f"query_{i}.ppm")
        print(f"query {i}: class {res.mapped_class} ids={res.ids} sims={[round(s, 4) for s in res.similarities]}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.runs:
        raise ConfigError("report needs at least one run directory")
    rows = []
    for r in args.runs:
        p = Path(r)
        summary = p / "summary.csv" if p.is_dir() else p
        if not summary.exists():
            raise DataError(f"{p}: no summary.csv")
        rows.extend(experiment.read_summary(summary))
    if not rows:
        raise ConfigError("no runs found")
    table = experiment.aggregate(rows, args.metric)
    out = Path(args.out) if args.out else None
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=["arm", "n", "mean", "std", "cell"], lineterminator="\n")
        w.writeheader()
        w.writerows(table)
    finally:
        if out:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reprogram", description="Visual prompting with iterative label mapping.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=True, lm=False):
        sp.add_argument("--config", help="experiment config JSON (default: the canonical task)")
        if seeds:
            sp.add_argument("--seeds", "--seed", dest="seeds", help="e.g. 0..4 or 0,1,2")
        if lm:
            sp.add_argument("--lm", choices=["rlm", "flm", "ilm"])
        sp.add_argument("--out", required=True)
        sp.add_argument("--overwrite", action="store_true")

    g = sub.add_parser("gen-data", help="generate a dataset family")
    g.add_argument("--config")
    g.add_argument("--which", choices=["source", "target"], default="source")
    g.add_argument("--family", choices=datagen.FAMILIES)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--train-per-class", type=int, default=100)
    g.add_argument("--test-per-class", type=int, default=25)
    g.add_argument("--out", required=True)
    g.add_argument("--overwrite", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("pretrain", help="train and freeze the source classifier")
    common(s, seeds=False)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("vp-train", help="train prompts for one label-mapping arm over seeds")
    common(s, lm=True)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_vp_train)

    s = sub.add_parser("post-drift", help="pre/post remap drift of trained runs")
    s.add_argument("--run", required=True, help="a run directory or a sweep directory")
    s.add_argument("--out")
    s.set_defaults(func=cmd_post_drift)

    s = sub.add_parser("text-lm", help="template selection over virtual labels")
    common(s)
    s.add_argument("--epochs", type=int)
    s.add_argument("--templates", help="template file, one per line")
    s.add_argument("--m", type=int, help="number of templates to use")
    s.add_argument("--fixed", action="store_true", help="single fixed-template baseline")
    s.set_defaults(func=cmd_text_lm)

    s = sub.add_parser("explain", help="nearest source examples for prompted test samples")
    s.add_argument("--run", required=True)
    s.add_argument("--indices", default="0")
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--all-classes", action="store_true")
    s.add_argument("--images", action="store_true", help="also write PPM strips")
    s.add_argument("--out", required=True)
    s.add_argument("--overwrite", action="store_true")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("report", help="mean ± std table across run directories")
    s.add_argument("runs", nargs="*")
    s.add_argument("--metric", default="final_test_acc")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpecError, FileExistsError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except ReprogramError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Declarative experiment configs, run directories and result aggregation.

A run directory always holds ``config.json``, ``history.jsonl``,
``prompt.rpkt``, ``mapping.json`` and ``summary.csv``; re-running the saved
config reproduces every file except the ``seconds`` fields of the history.

Seeds: for each run seed ``s`` the target generator seed is
``target.seed + s`` and the prompt-training seed is ``s``. The source model
does not depend on the run seed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datagen
from .errors import ConfigError
from .models import Architecture, FrozenClassifier, PretrainConfig, load_checkpoint, pretrain_source
from .textlm import (DEFAULT_TEMPLATES, TwoTowerScorer, build_virtual_space, fixed_template_train, load_templates,
                     selected_templates, text_lm_train, validate_templates)
from .vptrain import NEVER, RunHistory, TrainConfig, post_prompt_remap_drift, train_arm

SCHEMA_VERSION = 1
SUMMARY_FIELDS = ["arm", "seed", "final_test_acc", "best_test_acc", "initial_loss", "first_loss", "final_loss",
                  "final_mapping", "drift", "designated_hits", "model_checksum"]


@dataclass(frozen=True)
class TextConfig:
    templates: list | str | None = None
    m: int = 4
    temperature: float = 0.05
    template_weight: float = 0.3
    string_weight: float = 0.5
    embed_seed: int = 0
    restrict_own_class: bool = False

    def resolve_templates(self, base: Path | None = None) -> tuple[str, ...]:
        if self.templates is None:
            templates = DEFAULT_TEMPLATES
        elif isinstance(self.templates, str):
            p = Path(self.templates)
            templates = load_templates(p if p.is_absolute() or base is None else base / p)
        else:
            templates = validate_templates(self.templates)
        if not 1 <= self.m <= len(templates):
            raise ConfigError(f"config.text.m: need 1 <= m <= {len(templates)}")
        return tuple(templates[:self.m])


@dataclass(frozen=True)
class ExperimentConfig:
    source: dict
    target: dict
    architecture: dict
    pretrain: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    lm_mode: str = "ilm"
    seeds: list = field(default_factory=lambda: [0])
    checkpoint: str | None = None
    text: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_(self, **kw) -> "ExperimentConfig":
        return parse_config({**self.to_dict(), **kw})

    # -- typed views ---------------------------------------------------------
    def architecture_obj(self) -> Architecture:
        return Architecture.from_dict(self.architecture)

    def pretrain_obj(self) -> PretrainConfig:
        return PretrainConfig(**self.pretrain)

    def train_obj(self, seed: int, lm_mode: str | None = None) -> TrainConfig:
        d = dict(self.train)
        if d.get("remap_every", 1) is None:
            d["remap_every"] = NEVER
        return TrainConfig(**d, seed=seed, lm_mode=lm_mode or self.lm_mode)

    def text_obj(self) -> TextConfig:
        return TextConfig(**self.text)


def _fields(cls, exclude=()):
    return {f.name for f in dataclasses.fields(cls)} - set(exclude)


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")


def parse_config(d: dict) -> ExperimentConfig:
    """Validate a config mapping against the schema; unknown keys are rejected with their path."""
    _check_keys(d, _fields(ExperimentConfig), "config")
    if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: expected {SCHEMA_VERSION}, got {d.get('schema_version')}")
    for key in ("source", "target", "architecture"):
        if key not in d:
            raise ConfigError(f"config.{key}: required")
    for key in ("source", "target"):
        sec = d[key]
        if isinstance(sec, dict) and "family" in sec:
            _check_keys(sec, _fields(datagen.GenSpec), f"config.{key}")
        else:
            _check_keys(sec, {"train", "test"}, f"config.{key}")
            if "train" not in sec or "test" not in sec:
                raise ConfigError(f"config.{key}: needs a generator 'family' or 'train'/'test' paths")
    _check_keys(d["architecture"], _fields(Architecture), "config.architecture")
    _check_keys(d.get("pretrain", {}), _fields(PretrainConfig), "config.pretrain")
    _check_keys(d.get("train", {}), _fields(TrainConfig, ("seed", "lm_mode")), "config.train")
    _check_keys(d.get("text", {}), _fields(TextConfig), "config.text")
    cfg = ExperimentConfig(**d)
    if cfg.lm_mode not in ("rlm", "flm", "ilm"):
        raise ConfigError(f"config.lm_mode: must be rlm, flm or ilm, got {cfg.lm_mode!r}")
    if not isinstance(cfg.seeds, list) or not cfg.seeds or not all(isinstance(s, int) and s >= 0 for s in cfg.seeds):
        raise ConfigError("config.seeds: need a non-empty list of non-negative integers")
    try:
        cfg.architecture_obj()
        cfg.pretrain_obj()
        cfg.train_obj(0)
        cfg.text_obj()
        for key in ("source", "target"):
            if "family" in getattr(cfg, key):
                datagen.GenSpec.from_dict(getattr(cfg, key))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(d)


def canonical_config(epochs: int = 60, seeds=(0, 1, 2, 3, 4)) -> ExperimentConfig:
    """source16 -> target4-related on the convnet, prompt defaults with the epoch budget scaled."""
    return parse_config({
        "source": datagen.GenSpec("source16", train_per_class=100, test_per_class=25, noise=0.1, seed=0).to_dict(),
        "target": datagen.GenSpec("target4-related", train_per_class=32, test_per_class=50, noise=0.1,
                                  seed=0).to_dict(),
        "architecture": Architecture("convnet", (3, 32, 32), 16, hidden=(64,)).to_dict(),
        "pretrain": dataclasses.asdict(PretrainConfig(epochs=12, seed=0)),
        "train": {"epochs": epochs, "batch_size": 32},
        "lm_mode": "ilm",
        "seeds": list(seeds),
    })


# -- data and model ----------------------------------------------------------

def _load_section(sec: dict, seed_offset: int = 0):
    if "family" in sec:
        spec = datagen.GenSpec.from_dict({**sec, "seed": sec.get("seed", 0) + seed_offset})
        return datagen.generate_splits(spec)
    return datagen.load_dataset(sec["train"]), datagen.load_dataset(sec["test"])


def source_data(cfg: ExperimentConfig):
    return _load_section(cfg.source)


def target_data(cfg: ExperimentConfig, seed: int):
    return _load_section(cfg.target, seed)


_MODEL_CACHE: dict[str, FrozenClassifier] = {}


def source_model(cfg: ExperimentConfig, log=None) -> FrozenClassifier:
    """Load ``cfg.checkpoint`` or pretrain on the configured source data (memoised per process)."""
    if cfg.checkpoint:
        return load_checkpoint(cfg.checkpoint)
    key = json.dumps([cfg.source, cfg.architecture, cfg.pretrain], sort_keys=True)
    if key not in _MODEL_CACHE:
        train, test = source_data(cfg)
        _MODEL_CACHE[key] = pretrain_source(train, cfg.architecture_obj(), cfg.pretrain_obj(), test, log=log)
    return _MODEL_CACHE[key]


# -- runs --------------------------------------------------------------------

@dataclass
class RunResult:
    arm: str
    seed: int
    prompt: object
    mapping: object
    history: RunHistory
    drift: int | None = None
    designated_hits: int | None = None
    model_checksum: str = ""
    extra: dict = field(default_factory=dict)

    def summary_row(self) -> dict:
        h = self.history
        return {
            "arm": self.arm,
            "seed": self.seed,
            "final_test_acc": h.final_test_acc,
            "best_test_acc": max(h.test_accs) if h.records else None,
            "initial_loss": h.initial_loss,
            "first_loss": h.losses[0] if h.records else None,
            "final_loss": h.losses[-1] if h.records else None,
            "final_mapping": " ".join(str(v) for v in self.mapping.map),
            "drift": self.drift,
            "designated_hits": self.designated_hits,
            "model_checksum": self.model_checksum,
        }


def designated_hits(mapping, target_set) -> int | None:
    designated = target_set.provenance.get("designated_source")
    if designated is None:
        return None
    return sum(int(m == d) for m, d in zip(mapping.map, designated))


def run_arm(cfg: ExperimentConfig, model, seed: int, lm_mode: str | None = None, log=None) -> RunResult:
    lm_mode = lm_mode or cfg.lm_mode
    train, test = target_data(cfg, seed)
    prompt, mapping, hist = train_arm(model, train, test, cfg.train_obj(seed, lm_mode), log=log)
    return RunResult(lm_mode, seed, prompt, mapping, hist,
                     drift=post_prompt_remap_drift(model, prompt, mapping, train),
                     designated_hits=designated_hits(mapping, train),
                     model_checksum=model.checksum())


def build_scorer(cfg: ExperimentConfig, model, target_set, m: int | None = None, base: Path | None = None):
    tc = cfg.text_obj()
    if m is not None:
        tc = dataclasses.replace(tc, m=m)
    space = build_virtual_space(tc.resolve_templates(base), target_set.class_names)
    source_names = datagen.SOURCE_NAMES if cfg.source.get("family") == "source16" else None
    return TwoTowerScorer.from_classifier(model, space, source_names, seed=tc.embed_seed,
                                          temperature=tc.temperature, template_weight=tc.template_weight,
                                          string_weight=tc.string_weight)


def run_text_arm(cfg: ExperimentConfig, model, seed: int, m: int | None = None, fixed: bool = False,
                 base: Path | None = None, log=None) -> RunResult:
    """``fixed=True`` is the single-template baseline; otherwise template selection by alternating LM."""
    train, test = target_data(cfg, seed)
    scorer = build_scorer(cfg, model, train, m=1 if fixed else m, base=base)
    tcfg = cfg.train_obj(seed, "ilm")
    if fixed:
        prompt, mapping, hist = fixed_template_train(scorer, train, test, tcfg, log=log)
        arm = "vp+tp"
    else:
        prompt, mapping, hist = text_lm_train(scorer, train, test, tcfg, cfg.text_obj().restrict_own_class, log=log)
        arm = f"vp+tp+lm(m={scorer.space.m})"
    return RunResult(arm, seed, prompt, mapping, hist, model_checksum=model.checksum(),
                     extra={"templates": selected_templates(mapping, scorer.space)})


# -- run directories ---------------------------------------------------------

RUN_FILES = ("config.json", "history.jsonl", "prompt.rpkt", "mapping.json", "summary.csv")


def prepare_dir(path, overwrite: bool) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not overwrite:
        raise FileExistsError(f"{path} exists and is not empty; pass --overwrite to replace it")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_summary(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_run(run_dir, cfg: ExperimentConfig, result: RunResult) -> Path:
    from .prompting import save_prompt

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    # the copy pins the single seed and arm, so it reproduces this directory alone
    single = cfg.with_(seeds=[result.seed], lm_mode=result.arm if result.arm in ("rlm", "flm", "ilm") else cfg.lm_mode)
    (run_dir / "config.json").write_text(single.to_json())
    result.history.to_jsonl(run_dir / "history.jsonl")
    save_prompt(result.prompt, run_dir / "prompt.rpkt", {"arm": result.arm, "seed": result.seed})
    result.mapping.save(run_dir / "mapping.json")
    write_summary([result.summary_row()], run_dir / "summary.csv")
    if "templates" in result.extra:
        from .textlm import write_template_report

        write_template_report(result.extra["templates"], run_dir / "templates.csv")
    return run_dir


def aggregate(rows: list[dict], metric: str = "final_test_acc") -> list[dict]:
    """Mean and (population) standard deviation of ``metric`` per arm, in first-seen arm order."""
    if not rows:
        raise ValueError("no runs to aggregate")
    arms: dict[str, list[float]] = {}
    for r in rows:
        arms.setdefault(r["arm"], []).append(float(r[metric]))
    out = []
    for arm, vals in arms.items():
        a = np.array(vals, dtype=np.float64)
        out.append({"arm": arm, "n": len(a), "mean": float(a.mean()), "std": float(a.std()),
                    "cell": f"{100 * a.mean():.1f}±{100 * a.std():.1f}"})
    return out


def comparable_dir(run_dir) -> dict[str, bytes]:
    """File contents of a run directory with wall-time stripped, for determinism checks."""
    out = {}
    for p in sorted(Path(run_dir).rglob("*")):
        if not p.is_file():
            continue
        rel = str(p.relative_to(run_dir))
        if p.name == "history.jsonl":
            recs = [{k: v for k, v in r.items() if k != "seconds"} for r in RunHistory.read_jsonl(p)]
            out[rel] = json.dumps(recs, sort_keys=True).encode()
        else:
            out[rel] = p.read_bytes()
    return out

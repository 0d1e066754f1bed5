"""Prompt training under a fixed label mapping, and the alternating
(mapping <-> prompt) loop that re-derives the mapping every epoch.

A *scorer* is anything exposing ``num_classes``, ``input_shape``,
``forward(batch)`` and ``loss_and_input_gradient(batch, labels)``;
:class:`~reprogram.models.FrozenClassifier` and
:class:`~reprogram.textlm.TwoTowerScorer` both qualify.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError, DomainError, ShapeError, TrainingError
from .labelmap import LabelMapping, flm, frequency_matrix, hamming_distance, rlm
from .numkernel import FLOAT, make_rng
from .prompting import Prompt, PromptSpec, apply_prompt, prompt_gradient

LM_MODES = ("rlm", "flm", "ilm")
NEVER = math.inf


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    milestones: tuple[float, ...] = (0.5, 0.72)
    gamma: float = 0.1
    batch_size: int = 32
    seed: int = 0
    lm_mode: str = "ilm"
    remap_every: float = 1
    reset_adam_on_remap: bool = False
    normalized_freq: bool = True

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "milestones", tuple(self.milestones))
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.remap_every >= 1:
            raise ValueError("remap_every must be >= 1")
        if self.lm_mode not in LM_MODES:
            raise ValueError(f"lm_mode must be one of {LM_MODES}")

    def lr_at(self, epoch_index: int) -> float:
        """Learning rate for 0-based ``epoch_index`` under the multi-step schedule."""
        steps = sum(epoch_index >= int(round(m * self.epochs)) for m in self.milestones)
        return self.lr * self.gamma ** steps

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["remap_every"] == NEVER:
            d["remap_every"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("remap_every", 1) is None:
            d["remap_every"] = NEVER
        return cls(**d)


class Adam:
    def __init__(self, shape, betas=(0.9, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.reset(shape)

    def reset(self, shape):
        self.m = np.zeros(shape, dtype=FLOAT)
        self.v = np.zeros(shape, dtype=FLOAT)
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = (self.b1 * self.m + (1 - self.b1) * grad).astype(FLOAT)
        self.v = (self.b2 * self.v + (1 - self.b2) * grad * grad).astype(FLOAT)
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return (param - lr * mhat / (np.sqrt(vhat) + self.eps)).astype(FLOAT)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    test_acc: float
    mapping: list[int]
    hamming_prev: int | None
    seconds: float

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class RunHistory:
    records: list[EpochRecord] = field(default_factory=list)
    initial_loss: float | None = None
    initial_mapping: list[int] | None = None
    final_prompt: Prompt | None = None
    final_mapping: LabelMapping | None = None

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    @property
    def test_accs(self) -> list[float]:
        return [r.test_acc for r in self.records]

    @property
    def hammings(self) -> list[int | None]:
        return [r.hamming_prev for r in self.records]

    @property
    def final_test_acc(self) -> float | None:
        return self.records[-1].test_acc if self.records else None

    def comparable(self) -> dict:
        """Everything except wall-time, for determinism checks."""
        recs = [{k: v for k, v in r.to_json().items() if k != "seconds"} for r in self.records]
        out = {"records": recs, "initial_loss": self.initial_loss, "initial_mapping": self.initial_mapping}
        if self.final_prompt is not None:
            out["final_delta"] = self.final_prompt.delta.tobytes()
        if self.final_mapping is not None:
            out["final_mapping"] = list(self.final_mapping.map)
        return out

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")

    @staticmethod
    def read_jsonl(path) -> list[dict]:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]


def _check_scorer(scorer, dataset, mapping=None):
    if len(dataset) == 0:
        raise DataError("empty dataset")
    spec = PromptSpec(scorer.input_shape, dataset.image_shape)
    if mapping is not None and mapping.num_source != scorer.num_classes:
        raise ShapeError("mapping source classes", (scorer.num_classes,), (mapping.num_source,))
    if mapping is not None and len(mapping) != dataset.num_classes:
        raise ShapeError("mapping target classes", (dataset.num_classes,), (len(mapping),))
    return spec


def predict(scorer, prompt: Prompt, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = [scorer.forward(apply_prompt(images[i:i + batch_size], prompt)).argmax(axis=1)
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(scorer, prompt: Prompt, mapping: LabelMapping, test_set) -> float:
    """Fraction of samples whose top-1 source class is the one mapped to their target class."""
    if len(test_set) == 0:
        raise DataError("empty test set")
    pred = predict(scorer, prompt, test_set.images)
    return float(np.mean(pred == mapping.as_array()[test_set.labels]))


def dataset_loss(scorer, prompt: Prompt, mapping: LabelMapping, dataset, batch_size: int = 256) -> float:
    total = 0.0
    targets = mapping.as_array()[dataset.labels]
    for i in range(0, len(dataset), batch_size):
        x = apply_prompt(dataset.images[i:i + batch_size], prompt)
        losses, _, _ = scorer.loss_and_input_gradient(x, targets[i:i + batch_size])
        total += float(losses.astype(np.float64).sum())
    return total / len(dataset)


def _run(scorer, train_set, test_set, cfg: TrainConfig, mapping: LabelMapping | None, remap,
         log=None):
    """Shared engine. ``remap(prompt, epoch)`` returns a fresh mapping or ``None`` to keep the current one."""
    spec = _check_scorer(scorer, train_set, mapping)
    _check_scorer(scorer, test_set)
    delta = np.zeros(spec.source_shape, dtype=FLOAT)
    adam = Adam(spec.source_shape, cfg.betas, cfg.adam_eps)
    shuffle = make_rng(cfg.seed, 2)
    hist = RunHistory()
    n = len(train_set)

    if mapping is None:
        mapping = remap(Prompt(spec, delta), 1)
    hist.initial_mapping = list(mapping.map)
    try:
        hist.initial_loss = dataset_loss(scorer, Prompt(spec, delta), mapping, train_set)
    except DomainError as exc:
        raise TrainingError(f"loss at the initial prompt: {exc}", epoch=0) from exc

    prev = None
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        if epoch > 1:
            new = remap(Prompt(spec, delta), epoch)
            if new is not None:
                if cfg.reset_adam_on_remap and new != mapping:
                    adam.reset(spec.source_shape)
                mapping = new
        targets = mapping.as_array()[train_set.labels]
        lr = cfg.lr_at(epoch - 1)
        order = shuffle.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            prompt = Prompt(spec, delta)
            x = apply_prompt(train_set.images[idx], prompt)
            try:
                losses, gx, _ = scorer.loss_and_input_gradient(x, targets[idx])
            except DomainError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}", epoch=epoch, batch=b) from exc
            batch_loss = float(losses.astype(np.float64).mean())
            if not np.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            total += float(losses.astype(np.float64).sum())
            g = prompt_gradient(gx.sum(axis=0, dtype=FLOAT) / FLOAT(len(idx)), prompt)
            delta = adam.step(delta, g, lr)
        acc = evaluate(scorer, Prompt(spec, delta), mapping, test_set)
        ham = None if prev is None else hamming_distance(mapping, prev)
        rec = EpochRecord(epoch, total / n, acc, list(mapping.map), ham, time.perf_counter() - tic)
        hist.records.append(rec)
        if log is not None:
            log(f"epoch {epoch}/{cfg.epochs} loss {rec.loss:.4f} acc {acc:.4f} map {rec.mapping} ham {ham}")
        prev = mapping

    hist.final_prompt = Prompt(spec, delta)
    hist.final_mapping = mapping
    return hist.final_prompt, mapping, hist


def vp_train_fixed_lm(scorer, mapping: LabelMapping, train_set, test_set, cfg: TrainConfig, log=None):
    """Learn a prompt for a mapping that never changes; returns ``(prompt, history)``."""
    prompt, _, hist = _run(scorer, train_set, test_set, cfg, mapping, lambda p, e: None, log)
    return prompt, hist


def initial_mapping(scorer, train_set, cfg: TrainConfig) -> LabelMapping:
    """Mapping a fixed-mapping arm starts from: identity for ``rlm``, zero-prompt FLM otherwise."""
    if cfg.lm_mode == "rlm":
        return rlm(train_set.num_classes, scorer.num_classes)
    spec = PromptSpec(scorer.input_shape, train_set.image_shape)
    freq = frequency_matrix(scorer, Prompt(spec, np.zeros(spec.source_shape, dtype=FLOAT)), train_set)
    return flm(freq, normalized=cfg.normalized_freq)


def ilm_vp_train(scorer, train_set, test_set, cfg: TrainConfig, allowed=None, log=None):
    """Alternate: FLM at the current prompt (every ``remap_every`` epochs), then one epoch of Adam on the prompt.

    Returns ``(prompt, mapping, history)``.
    """

    def remap(prompt, epoch):
        if epoch != 1 and (epoch - 1) % cfg.remap_every != 0:
            return None
        freq = frequency_matrix(scorer, prompt, train_set)
        return flm(freq, normalized=cfg.normalized_freq, allowed=allowed, provenance=f"ilm-epoch-{epoch}")

    return _run(scorer, train_set, test_set, cfg, None, remap, log)


def train_arm(scorer, train_set, test_set, cfg: TrainConfig, log=None):
    """Dispatch on ``cfg.lm_mode``; always returns ``(prompt, mapping, history)``."""
    if cfg.lm_mode == "ilm":
        return ilm_vp_train(scorer, train_set, test_set, cfg, log=log)
    mapping = initial_mapping(scorer, train_set, cfg)
    prompt, hist = vp_train_fixed_lm(scorer, mapping, train_set, test_set, cfg, log)
    return prompt, mapping, hist


def post_prompt_remap_drift(scorer, prompt: Prompt, mapping: LabelMapping, train_set, normalized: bool = True) -> int:
    """Hamming distance between ``mapping`` and the FLM mapping recomputed at ``prompt``."""
    return hamming_distance(mapping, flm(frequency_matrix(scorer, prompt, train_set), normalized=normalized))

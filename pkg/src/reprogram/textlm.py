"""Template selection as label mapping over "virtual labels".

Each (template, target label) pair becomes one virtual class of a two-tower
scorer: image features from a frozen trunk are compared by cosine similarity
against a fixed text embedding per rendered string. The usual FLM/ILM
machinery then maps target classes onto virtual labels, i.e. picks a
template per class.

The text tower is a deterministic surrogate: the embedding of a rendered
string is ``normalize(anchor(label) + a * t(template) + b * n(string))``
where each random vector is keyed by a hash of its string, so the same
rendered label always gets the same embedding.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, SpecError
from .labelmap import LabelMapping
from .numkernel import FLOAT, softmax_cross_entropy_batch
from .vptrain import TrainConfig, ilm_vp_train, vp_train_fixed_lm

BASELINE_TEMPLATE = "This is a photo of a {}"

DEFAULT_TEMPLATES = (
    BASELINE_TEMPLATE,
    "a close-up photo of a {}",
    "a pixelated photo of a {}",
    "a photo of a big {}",
    "a photo of a small {}",
    "a bright photo of the {}",
    "a sketch of a {}",
    "a blurry photo of a {}",
)


def validate_templates(templates) -> tuple[str, ...]:
    templates = tuple(templates)
    if not templates:
        raise SpecError("need at least one template")
    if len(set(templates)) != len(templates):
        raise SpecError("templates must be distinct")
    for t in templates:
        if t.count("{}") != 1:
            raise SpecError(f"template {t!r} must contain exactly one '{{}}' placeholder")
    return templates


def load_templates(path) -> tuple[str, ...]:
    """One template per line; blank lines and lines starting with ``#`` are skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return validate_templates(ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#"))


@dataclass(frozen=True)
class VirtualLabelSpace:
    templates: tuple[str, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "templates", validate_templates(self.templates))
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise SpecError("need at least one target label")

    @property
    def m(self) -> int:
        return len(self.templates)

    @property
    def num_targets(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return self.m * self.num_targets

    def flat_index(self, template_index: int, label_index: int) -> int:
        return template_index * self.num_targets + label_index

    def unflatten(self, v: int) -> tuple[int, int]:
        if not 0 <= v < len(self):
            raise DataError(f"virtual index {v} outside a space of {len(self)}")
        return divmod(v, self.num_targets)

    @property
    def entries(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.m) for j in range(self.num_targets)]

    def render(self, v: int) -> str:
        i, j = self.unflatten(v)
        return self.templates[i].replace("{}", self.labels[j])

    @property
    def rendered(self) -> list[str]:
        return [self.render(v) for v in range(len(self))]

    def own_class_mask(self) -> np.ndarray:
        """``allowed[j, v]`` is true when virtual label ``v`` renders target label ``j``."""
        allowed = np.zeros((self.num_targets, len(self)), dtype=bool)
        for i in range(self.m):
            for j in range(self.num_targets):
                allowed[j, self.flat_index(i, j)] = True
        return allowed


def build_virtual_space(templates, target_labels) -> VirtualLabelSpace:
    return VirtualLabelSpace(tuple(templates), tuple(target_labels))


def _keyed_vector(seed: int, key: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    rng = np.random.Generator(np.random.Philox(int.from_bytes(digest[:8], "little")))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def text_embeddings(space: VirtualLabelSpace, dim: int, anchors: dict | None = None, seed: int = 0,
                    template_weight: float = 0.3, string_weight: float = 0.5) -> np.ndarray:
    """Unit-norm embedding per rendered virtual label, shape ``(len(space), dim)``.

    ``anchors`` maps a label name to its shared label direction; labels without
    an anchor get a hashed random one.
    """
    anchors = anchors or {}
    rows = []
    for v in range(len(space)):
        i, j = space.unflatten(v)
        label = space.labels[j]
        a = np.asarray(anchors[label], dtype=np.float64) if label in anchors else _keyed_vector(seed, "label:" + label, dim)
        a = a / np.linalg.norm(a)
        e = (a + template_weight * _keyed_vector(seed, "template:" + space.templates[i], dim)
             + string_weight * _keyed_vector(seed, "text:" + space.render(v), dim))
        rows.append(e / np.linalg.norm(e))
    return np.stack(rows).astype(FLOAT)


class TwoTowerScorer:
    """``logits[v] = cos(trunk_features(x), text[v]) / temperature``."""

    def __init__(self, trunk, space: VirtualLabelSpace, embeddings, temperature: float = 0.05):
        emb = np.array(embeddings, dtype=FLOAT)
        if emb.shape != (len(space), trunk.arch.feature_dim):
            raise SpecError(f"text embeddings must be {(len(space), trunk.arch.feature_dim)}, got {emb.shape}")
        if not temperature > 0:
            raise SpecError("temperature must be positive")
        emb.setflags(write=False)
        self.trunk = trunk
        self.space = space
        self.embeddings = emb
        self.temperature = float(temperature)

    @classmethod
    def from_classifier(cls, trunk, space: VirtualLabelSpace, source_class_names=None, seed: int = 0,
                        temperature: float = 0.05, **kw) -> "TwoTowerScorer":
        """Anchor each label to the trunk's output-layer row of the same-named source class, when one exists."""
        anchors = {}
        if source_class_names is not None:
            head = trunk.weights[trunk.arch.layers()[-1][1] + ".w"]
            for idx, name in enumerate(source_class_names):
                anchors[name] = head[idx].astype(np.float64)
        emb = text_embeddings(space, trunk.arch.feature_dim, anchors, seed, **kw)
        return cls(trunk, space, emb, temperature)

    @property
    def num_classes(self) -> int:
        return len(self.space)

    @property
    def input_shape(self):
        return self.trunk.input_shape

    def _normalized(self, feats):
        norm = np.sqrt((feats * feats).sum(axis=1, keepdims=True))
        return feats / np.maximum(norm, 1e-12), norm

    def logits_from_features(self, feats) -> np.ndarray:
        feats = np.asarray(feats)
        single = feats.ndim == 1
        fn, _ = self._normalized(feats[None] if single else feats)
        logits = fn @ self.embeddings.astype(fn.dtype).T / fn.dtype.type(self.temperature)
        return logits[0] if single else logits

    def forward(self, x) -> np.ndarray:
        return self.logits_from_features(self.trunk.penultimate_features(x))

    def loss_and_input_gradient(self, x, labels):
        feats = self.trunk.penultimate_features(x)
        fn, norm = self._normalized(feats)
        emb = self.embeddings.astype(fn.dtype)
        inv_t = fn.dtype.type(1.0 / self.temperature)
        logits = fn @ emb.T * inv_t
        losses, g = softmax_cross_entropy_batch(logits, labels)
        g_fn = g @ emb * inv_t
        # d(f/|f|)/df applied to g_fn
        g_f = (g_fn - fn * (fn * g_fn).sum(axis=1, keepdims=True)) / np.maximum(norm, 1e-12)
        gx = self.trunk.feature_input_gradient(x, g_f)
        return losses, gx, logits


def text_lm_train(scorer: TwoTowerScorer, train_set, test_set, cfg: TrainConfig,
                  restrict_own_class: bool = False, log=None):
    """Alternating template/prompt training over the scorer's virtual label space.

    With a single template there is nothing to choose, so the mapping is
    pinned to each class's own rendering and the run reduces to the
    fixed-template baseline.
    """
    space = scorer.space
    if space.num_targets != train_set.num_classes:
        raise DataError(f"space has {space.num_targets} labels, dataset has {train_set.num_classes} classes")
    allowed = space.own_class_mask() if (restrict_own_class or space.m == 1) else None
    return ilm_vp_train(scorer, train_set, test_set, cfg, allowed=allowed, log=log)


def fixed_template_train(scorer: TwoTowerScorer, train_set, test_set, cfg: TrainConfig,
                         template_index: int = 0, log=None):
    """Baseline: every class reads off its own label under one fixed template."""
    space = scorer.space
    mapping = LabelMapping(tuple(space.flat_index(template_index, j) for j in range(space.num_targets)),
                           len(space), "fixed-template")
    prompt, hist = vp_train_fixed_lm(scorer, mapping, train_set, test_set, cfg, log)
    return prompt, mapping, hist


def selected_templates(mapping: LabelMapping, space: VirtualLabelSpace) -> list[dict]:
    out = []
    for t, v in enumerate(mapping.map):
        i, j = space.unflatten(v)
        out.append({
            "target_class": t,
            "target_label": space.labels[t],
            "template_index": i,
            "template": space.templates[i],
            "label_index": j,
            "rendered": space.render(v),
            "virtual_index": v,
            "cross_class": j != t,
        })
    return out


def write_template_report(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target_class", "template", "rendered", "virtual_index"])
        for r in rows:
            w.writerow([r["target_class"], r["template"], r["rendered"], r["virtual_index"]])

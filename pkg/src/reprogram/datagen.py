"""Procedural source/target image families and dataset file I/O.

``source16``
    16 classes of 3x32x32 images; each class is one motif (stripes, checker,
    disk, ...) in one of four colours, drawn at a random scale and position.
``target4-related``
    4 classes of 3x16x16 images, each a shrunken rendering of a designated
    source motif. The designated source classes form the ground-truth
    "interpretable" mapping.
``target4-unrelated``
    4 classes of 3x16x16 motifs that appear in no source class.
``blobs2``
    2 classes of flat 3x4x4 images, linearly separable by mean intensity.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .errors import DataError, FormatError, SpecError
from .numkernel import FLOAT, make_rng
from .pnm import read_pnm

FAMILIES = ("source16", "target4-related", "target4-unrelated", "blobs2")
SPLITS = ("train", "test")

PALETTE = np.array([
    [1.0, 0.25, 0.2],
    [0.2, 0.95, 0.3],
    [0.3, 0.45, 1.0],
    [0.95, 0.9, 0.2],
], dtype=np.float64)


def _r(y, x):
    return np.sqrt(x * x + y * y)


# Each motif maps normalised coordinates (y, x) in [-1, 1] to an intensity in [0, 1].
SOURCE_MOTIFS = {
    "hstripes": lambda y, x: np.sin(y * np.pi * 3) > 0,
    "vstripes": lambda y, x: np.sin(x * np.pi * 3) > 0,
    "diagonal": lambda y, x: np.sin((x + y) * np.pi * 2.5) > 0,
    "antidiagonal": lambda y, x: np.sin((x - y) * np.pi * 2.5) > 0,
    "checker": lambda y, x: np.sin(x * np.pi * 2) * np.sin(y * np.pi * 2) > 0,
    "corner": lambda y, x: ((x < -0.35) | (y < -0.35)) & (x < 0.9) & (y < 0.9),
    "plus": lambda y, x: (np.abs(x) < 0.25) | (np.abs(y) < 0.25),
    "cross": lambda y, x: np.abs(np.abs(x) - np.abs(y)) < 0.25,
    "square": lambda y, x: (np.maximum(np.abs(x), np.abs(y)) > 0.55) & (np.maximum(np.abs(x), np.abs(y)) < 0.9),
    "disk": lambda y, x: _r(y, x) < 0.6,
    "ring": lambda y, x: (_r(y, x) > 0.5) & (_r(y, x) < 0.85),
    "dots": lambda y, x: (np.sin(x * np.pi * 3.5) > 0.4) & (np.sin(y * np.pi * 3.5) > 0.4),
    "triangle": lambda y, x: (y > 2 * np.abs(x) - 0.8) & (y < 0.8),
    "tophalf": lambda y, x: y < 0,
    "diamond": lambda y, x: np.abs(x) + np.abs(y) < 0.7,
    "vbar": lambda y, x: np.abs(x) < 0.2,
}
SOURCE_NAMES = tuple(SOURCE_MOTIFS)

UNRELATED_MOTIFS = {
    "spiral": lambda y, x: np.sin(6 * np.arctan2(y, x) + 10 * _r(y, x)) > 0,
    "ramp": lambda y, x: (x + 1) / 2,
    "concentric": lambda y, x: np.sin(np.maximum(np.abs(x), np.abs(y)) * np.pi * 5) > 0,
    "speckle": lambda y, x: np.sin(13 * x + 7 * y * y) * np.cos(11 * y - 5 * x * x) > 0.2,
}

# target class j of the canonical related family is a shrunken copy of source class CANONICAL_DESIGNATED[j]
CANONICAL_DESIGNATED = (9, 4, 14, 6)

_DEFAULT_CANVAS = {"source16": 32, "target4-related": 16, "target4-unrelated": 16, "blobs2": 4}


@dataclass(frozen=True)
class GenSpec:
    family: str
    train_per_class: int = 100
    test_per_class: int = 25
    noise: float = 0.1
    seed: int = 0
    canvas: int | None = None
    jitter: bool = True
    designated: tuple[int, ...] = CANONICAL_DESIGNATED
    color_shift: int = 0

    def __post_init__(self):
        object.__setattr__(self, "designated", tuple(int(d) for d in self.designated))
        if self.family not in FAMILIES:
            raise SpecError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.noise < 0:
            raise SpecError("noise must be non-negative")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise SpecError("every class needs at least one sample per split")
        if self.canvas is None:
            object.__setattr__(self, "canvas", _DEFAULT_CANVAS[self.family])
        minimum = 4 if self.family == "blobs2" else 8
        if self.canvas < minimum:
            raise SpecError(f"canvas {self.canvas} too small for {self.family}")
        if self.family == "target4-related":
            if len(self.designated) != 4 or len(set(self.designated)) != 4:
                raise SpecError("designated must name 4 distinct source classes")
            if not all(0 <= d < len(SOURCE_NAMES) for d in self.designated):
                raise SpecError("designated source classes out of range")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["designated"] = list(self.designated)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        return cls(**d)


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=FLOAT)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise DataError("images must be (n, C, H, W) with one label per image")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError("labels outside the class range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def check_nonempty(self) -> None:
        sizes = self.class_sizes()
        if (sizes == 0).any():
            raise DataError(f"class {int(np.argmin(sizes))} ({self.class_names[int(np.argmin(sizes))]}) is empty")

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], list(self.class_names), self.split, dict(self.provenance))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.images.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()


def _grid(size: int, scale: float = 1.0, dy: float = 0.0, dx: float = 0.0):
    c = (np.arange(size) + 0.5) / size * 2 - 1
    y, x = np.meshgrid(c, c, indexing="ij")
    return (y - dy) * scale, (x - dx) * scale


def _render(motif, size, rng, jitter):
    if jitter:
        scale = rng.uniform(0.9, 1.1)
        dy, dx = rng.uniform(-0.12, 0.12, size=2)
    else:
        scale, dy, dx = 1.0, 0.0, 0.0
    y, x = _grid(size, scale, dy, dx)
    return np.asarray(motif(y, x), dtype=np.float64)


def _source_image(cls, canvas, rng, spec):
    motif = SOURCE_MOTIFS[SOURCE_NAMES[cls]]
    img = np.zeros((3, canvas, canvas))
    if spec.jitter:
        s = int(rng.integers(canvas // 2, canvas + 1))
        top, left = (int(v) for v in rng.integers(0, canvas - s + 1, size=2))
        bright = rng.uniform(0.7, 1.0)
    else:
        s, top, left, bright = canvas, 0, 0, 1.0
    inten = _render(motif, s, rng, spec.jitter)
    color = PALETTE[cls % len(PALETTE)] * bright
    img[:, top:top + s, left:left + s] = color[:, None, None] * inten[None]
    return img


def _target_image(motif, color, canvas, rng, spec):
    bright = rng.uniform(0.7, 1.0) if spec.jitter else 1.0
    inten = _render(motif, canvas, rng, spec.jitter)
    return (color * bright)[:, None, None] * inten[None]


def _blob_image(cls, canvas, rng, spec):
    lo, hi = (0.1, 0.4) if cls == 0 else (0.6, 0.9)
    mid = (lo + hi) / 2
    img = mid + rng.normal(0, spec.noise, size=(3, canvas, canvas)) if spec.noise else np.full((3, canvas, canvas), mid)
    return np.clip(img, lo, hi)


def class_names(spec: GenSpec) -> list[str]:
    if spec.family == "source16":
        return list(SOURCE_NAMES)
    if spec.family == "target4-related":
        return [SOURCE_NAMES[d] for d in spec.designated]
    if spec.family == "target4-unrelated":
        return list(UNRELATED_MOTIFS)
    return ["low", "high"]


def generate(spec: GenSpec, split: str = "train") -> Dataset:
    """Deterministic dataset for one split; each split draws from its own RNG substream."""
    if split not in SPLITS:
        raise SpecError(f"split must be one of {SPLITS}")
    rng = make_rng(spec.seed, FAMILIES.index(spec.family), SPLITS.index(split))
    names = class_names(spec)
    per_class = spec.train_per_class if split == "train" else spec.test_per_class
    canvas = spec.canvas
    images, labels = [], []
    for cls in range(len(names)):
        for _ in range(per_class):
            if spec.family == "source16":
                img = _source_image(cls, canvas, rng, spec)
            elif spec.family == "target4-related":
                src = spec.designated[cls]
                color = PALETTE[(src + spec.color_shift) % len(PALETTE)]
                img = _target_image(SOURCE_MOTIFS[SOURCE_NAMES[src]], color, canvas, rng, spec)
            elif spec.family == "target4-unrelated":
                color = PALETTE[cls % len(PALETTE)]
                img = _target_image(UNRELATED_MOTIFS[names[cls]], color, canvas, rng, spec)
            else:
                img = _blob_image(cls, canvas, rng, spec)
            if spec.noise and spec.family != "blobs2":
                img = img + rng.normal(0, spec.noise, size=img.shape)
            images.append(np.clip(img, 0, 1))
            labels.append(cls)
    provenance = {"generator": spec.to_dict()}
    if spec.family == "target4-related":
        provenance["designated_source"] = list(spec.designated)
    return Dataset(np.stack(images).astype(FLOAT), np.array(labels), names, split, provenance)


def generate_splits(spec: GenSpec) -> tuple[Dataset, Dataset]:
    return generate(spec, "train"), generate(spec, "test")


# -- file I/O ----------------------------------------------------------------

def save_dataset(ds: Dataset, path) -> None:
    meta = {"class_names": ds.class_names, "split": ds.split, "provenance": ds.provenance}
    container.write(path, "dataset", meta, {"images": ds.images, "labels": ds.labels.astype(FLOAT)})


def load_dataset(path) -> Dataset:
    meta, arrays = container.read(path, kind="dataset")
    try:
        images, labels = arrays["images"], arrays["labels"]
    except KeyError as exc:
        raise FormatError(f"{path}: dataset record lacks {exc}") from exc
    if labels.ndim != 1 or len(labels) != len(images) or np.any(labels != np.rint(labels)):
        raise FormatError(f"{path}: malformed label array")
    return Dataset(images, labels.astype(np.int64), list(meta["class_names"]), meta.get("split", "train"),
                   meta.get("provenance", {}))


_PNM_NAME = re.compile(r"^label_(\d+)_.*\.(pgm|ppm)$")


def load_pnm_directory(path, split: str = "train", channels: int = 3) -> Dataset:
    """Ingest ``label_<k>_*.pgm|ppm`` files; distinct ``k`` values become classes in ascending order."""
    files = []
    for p in sorted(Path(path).iterdir()):
        m = _PNM_NAME.match(p.name)
        if m:
            files.append((int(m.group(1)), p))
    if not files:
        raise DataError(f"{path}: no label_<k>_*.pgm/ppm files found")
    keys = sorted({k for k, _ in files})
    remap = {k: i for i, k in enumerate(keys)}
    images, labels = [], []
    for k, p in files:
        img = read_pnm(p)
        if img.shape[0] == 1 and channels == 3:
            img = np.repeat(img, 3, axis=0)
        images.append(img)
        labels.append(remap[k])
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DataError(f"{path}: images have inconsistent shapes {sorted(shapes)}")
    return Dataset(np.stack(images), np.array(labels), [f"label_{k}" for k in keys], split,
                   {"ingested_from": str(path)})

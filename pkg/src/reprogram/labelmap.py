"""Prediction-frequency matrices and target->source label mappings."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import CapacityError, DataError, ShapeError
from .prompting import apply_prompt


@dataclass(frozen=True, eq=False)
class FrequencyMatrix:
    counts: np.ndarray
    class_sizes: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def normalized(self) -> np.ndarray:
        """Row-normalised counts: empirical P(top-1 = source | target class)."""
        sizes = self.counts.sum(axis=1, keepdims=True)
        return self.counts / np.maximum(sizes, 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["target_class"] + [f"s{j}" for j in range(self.counts.shape[1])])
            for i, row in enumerate(self.counts):
                w.writerow([i] + [int(v) for v in row])


@dataclass(frozen=True, eq=False)
class LabelMapping:
    map: tuple[int, ...]
    num_source: int
    provenance: str = "manual"
    trace: tuple = field(default=(), repr=False)

    def __post_init__(self):
        m = tuple(int(v) for v in self.map)
        object.__setattr__(self, "map", m)
        if any(not 0 <= v < self.num_source for v in m):
            raise DataError(f"mapping {m} has entries outside [0, {self.num_source})")
        if len(set(m)) != len(m):
            raise DataError(f"mapping {m} is not injective")

    def __len__(self) -> int:
        return len(self.map)

    def __getitem__(self, y_t):
        return self.map[y_t]

    def __eq__(self, other):
        return isinstance(other, LabelMapping) and self.map == other.map and self.num_source == other.num_source

    def as_array(self) -> np.ndarray:
        return np.array(self.map, dtype=np.int64)

    def to_json(self) -> dict:
        return {"provenance": self.provenance, "K_t": len(self.map), "K_s": self.num_source, "map": list(self.map)}

    @classmethod
    def from_json(cls, d: dict) -> "LabelMapping":
        if len(d["map"]) != d["K_t"]:
            raise DataError("mapping length disagrees with K_t")
        return cls(tuple(d["map"]), d["K_s"], d.get("provenance", "manual"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LabelMapping":
        return cls.from_json(json.loads(Path(path).read_text()))


def frequency_matrix(model, prompt, target_set, batch_size: int = 256) -> FrequencyMatrix:
    """Count top-1 source predictions on prompted targets, per target class (ties -> lowest class)."""
    target_set.check_nonempty()
    k_t, k_s = target_set.num_classes, model.num_classes
    counts = np.zeros((k_t, k_s), dtype=np.int64)
    for i in range(0, len(target_set), batch_size):
        x = apply_prompt(target_set.images[i:i + batch_size], prompt)
        pred = model.forward(x).argmax(axis=1)
        np.add.at(counts, (target_set.labels[i:i + batch_size], pred), 1)
    return FrequencyMatrix(counts, target_set.class_sizes())


def _check_capacity(k_t, k_s):
    if k_t > k_s:
        raise CapacityError(f"cannot injectively map {k_t} target classes into {k_s} source classes")


def flm(freq: FrequencyMatrix, normalized: bool = True, allowed: np.ndarray | None = None,
        provenance: str = "flm") -> LabelMapping:
    """Global greedy assignment with exclusion.

    Repeatedly takes the largest remaining cell over unassigned target rows and
    unused source columns; ties go to the lower target index, then the lower
    source index. ``allowed`` optionally restricts which cells may be chosen.
    The returned mapping carries the pick sequence in ``trace``.
    """
    k_t, k_s = freq.shape
    _check_capacity(k_t, k_s)
    vals = freq.normalized() if normalized else freq.counts.astype(np.float64)
    vals = np.array(vals, dtype=np.float64)
    if allowed is not None:
        vals[~np.asarray(allowed, dtype=bool)] = -np.inf
    mapping = [-1] * k_t
    trace = []
    for _ in range(k_t):
        # row-major argmax returns the first maximal cell: lowest row, then lowest column
        flat = int(np.argmax(vals))
        t, s = divmod(flat, k_s)
        if vals[t, s] == -np.inf:
            raise CapacityError("allowed cells cannot cover every target class")
        mapping[t] = s
        trace.append((t, s, float(vals[t, s])))
        vals[t, :] = -np.inf
        vals[:, s] = -np.inf
    return LabelMapping(tuple(mapping), k_s, provenance, tuple(trace))


def rlm(k_t: int, k_s: int, rng: np.random.Generator | None = None) -> LabelMapping:
    """Identity on the first ``k_t`` source classes, or a uniform injective draw when ``rng`` is given."""
    _check_capacity(k_t, k_s)
    if rng is None:
        return LabelMapping(tuple(range(k_t)), k_s, "rlm")
    return LabelMapping(tuple(int(v) for v in rng.permutation(k_s)[:k_t]), k_s, "rlm")


def mapping_total(freq: FrequencyMatrix, mapping: LabelMapping, normalized: bool = True) -> float:
    vals = freq.normalized() if normalized else freq.counts
    return float(sum(vals[t, s] for t, s in enumerate(mapping.map)))


def optimal_assignment(freq: FrequencyMatrix, normalized: bool = True) -> LabelMapping:
    """Injective map maximising the summed (normalised) frequency, via the Hungarian method."""
    k_t, k_s = freq.shape
    _check_capacity(k_t, k_s)
    vals = freq.normalized() if normalized else freq.counts.astype(np.float64)
    rows, cols = linear_sum_assignment(vals, maximize=True)
    mapping = [0] * k_t
    for r, c in zip(rows, cols):
        mapping[r] = int(c)
    return LabelMapping(tuple(mapping), k_s, "optimal")


def hamming_distance(a, b) -> int:
    """Number of target classes whose mapped source class differs; accepts mappings or plain sequences."""
    a, b = tuple(getattr(a, "map", a)), tuple(getattr(b, "map", b))
    if len(a) != len(b):
        raise ShapeError("label mappings", (len(a),), (len(b),))
    return sum(x != y for x, y in zip(a, b))

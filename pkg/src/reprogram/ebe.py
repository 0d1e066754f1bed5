"""Explanation by example: nearest source-training images in penultimate-feature space."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError
from .pnm import hstack_images, write_pnm
from .prompting import apply_prompt


@dataclass
class ExplanationResult:
    query_id: int | str | None
    mapped_class: int
    ids: list[int]
    similarities: list[float]
    truncated: bool = False
    zero_norm: bool = False

    def to_json(self) -> dict:
        return asdict(self)


class SourceIndex:
    """Penultimate features of a source dataset, computed once."""

    def __init__(self, model, source_set, batch_size: int = 256):
        self.model = model
        self.source_set = source_set
        chunks = [model.penultimate_features(source_set.images[i:i + batch_size])
                  for i in range(0, len(source_set), batch_size)]
        self.features = np.concatenate(chunks).astype(np.float64)
        self.norms = np.linalg.norm(self.features, axis=1)


def cosine_to(features: np.ndarray, norms: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine similarity of each row with ``query``; zero-norm vectors score 0."""
    q = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(q)
    denom = norms * qn
    dots = features @ q
    sims = np.zeros(len(features))
    ok = denom > 0
    sims[ok] = dots[ok] / denom[ok]
    return np.clip(sims, -1.0, 1.0)


def explain(model, prompt, x_t, mapping, y_t: int, source_set=None, k: int = 3, *,
            index: SourceIndex | None = None, all_classes: bool = False, query_id=None) -> ExplanationResult:
    """Top-``k`` source samples most cosine-similar to the prompted query, within the mapped source class."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if index is None:
        if source_set is None:
            raise ValueError("need a source dataset or a prebuilt SourceIndex")
        index = SourceIndex(model, source_set)
    labels = index.source_set.labels
    mapped = int(mapping[y_t])
    candidates = np.arange(len(labels)) if all_classes else np.flatnonzero(labels == mapped)
    if len(candidates) == 0:
        raise DataError(f"source class {mapped} has no samples")
    query = model.penultimate_features(apply_prompt(x_t, prompt)).astype(np.float64)
    sims = cosine_to(index.features[candidates], index.norms[candidates], query)
    # descending similarity, ties to the lower sample id
    order = np.lexsort((candidates, -sims))[:k]
    zero = bool(np.linalg.norm(query) == 0 or (index.norms[candidates[order]] == 0).any())
    return ExplanationResult(
        query_id=query_id,
        mapped_class=mapped,
        ids=[int(i) for i in candidates[order]],
        similarities=[float(s) for s in sims[order]],
        truncated=len(candidates) < k,
        zero_norm=zero,
    )


def write_report(result: ExplanationResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_json(), fh, indent=2)
        fh.write("\n")


def write_strip(prompt, x_t, result: ExplanationResult, source_set, path) -> None:
    """Side-by-side image: prompted query followed by the retrieved source samples."""
    query = np.clip(apply_prompt(x_t, prompt), 0, 1)
    write_pnm(path, hstack_images([query] + [source_set.images[i] for i in result.ids]))

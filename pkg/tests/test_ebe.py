import json

import numpy as np
import pytest

from conftest import random_dataset, random_model
from reprogram.datagen import Dataset
from reprogram.ebe import SourceIndex, cosine_to, explain, write_report, write_strip
from reprogram.errors import DataError
from reprogram.labelmap import LabelMapping
from reprogram.pnm import read_pnm
from reprogram.prompting import Prompt, PromptSpec, apply_prompt

SRC = (3, 8, 8)
TGT = (3, 4, 4)


@pytest.fixture
def setup():
    model = random_model("convnet", SRC, 4, seed=1, hidden=(12,), conv_channels=(4, 4))
    source = random_dataset(4, 50, SRC, seed=5)
    spec = PromptSpec(SRC, TGT)
    prompt = Prompt(spec, np.random.default_rng(2).uniform(-0.5, 0.5, SRC))
    return model, source, prompt


def scan(model, source, prompt, x, cls):
    q = model.penultimate_features(apply_prompt(x, prompt)).astype(np.float64)
    best, best_id = -2.0, None
    for i in range(len(source)):
        if source.labels[i] != cls:
            continue
        f = model.penultimate_features(source.images[i]).astype(np.float64)
        den = np.linalg.norm(f) * np.linalg.norm(q)
        s = float(f @ q / den) if den > 0 else 0.0
        if s > best:
            best, best_id = s, i
    return best_id, best


def test_top1_matches_exhaustive_scan(setup):
    model, source, prompt = setup
    index = SourceIndex(model, source)
    mapping = LabelMapping((2, 0, 3), 4)
    rng = np.random.default_rng(9)
    for q in range(50):
        x = rng.uniform(size=TGT).astype(np.float32)
        y = int(rng.integers(3))
        res = explain(model, prompt, x, mapping, y, k=3, index=index, query_id=q)
        best_id, best = scan(model, source, prompt, x, mapping[y])
        assert res.ids[0] == best_id
        assert res.similarities[0] == pytest.approx(best, abs=1e-6)
        assert res.similarities == sorted(res.similarities, reverse=True)
        assert all(-1 <= s <= 1 for s in res.similarities)
        assert all(source.labels[i] == mapping[y] for i in res.ids)


def test_planted_self_query(setup):
    model, source, prompt = setup
    x = np.random.default_rng(3).uniform(size=TGT).astype(np.float32)
    planted = apply_prompt(x, prompt)
    images = np.concatenate([source.images, planted[None]])
    labels = np.concatenate([source.labels, [1]])
    src = Dataset(images, labels, source.class_names, "train")
    res = explain(model, prompt, x, LabelMapping((1,), 4), 0, src, k=3)
    assert res.ids[0] == len(src) - 1
    assert res.similarities[0] == pytest.approx(1.0, abs=1e-6)


def test_truncated_when_class_small(setup):
    model, source, prompt = setup
    small = source.subset(np.concatenate([np.flatnonzero(source.labels == 0)[:2], np.flatnonzero(source.labels == 1)]))
    res = explain(model, prompt, np.zeros(TGT), LabelMapping((0,), 4), 0, small, k=5)
    assert len(res.ids) == 2 and res.truncated


def test_errors(setup):
    model, source, prompt = setup
    with pytest.raises(ValueError):
        explain(model, prompt, np.zeros(TGT), LabelMapping((0,), 4), 0, source, k=0)
    no3 = source.subset(np.flatnonzero(source.labels != 3))
    with pytest.raises(DataError):
        explain(model, prompt, np.zeros(TGT), LabelMapping((3,), 4), 0, no3)


def test_scale_invariance_and_zero_norm():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(20, 6))
    norms = np.linalg.norm(feats, axis=1)
    q = rng.normal(size=6)
    base = cosine_to(feats, norms, q)
    for c in (1e-4, 3.0, 1e5):
        np.testing.assert_allclose(cosine_to(feats, norms, q * c), base, atol=1e-12)
    feats[3] = 0
    norms[3] = 0
    assert cosine_to(feats, norms, q)[3] == 0.0
    assert not cosine_to(feats, norms, np.zeros(6)).any()


def test_ties_go_to_lower_id(setup):
    model, source, prompt = setup
    images = np.repeat(source.images[:1], 4, axis=0)
    src = Dataset(images, np.zeros(4, dtype=int), ["a"], "train")
    res = explain(model, prompt, np.zeros(TGT), LabelMapping((0,), 1), 0, src, k=4)
    assert res.ids == [0, 1, 2, 3]


def test_all_classes_mode(setup):
    model, source, prompt = setup
    x = np.random.default_rng(1).uniform(size=TGT)
    res = explain(model, prompt, x, LabelMapping((0,), 4), 0, source, k=1, all_classes=True)
    best = max((scan(model, source, prompt, x, c) for c in range(4)), key=lambda t: t[1])
    assert res.ids[0] == best[0]


def test_report_and_strip(tmp_path, setup):
    model, source, prompt = setup
    x = np.random.default_rng(1).uniform(size=TGT).astype(np.float32)
    res = explain(model, prompt, x, LabelMapping((2,), 4), 0, source, k=3, query_id=7)
    write_report(res, tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["query_id"] == 7 and d["mapped_class"] == 2 and len(d["ids"]) == 3
    write_strip(prompt, x, res, source, tmp_path / "s.ppm")
    assert read_pnm(tmp_path / "s.ppm").shape[0] == 3

"""End-to-end criteria on the canonical task: source16 -> target4-related, convnet, 5 seeds, 60 epochs.

Each test records one PASS/FAIL line, shown in the terminal summary.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_model
from gradcheck import directional_check
from reprogram import experiment
from reprogram.ebe import SourceIndex, explain
from reprogram.labelmap import FrequencyMatrix, flm, frequency_matrix, mapping_total, optimal_assignment
from reprogram.numkernel import softmax_cross_entropy_batch
from reprogram.prompting import Prompt, PromptSpec, apply_prompt, prompt_gradient, zero_pad, zero_prompt
from reprogram.vptrain import NEVER, TrainConfig, ilm_vp_train

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3, 4)
EPOCHS = 60


def record(number, name, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}")
    return ok


@pytest.fixture(scope="module")
def canon():
    """Pretrained source model plus every arm on every seed, computed once."""
    cfg = experiment.canonical_config(epochs=EPOCHS, seeds=SEEDS)
    model = experiment.source_model(cfg)
    state = {"cfg": cfg, "model": model, "checksum": model.checksum(), "runs": {}, "seconds": {}}
    for arm in ("rlm", "flm", "ilm"):
        tic = time.process_time()
        state["runs"][arm] = [experiment.run_arm(cfg, model, s, lm_mode=arm) for s in SEEDS]
        state["seconds"][arm] = time.process_time() - tic
    return state


def accs(canon, arm):
    return np.array([r.history.final_test_acc for r in canon["runs"][arm]])


# 1 ---------------------------------------------------------------------------

def test_gradient_correctness():
    spec = PromptSpec((3, 32, 32), (3, 16, 16))
    tic = time.process_time()
    worst, skipped, raw = {}, {}, {}
    for kind in ("mlp", "convnet"):
        model = random_model(kind, (3, 32, 32), 16, seed=1, hidden=(64,))
        rng = np.random.default_rng(2024)
        state = {}

        def draw():
            state["x"] = rng.uniform(size=(3, 16, 16)).astype(np.float32)
            state["y"] = int(rng.integers(16))
            d = rng.normal(size=spec.source_shape) * spec.mask
            return rng.normal(0, 0.5, spec.source_shape) * spec.mask, d / np.linalg.norm(d)

        def prompted64(delta):
            return zero_pad(state["x"], spec).astype(np.float64) + spec.mask * delta

        def loss64(delta):
            logits = model.forward(prompted64(delta))
            return float(softmax_cross_entropy_batch(logits[None], np.array([state["y"]]))[0][0])

        def analytic(delta):
            p = Prompt(spec, delta)
            _, gx, _ = model.loss_and_input_gradient(apply_prompt(state["x"], p)[None], np.array([state["y"]]))
            return prompt_gradient(gx[0], p)

        stats = {}
        # kink-straddling probes are redrawn (at most one redraw per counted pair)
        worst[kind], skipped[kind] = directional_check(
            draw, loss64, analytic, lambda delta: model.activation_pattern(prompted64(delta)), pairs=100, eps=1e-3,
            max_skip_frac=1.0, stats=stats)
        raw[kind] = stats["worst_including_kinks"]
    seconds = time.process_time() - tic
    ok = max(worst.values()) < 1e-2 and seconds < 60
    detail = ", ".join(f"{k} max rel err {worst[k]:.2e} ({skipped[k]} kink-straddling probes redrawn; "
                       f"{raw[k]:.2e} with them)" for k in worst)
    assert record(1, "gradient correctness", ok, f"{detail}; {seconds:.1f}s")


# 2 ---------------------------------------------------------------------------

def _sorted_greedy(vals):
    cells = sorted((-vals[t, s], t, s) for t in range(vals.shape[0]) for s in range(vals.shape[1]))
    rows, cols, out = set(), set(), {}
    for _, t, s in cells:
        if t not in rows and s not in cols:
            out[t] = s
            rows.add(t)
            cols.add(s)
    return tuple(out[t] for t in sorted(out))


def test_flm_greedy_oracle():
    tic = time.process_time()
    rng = np.random.default_rng(7)
    mismatches = worse = 0
    for _ in range(1000):
        counts = rng.integers(0, 10, size=(5, 8))
        counts[:, rng.integers(8)] += 1
        f = FrequencyMatrix(counts, counts.sum(axis=1))
        greedy = flm(f)
        mismatches += greedy.map != _sorted_greedy(f.normalized())
        worse += mapping_total(f, optimal_assignment(f)) < mapping_total(f, greedy) - 1e-12
    seconds = time.process_time() - tic
    ok = mismatches == 0 and worse == 0 and seconds < 10
    assert record(2, "FLM greedy oracle", ok, f"{mismatches} mismatches, {worse} optimal<greedy; {seconds:.1f}s")


# 3 ---------------------------------------------------------------------------

def test_zero_prompt_reductions(canon):
    cfg, model = canon["cfg"], canon["model"]
    spec = PromptSpec(model.input_shape, (3, 16, 16))
    bytes_equal, maps_equal = True, True
    for run, seed in zip(canon["runs"]["ilm"], SEEDS):
        train, _ = experiment.target_data(cfg, seed)
        bytes_equal &= apply_prompt(train.images, zero_prompt(spec)).tobytes() == zero_pad(train.images, spec).tobytes()
        pre = flm(frequency_matrix(model, zero_prompt(spec), train))
        maps_equal &= run.history.records[0].mapping == list(pre.map)
    ok = bytes_equal and maps_equal
    assert record(3, "delta=0 reductions", ok, f"zero-pad byte-equal={bytes_equal}, epoch-1 ILM == pre-prompt FLM={maps_equal}")


# 4 ---------------------------------------------------------------------------

def test_never_remap_replays_flm(canon):
    cfg, model = canon["cfg"], canon["model"]
    same = []
    for run, seed in zip(canon["runs"]["flm"], SEEDS):
        train, test = experiment.target_data(cfg, seed)
        tcfg = TrainConfig.from_dict({**cfg.train_obj(seed, "ilm").to_dict(), "remap_every": None})
        assert tcfg.remap_every == NEVER
        _, _, hist = ilm_vp_train(model, train, test, tcfg)
        same.append(hist.comparable() == run.history.comparable())
    ok = all(same)
    assert record(4, "operational reduction", ok, f"ILM(remap=never) == FLM-VP bit-identical on {sum(same)}/5 seeds")


# 5 ---------------------------------------------------------------------------

def test_accuracy_ordering(canon):
    r, f, i = (accs(canon, a).mean() for a in ("rlm", "flm", "ilm"))
    slowest = max(canon["seconds"].values())
    ok = i >= f >= r and i - r >= 0.05 and slowest < 300
    detail = (f"RLM {r:.3f}, FLM {f:.3f}, ILM {i:.3f} (ILM-RLM {i - r:+.3f}); "
              f"slowest arm {slowest:.0f}s CPU")
    assert record(5, "accuracy ordering", ok, detail)


# 6 ---------------------------------------------------------------------------

def test_lm_convergence(canon):
    tail = EPOCHS - int(0.75 * EPOCHS)
    good = 0
    notes = []
    for run in canon["runs"]["ilm"]:
        h = run.history
        stable = all(d == 0 for d in h.hammings[-tail:])
        descent = h.losses[-1] <= 0.8 * h.losses[0]
        good += stable and descent
        notes.append(f"{'ok' if stable and descent else 'no'}({h.losses[-1] / h.losses[0]:.2f})")
    ok = good >= 4
    assert record(6, "LM convergence", ok, f"{good}/5 runs stable over last {tail} epochs with loss ratio <= 0.8: "
                                         + " ".join(notes))


# 7 ---------------------------------------------------------------------------

def test_pre_post_drift(canon):
    ilm = [r.drift for r in canon["runs"]["ilm"]]
    fl = [r.drift for r in canon["runs"]["flm"]]
    wins = sum(a <= b for a, b in zip(ilm, fl))
    ok = wins >= 4
    assert record(7, "pre/post drift", ok, f"ILM drift {ilm} vs FLM drift {fl}: ILM<=FLM on {wins}/5")


# 8 ---------------------------------------------------------------------------

def test_designated_recovery(canon):
    ilm = sum(r.designated_hits for r in canon["runs"]["ilm"])
    fl = sum(r.designated_hits for r in canon["runs"]["flm"])
    ok = ilm >= fl
    assert record(8, "designated-pair recovery", ok, f"ILM {ilm}/20 vs FLM {fl}/20")


# 9 ---------------------------------------------------------------------------

def test_text_lm_direction(canon):
    cfg, model = canon["cfg"], canon["model"]
    lm = [experiment.run_text_arm(cfg, model, s) for s in SEEDS]
    base = [experiment.run_text_arm(cfg, model, s, fixed=True) for s in SEEDS]
    single = [experiment.run_text_arm(cfg, model, s, m=1) for s in SEEDS]
    a_lm = np.mean([r.history.final_test_acc for r in lm])
    a_base = np.mean([r.history.final_test_acc for r in base])
    identical = all(s.history.comparable() == b.history.comparable() and s.mapping == b.mapping
                    for s, b in zip(single, base))
    ok = a_lm >= a_base and identical
    assert record(9, "text-LM direction", ok,
                  f"VP+TP+LM(m=4) {a_lm:.3f} vs VP+TP {a_base:.3f}; m=1 bit-identical on 5 seeds={identical}")


# 10 --------------------------------------------------------------------------

def test_ebe_oracle(canon):
    cfg, model = canon["cfg"], canon["model"]
    run = canon["runs"]["ilm"][0]
    source_train, _ = experiment.source_data(cfg)
    _, test = experiment.target_data(cfg, 0)
    index = SourceIndex(model, source_train)
    rng = np.random.default_rng(10)
    agree = 0
    for q in rng.choice(len(test), size=50, replace=False):
        x, y = test.images[q], int(test.labels[q])
        res = explain(model, run.prompt, x, run.mapping, y, k=3, index=index)
        feat = model.penultimate_features(apply_prompt(x, run.prompt)).astype(np.float64)
        best, best_id = -np.inf, None
        for i in np.flatnonzero(source_train.labels == run.mapping[y]):
            f = model.penultimate_features(source_train.images[i]).astype(np.float64)
            den = np.linalg.norm(f) * np.linalg.norm(feat)
            s = f @ feat / den if den > 0 else 0.0
            if s > best:
                best, best_id = s, i
        agree += res.ids[0] == best_id
    planted_x = test.images[0]
    planted = apply_prompt(planted_x, run.prompt)
    from reprogram.datagen import Dataset

    cls = run.mapping[int(test.labels[0])]
    src = Dataset(np.concatenate([source_train.images, planted[None]]),
                  np.concatenate([source_train.labels, [cls]]), source_train.class_names, "train")
    res = explain(model, run.prompt, planted_x, run.mapping, int(test.labels[0]), src, k=3)
    self_ok = res.ids[0] == len(src) - 1 and abs(res.similarities[0] - 1.0) < 1e-6
    ok = agree == 50 and self_ok
    assert record(10, "EBE oracle", ok, f"top-1 agrees with scan on {agree}/50; planted self-match "
                                       f"sim={res.similarities[0]:.6f} at rank {res.ids.index(len(src) - 1) + 1 if len(src) - 1 in res.ids else '-'}")


# 11 --------------------------------------------------------------------------

def test_determinism_and_frozen_weights(canon, tmp_path):
    cfg = canon["cfg"]
    seed = 0
    first = {}
    for arm in ("rlm", "flm", "ilm"):
        res = next(r for r in canon["runs"][arm] if r.seed == seed)
        first[arm] = experiment.comparable_dir(experiment.write_run(tmp_path / "a" / arm, cfg, res))
    # rebuild everything from scratch, including the source model
    experiment._MODEL_CACHE.clear()
    fresh = experiment.source_model(cfg)
    identical = fresh.checksum() == canon["checksum"]
    for arm in ("rlm", "flm", "ilm"):
        res = experiment.run_arm(cfg, fresh, seed, lm_mode=arm)
        again = experiment.comparable_dir(experiment.write_run(tmp_path / "b" / arm, cfg, res))
        identical &= again == first[arm]
    checksums = {r.model_checksum for runs in canon["runs"].values() for r in runs}
    frozen = checksums == {canon["checksum"]} and canon["model"].checksum() == canon["checksum"]
    ok = identical and frozen
    assert record(11, "determinism and frozen weights", ok,
                  f"rerun artifacts byte-identical={identical}; weight checksum constant across "
                  f"{sum(len(v) for v in canon['runs'].values())} runs={frozen}")

"""
Re-mapping labels while the prompt trains
=========================================

One seed of the canonical synthetic task with a shortened epoch budget. The
frequency-based mapping is fixed before training; the iterative one is
recomputed at the start of every epoch.
"""

import sys

from reprogram import experiment

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
cfg = experiment.canonical_config(epochs=epochs, seeds=[0])

model = experiment.source_model(cfg)
print("source model test accuracy", round(model.provenance["test_acc"], 3))

train, _ = experiment.target_data(cfg, 0)
print("target classes", train.class_names, "designated sources", train.provenance["designated_source"])

for arm in ("rlm", "flm", "ilm"):
    res = experiment.run_arm(cfg, model, 0, lm_mode=arm)
    h = res.history
    print(f"{arm}: acc {h.final_test_acc:.3f}  mapping {list(res.mapping.map)}  "
          f"drift {res.drift}  designated hits {res.designated_hits}/4")
    if arm == "ilm":
        changes = [(r.epoch, r.mapping) for r in h.records if r.hamming_prev]
        print("   mapping changes:", changes or "none")

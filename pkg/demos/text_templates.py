"""
Choosing a caption template per class
=====================================

Every (template, label) pair is a virtual class of a two-tower scorer; the
same greedy mapping machinery picks one per target class.
"""

import sys

from reprogram import experiment

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
cfg = experiment.canonical_config(epochs=epochs, seeds=[0])
model = experiment.source_model(cfg)

base = experiment.run_text_arm(cfg, model, 0, fixed=True)
lm = experiment.run_text_arm(cfg, model, 0, m=4)
print(f"fixed template   acc {base.history.final_test_acc:.3f}")
print(f"template mapping acc {lm.history.final_test_acc:.3f}")
for row in lm.extra["templates"]:
    flag = " (borrowed from another class)" if row["cross_class"] else ""
    print(f"  {row['target_label']:>8} <- {row['rendered']!r}{flag}")

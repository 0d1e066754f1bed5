"""
Which source images does a prompted target resemble?
====================================================

Nearest neighbours in penultimate-feature space, restricted to the source
class the target is mapped to. Writes a PPM strip per query.
"""

import sys
import tempfile
from pathlib import Path

from reprogram import experiment
from reprogram.ebe import SourceIndex, explain, write_strip

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
cfg = experiment.canonical_config(epochs=epochs, seeds=[0])
model = experiment.source_model(cfg)
res = experiment.run_arm(cfg, model, 0, lm_mode="ilm")

source_train, _ = experiment.source_data(cfg)
_, test = experiment.target_data(cfg, 0)
index = SourceIndex(model, source_train)

out = Path(tempfile.mkdtemp(prefix="ebe_"))
for q in (0, 60, 120, 180):
    y = int(test.labels[q])
    r = explain(model, res.prompt, test.images[q], res.mapping, y, k=3, index=index, query_id=q)
    names = [source_train.class_names[source_train.labels[i]] for i in r.ids]
    print(f"query {q} ({test.class_names[y]}) -> {names} sims {[round(s, 3) for s in r.similarities]}")
    write_strip(res.prompt, test.images[q], r, source_train, out / f"query_{q}.ppm")
print("strips in", out)

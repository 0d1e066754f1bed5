"""
Greedy versus optimal label mapping
===================================

Rows are target classes, columns source classes, entries how often a target
class is predicted as each source class.
"""

import numpy as np

from reprogram.labelmap import FrequencyMatrix, flm, hamming_distance, mapping_total, optimal_assignment, rlm

# target 1 wants source 0 or 2, and both get taken by classes that have alternatives
counts = np.array([
    [50, 45, 5, 0],
    [49, 0, 51, 0],
    [0, 10, 80, 10],
])
freq = FrequencyMatrix(counts, counts.sum(axis=1))
print(np.round(freq.normalized(), 2))

greedy = flm(freq)
best = optimal_assignment(freq)
print("greedy :", greedy.map, "total", round(mapping_total(freq, greedy), 3))
for t, s, v in greedy.trace:
    print(f"   pick target {t} -> source {s} at {v:.2f}")
print("optimal:", best.map, "total", round(mapping_total(freq, best), 3))
print("identity:", rlm(3, 4).map)
print("hamming(greedy, optimal) =", hamming_distance(greedy, best))

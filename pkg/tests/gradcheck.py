"""Directional finite-difference checks that skip probes straddling a ReLU/max-pool kink.

At a kink the one-sided slopes differ and a central difference averages them,
so it is no oracle there; such probes are redrawn and counted.
"""

import numpy as np

from reprogram.numkernel import directional_derivative, relative_error


def directional_check(draw, loss64, analytic, pattern, pairs=100, eps=1e-3, max_skip_frac=0.2, stats=None):
    """``draw()`` -> (x, d); returns (worst relative error over kink-free probes, skipped count).

    ``stats`` (a dict) additionally receives the worst error over all probes, kinks included.
    """
    worst, worst_all, skipped, done = 0.0, 0.0, 0, 0
    while done < pairs:
        x, d = draw()
        err = relative_error(float(np.sum(analytic(x) * d)), directional_derivative(loss64, x, d, eps))
        worst_all = max(worst_all, err)
        base = pattern(x)
        if pattern(x + eps * d) != base or pattern(x - eps * d) != base:
            skipped += 1
            assert skipped <= max_skip_frac * pairs, "too many kink-straddling probes"
            continue
        worst = max(worst, err)
        done += 1
    if stats is not None:
        stats["worst_including_kinks"] = worst_all
    return worst, skipped

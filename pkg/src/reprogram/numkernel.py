"""Dense-array helpers: cross-entropy, finite differences and seeded randomness.

Tensors are plain ``numpy.ndarray`` values in C (row-major) order, ``float32``
unless a caller explicitly passes ``float64`` (used by gradient-check oracles).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DomainError

FLOAT = np.float32


def as_tensor(x, dtype=FLOAT) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=dtype))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox counter-based generator keyed by ``seed`` and an optional substream path.

    Philox output is specified bit-for-bit by numpy, so equal keys replay the
    same stream on every platform.
    """
    if seed < 0 or seed >= 2**64:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def _check_logits(logits: np.ndarray) -> None:
    if not np.all(np.isfinite(logits)):
        raise DomainError("logits contain non-finite values")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label: int):
    """Return ``(loss, grad_logits)`` for one sample.

    ``loss = -log softmax(logits)[label]`` and ``grad = softmax(logits) - onehot(label)``.
    """
    logits = np.asarray(logits)
    if logits.dtype not in (np.float32, np.float64):
        logits = logits.astype(FLOAT)
    if logits.ndim != 1:
        raise DomainError(f"expected 1-d logits, got shape {logits.shape}")
    k = logits.shape[0]
    if not 0 <= int(label) < k:
        raise DomainError(f"label {label} out of range for {k} classes")
    losses, grads = softmax_cross_entropy_batch(logits[None, :], np.array([label]))
    return losses[0], grads[0]


def softmax_cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Vectorised cross-entropy over rows of ``logits`` (N, K); returns per-row losses and grads."""
    _check_logits(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,) or (n and (labels.min() < 0 or labels.max() >= k)):
        raise DomainError(f"labels must be {n} indices in [0, {k})")
    # float64 internally: saturated rows keep their ~1e-9 losses and gradients
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    losses = np.maximum(lse - z[rows, labels], 0)
    grad = np.exp(z - lse[:, None])
    grad[rows, labels] -= 1
    losses = losses.astype(logits.dtype)
    return losses, grad.astype(logits.dtype)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    x = np.array(x, dtype=np.result_type(np.asarray(x).dtype, FLOAT), copy=True)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError(f"f is non-finite near coordinate {i}", index=i)
        grad[i] = (fp - fm) / (2 * eps)
    return grad.reshape(x.shape)


def directional_derivative(f: Callable[[np.ndarray], float], x, direction, eps: float = 1e-3) -> float:
    """Central difference of ``f`` along ``direction`` (not normalised here)."""
    x = np.asarray(x)
    d = np.asarray(direction, dtype=x.dtype)
    fp, fm = float(f(x + eps * d)), float(f(x - eps * d))
    if not (np.isfinite(fp) and np.isfinite(fm)):
        raise DomainError("f is non-finite along the probe direction")
    return (fp - fm) / (2 * eps)


def relative_error(a, b, floor: float = 1e-12) -> float:
    """``max|a-b| / max(max|a|, max|b|)``: scale-aware error that ignores tiny components."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)

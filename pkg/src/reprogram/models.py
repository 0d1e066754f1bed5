"""Frozen source classifiers with hand-written backward passes.

Two fixed architectures are supported:

* ``mlp``: flatten -> (dense -> relu) * len(hidden) -> dense
* ``convnet``: conv -> relu -> maxpool2 -> conv -> relu -> maxpool2 -> flatten
  -> dense -> relu -> dense

Convolutions use stride 1 and "same" zero padding; max-pool ties route the
gradient to the first maximal element in row-major window order.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import container
from .errors import ConsistencyError, DataError, DomainError, FormatError, ShapeError, SpecError, TrainingError
from .numkernel import FLOAT, make_rng, softmax_cross_entropy_batch

KINDS = ("mlp", "convnet")


@dataclass(frozen=True)
class Architecture:
    kind: str
    input_shape: tuple[int, int, int]
    num_classes: int
    hidden: tuple[int, ...] = (64,)
    conv_channels: tuple[int, int] = (8, 16)
    kernel_sizes: tuple[int, int] = (3, 3)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        object.__setattr__(self, "kernel_sizes", tuple(int(v) for v in self.kernel_sizes))
        if self.kind not in KINDS:
            raise SpecError(f"unknown architecture kind {self.kind!r}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise SpecError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if self.num_classes < 2:
            raise SpecError("num_classes must be at least 2")
        if any(h < 1 for h in self.hidden):
            raise SpecError("hidden sizes must be positive")
        if self.kind == "convnet":
            _, h, w = self.input_shape
            if h % 4 or w % 4:
                raise SpecError("convnet needs height and width divisible by 4")
            if len(self.conv_channels) != 2 or len(self.kernel_sizes) != 2 or len(self.hidden) != 1:
                raise SpecError("convnet has exactly 2 conv layers and 1 hidden dense layer")
            if any(k % 2 == 0 for k in self.kernel_sizes):
                raise SpecError("kernel sizes must be odd for same padding")

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def layers(self) -> list[tuple]:
        if self.kind == "mlp":
            ops = [("flatten",)]
            names = [f"fc{i + 1}" for i in range(len(self.hidden) + 1)]
            for name in names[:-1]:
                ops += [("dense", name), ("relu",)]
            ops.append(("dense", names[-1]))
            return ops
        return [
            ("conv", "conv1"), ("relu",), ("pool",),
            ("conv", "conv2"), ("relu",), ("pool",),
            ("flatten",), ("dense", "fc1"), ("relu",), ("dense", "fc2"),
        ]

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        if self.kind == "mlp":
            widths = [self.input_size, *self.hidden, self.num_classes]
            for i in range(len(widths) - 1):
                shapes[f"fc{i + 1}.w"] = (widths[i + 1], widths[i])
                shapes[f"fc{i + 1}.b"] = (widths[i + 1],)
            return shapes
        c, h, w = self.input_shape
        c1, c2 = self.conv_channels
        k1, k2 = self.kernel_sizes
        shapes["conv1.w"] = (c1, c, k1, k1)
        shapes["conv1.b"] = (c1,)
        shapes["conv2.w"] = (c2, c1, k2, k2)
        shapes["conv2.b"] = (c2,)
        flat = c2 * (h // 4) * (w // 4)
        shapes["fc1.w"] = (self.hidden[0], flat)
        shapes["fc1.b"] = (self.hidden[0],)
        shapes["fc2.w"] = (self.num_classes, self.hidden[0])
        shapes["fc2.b"] = (self.num_classes,)
        return shapes

    @property
    def feature_dim(self) -> int:
        last = list(self.weight_shapes())[-2]
        return self.weight_shapes()[last][1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**d)


# -- layer kernels -----------------------------------------------------------

def _conv_forward(x, w, b):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (n, c, h, w, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * k * k)
    out = cols @ w.reshape(o, -1).T + b
    return out.reshape(n, h, wd, o).transpose(0, 3, 1, 2), cols


def _conv_backward(gout, x_shape, w, cols, want_w):
    n, c, h, wd = x_shape
    o, _, k, _ = w.shape
    p = k // 2
    g = gout.transpose(0, 2, 3, 1).reshape(n * h * wd, o)
    dcols = (g @ w.reshape(o, -1)).reshape(n, h, wd, c, k, k)
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=gout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, p:p + h, p:p + wd]
    if not want_w:
        return dx, None
    dw = (g.T @ cols).reshape(w.shape)
    return dx, (dw, g.sum(axis=0))


def _pool_forward(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)  # first maximal element on ties
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(gout, x_shape, idx):
    n, c, h, w = x_shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=gout.dtype)
    np.put_along_axis(blocks, idx[..., None], gout[..., None], axis=-1)
    return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


def _run(arch: Architecture, weights: dict, x: np.ndarray, stop: int | None = None):
    """Forward through ``arch.layers()[:stop]`` and keep what backward needs."""
    ops = arch.layers()[:stop]
    caches = []
    h = x
    for op in ops:
        kind = op[0]
        if kind == "flatten":
            caches.append(h.shape)
            h = h.reshape(h.shape[0], -1)
        elif kind == "dense":
            w = weights[op[1] + ".w"].astype(h.dtype, copy=False)
            b = weights[op[1] + ".b"].astype(h.dtype, copy=False)
            caches.append(h)
            h = h @ w.T + b
        elif kind == "relu":
            mask = h > 0
            caches.append(mask)
            h = h * mask
        elif kind == "conv":
            w = weights[op[1] + ".w"].astype(h.dtype, copy=False)
            b = weights[op[1] + ".b"].astype(h.dtype, copy=False)
            out, cols = _conv_forward(h, w, b)
            caches.append((h.shape, cols))
            h = out
        elif kind == "pool":
            out, idx = _pool_forward(h)
            caches.append((h.shape, idx))
            h = out
    return h, caches


def _backprop(arch: Architecture, weights: dict, caches: list, grad: np.ndarray, want_w: bool = False):
    """Reverse pass over the layers that produced ``caches``; returns ``(grad_input, weight_grads)``."""
    ops = arch.layers()[:len(caches)]
    wgrads = {}
    g = grad
    for op, cache in zip(reversed(ops), reversed(caches)):
        kind = op[0]
        if kind == "flatten":
            g = g.reshape(cache)
        elif kind == "dense":
            w = weights[op[1] + ".w"].astype(g.dtype, copy=False)
            if want_w:
                wgrads[op[1] + ".w"] = g.T @ cache
                wgrads[op[1] + ".b"] = g.sum(axis=0)
            g = g @ w
        elif kind == "relu":
            g = g * cache
        elif kind == "conv":
            w = weights[op[1] + ".w"].astype(g.dtype, copy=False)
            shape, cols = cache
            g, wg = _conv_backward(g, shape, w, cols, want_w)
            if want_w:
                wgrads[op[1] + ".w"], wgrads[op[1] + ".b"] = wg
        elif kind == "pool":
            shape, idx = cache
            g = _pool_backward(g, shape, idx)
    return g, wgrads


def _float_input(x) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype != np.float64:
        x = x.astype(FLOAT, copy=False)
    return x


class FrozenClassifier:
    """Fixed-weight classifier. Every method accepts one sample ``(C, H, W)`` or a batch ``(N, C, H, W)``."""

    def __init__(self, arch: Architecture, weights: dict, provenance: dict | None = None):
        expected = arch.weight_shapes()
        if set(weights) != set(expected):
            missing = sorted(set(expected) ^ set(weights))
            raise ConsistencyError(f"weight set mismatch: {missing}")
        frozen = {}
        for name, shape in expected.items():
            arr = np.array(weights[name], dtype=FLOAT, order="C")
            if arr.shape != tuple(shape):
                raise ConsistencyError(f"weight {name!r} has shape {arr.shape}, architecture needs {tuple(shape)}")
            arr.setflags(write=False)
            frozen[name] = arr
        self.arch = arch
        self.weights = frozen
        self.provenance = dict(provenance or {})
        self.frozen = True

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.arch.input_shape

    def _batch(self, x):
        x = _float_input(x)
        if x.shape == self.arch.input_shape:
            return x[None], True
        if x.ndim == 4 and x.shape[1:] == self.arch.input_shape:
            return x, False
        raise ShapeError("model input", self.arch.input_shape, x.shape)

    def forward(self, x) -> np.ndarray:
        xb, single = self._batch(x)
        out, _ = _run(self.arch, self.weights, xb)
        return out[0] if single else out

    def penultimate_features(self, x) -> np.ndarray:
        xb, single = self._batch(x)
        out, _ = _run(self.arch, self.weights, xb, stop=-1)
        return out[0] if single else out

    def forward_with_features(self, x):
        """Logits and penultimate activations from one pass."""
        xb, single = self._batch(x)
        feats, _ = _run(self.arch, self.weights, xb, stop=-1)
        name = self.arch.layers()[-1][1]
        w = self.weights[name + ".w"].astype(feats.dtype, copy=False)
        b = self.weights[name + ".b"].astype(feats.dtype, copy=False)
        logits = feats @ w.T + b
        if single:
            return logits[0], feats[0]
        return logits, feats

    def input_gradient(self, x, grad_logits) -> np.ndarray:
        """Gradient of ``sum(grad_logits * forward(x))`` with respect to ``x``."""
        xb, single = self._batch(x)
        g = np.asarray(grad_logits, dtype=xb.dtype)
        g = g[None] if single else g
        if g.shape != (xb.shape[0], self.num_classes):
            raise ShapeError("grad_logits", (xb.shape[0], self.num_classes), g.shape)
        _, caches = _run(self.arch, self.weights, xb)
        gx, _ = _backprop(self.arch, self.weights, caches, g)
        return gx[0] if single else gx

    def feature_input_gradient(self, x, grad_features) -> np.ndarray:
        """Gradient of ``sum(grad_features * penultimate_features(x))`` with respect to ``x``."""
        xb, single = self._batch(x)
        g = np.asarray(grad_features, dtype=xb.dtype)
        g = g[None] if single else g
        _, caches = _run(self.arch, self.weights, xb, stop=-1)
        gx, _ = _backprop(self.arch, self.weights, caches, g)
        return gx[0] if single else gx

    def loss_and_input_gradient(self, x, labels):
        """Per-sample cross-entropy and its input gradient, sharing one forward pass."""
        xb, _ = self._batch(x)
        logits, caches = _run(self.arch, self.weights, xb)
        losses, g = softmax_cross_entropy_batch(logits, labels)
        gx, _ = _backprop(self.arch, self.weights, caches, g)
        return losses, gx, logits

    def activation_pattern(self, x) -> bytes:
        """ReLU on/off masks and max-pool winners at ``x``; the network is affine wherever this is constant."""
        xb, _ = self._batch(x)
        _, caches = _run(self.arch, self.weights, xb)
        parts = []
        for op, cache in zip(self.arch.layers(), caches):
            if op[0] == "relu":
                parts.append(np.packbits(cache).tobytes())
            elif op[0] == "pool":
                parts.append(np.asarray(cache[1]).tobytes())
        return b"|".join(parts)

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        xb, _ = self._batch(x)
        out = [self.forward(xb[i:i + batch_size]).argmax(axis=1) for i in range(0, len(xb), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.weights):
            h.update(name.encode())
            h.update(self.weights[name].tobytes())
        return h.hexdigest()


def forward(model: FrozenClassifier, x) -> np.ndarray:
    return model.forward(x)


def input_gradient(model: FrozenClassifier, x, grad_logits) -> np.ndarray:
    return model.input_gradient(x, grad_logits)


def penultimate_features(model: FrozenClassifier, x) -> np.ndarray:
    return model.penultimate_features(x)


# -- pretraining -------------------------------------------------------------

@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 12
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    lr_decay_at: tuple[float, ...] = (0.5, 0.75)
    seed: int = 0


def init_weights(arch: Architecture, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-normal weights, zero biases."""
    weights = {}
    for name, shape in arch.weight_shapes().items():
        if name.endswith(".b"):
            weights[name] = np.zeros(shape, dtype=FLOAT)
        else:
            fan_in = int(np.prod(shape[1:]))
            weights[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(FLOAT)
    return weights


def _accuracy(arch, weights, images, labels, batch_size=256) -> float:
    correct = 0
    for i in range(0, len(images), batch_size):
        out, _ = _run(arch, weights, images[i:i + batch_size])
        correct += int((out.argmax(axis=1) == labels[i:i + batch_size]).sum())
    return correct / max(len(images), 1)


def pretrain_source(train_set, arch: Architecture, cfg: PretrainConfig = PretrainConfig(),
                    test_set=None, log=None) -> FrozenClassifier:
    """Fit ``arch`` on ``train_set`` by mini-batch SGD with momentum and return it frozen."""
    images = train_set.images.astype(FLOAT, copy=False)
    labels = np.asarray(train_set.labels, dtype=np.int64)
    if images.shape[1:] != arch.input_shape:
        raise ShapeError("training images", arch.input_shape, images.shape[1:])
    counts = np.bincount(labels, minlength=arch.num_classes)
    if len(counts) != arch.num_classes:
        raise DataError(f"labels exceed the architecture's {arch.num_classes} classes")
    if (counts == 0).any():
        raise DataError(f"class {int(np.argmin(counts))} has no training samples")

    rng = make_rng(cfg.seed, 1)
    weights = init_weights(arch, make_rng(cfg.seed, 0))
    velocity = {k: np.zeros_like(v) for k, v in weights.items()}
    milestones = [int(round(f * cfg.epochs)) for f in cfg.lr_decay_at]
    n = len(images)
    for epoch in range(cfg.epochs):
        lr = cfg.lr * 0.1 ** sum(epoch >= m for m in milestones)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, caches = _run(arch, weights, images[idx])
            try:
                losses, g = softmax_cross_entropy_batch(logits, labels[idx])
            except DomainError as exc:
                raise TrainingError(f"epoch {epoch + 1}: {exc}", epoch=epoch + 1) from exc
            mean_loss = float(losses.mean())
            if not np.isfinite(mean_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}", epoch=epoch + 1)
            total += mean_loss * len(idx)
            _, grads = _backprop(arch, weights, caches, g / len(idx), want_w=True)
            for k in weights:
                velocity[k] = cfg.momentum * velocity[k] + grads[k].astype(FLOAT)
                weights[k] = weights[k] - FLOAT(lr) * velocity[k]
        if log is not None:
            log(f"pretrain epoch {epoch + 1}/{cfg.epochs} loss {total / n:.4f}")

    provenance = {
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "config": asdict(cfg),
        "dataset_digest": train_set.digest(),
        "train_acc": _accuracy(arch, weights, images, labels),
    }
    if test_set is not None:
        provenance["test_acc"] = _accuracy(arch, weights, test_set.images.astype(FLOAT), test_set.labels)
    return FrozenClassifier(arch, weights, provenance)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: FrozenClassifier, path) -> None:
    meta = {"architecture": model.arch.to_dict(), "provenance": model.provenance}
    container.write(path, "model", meta, model.weights)


def load_checkpoint(path) -> FrozenClassifier:
    meta, arrays = container.read(path, kind="model")
    try:
        arch = Architecture.from_dict(meta["architecture"])
    except (KeyError, TypeError, SpecError) as exc:
        raise FormatError(f"{path}: bad architecture descriptor ({exc})") from exc
    return FrozenClassifier(arch, arrays, meta.get("provenance"))

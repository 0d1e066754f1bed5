"""Pad-style input prompting: embed a target image in a source-sized canvas and add a
trainable pattern on the surrounding border."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import container
from .errors import ShapeError, SpecError
from .numkernel import FLOAT
from .pnm import minmax, write_pnm


@dataclass(frozen=True)
class PromptSpec:
    source_shape: tuple[int, int, int]
    target_shape: tuple[int, int, int]
    placement: tuple[int, int] | None = None

    def __post_init__(self):
        src = tuple(int(v) for v in self.source_shape)
        tgt = tuple(int(v) for v in self.target_shape)
        object.__setattr__(self, "source_shape", src)
        object.__setattr__(self, "target_shape", tgt)
        if len(src) != 3 or len(tgt) != 3 or min(src + tgt) < 1:
            raise SpecError(f"shapes must be positive (C, H, W) triples, got {src} and {tgt}")
        if src[0] != tgt[0]:
            raise SpecError(f"channel count differs: source {src[0]}, target {tgt[0]}")
        if tgt[1] > src[1] or tgt[2] > src[2]:
            raise SpecError(f"target {tgt} does not fit inside source {src}")
        if self.placement is None:
            object.__setattr__(self, "placement", ((src[1] - tgt[1]) // 2, (src[2] - tgt[2]) // 2))
        r, c = (int(v) for v in self.placement)
        object.__setattr__(self, "placement", (r, c))
        if r < 0 or c < 0 or r + tgt[1] > src[1] or c + tgt[2] > src[2]:
            raise SpecError(f"placement {self.placement} puts the target outside the canvas")

    @property
    def window(self) -> tuple[slice, slice]:
        r, c = self.placement
        return slice(r, r + self.target_shape[1]), slice(c, c + self.target_shape[2])

    @cached_property
    def mask(self) -> np.ndarray:
        m = np.ones(self.source_shape, dtype=FLOAT)
        rows, cols = self.window
        m[:, rows, cols] = 0
        m.setflags(write=False)
        return m

    def to_dict(self) -> dict:
        return {"source_shape": list(self.source_shape), "target_shape": list(self.target_shape),
                "placement": list(self.placement)}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptSpec":
        return cls(tuple(d["source_shape"]), tuple(d["target_shape"]), tuple(d["placement"]))


@dataclass(frozen=True, eq=False)
class Prompt:
    spec: PromptSpec
    delta: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.array(self.delta, dtype=FLOAT)
        if d.shape != self.spec.source_shape:
            raise ShapeError("prompt delta", self.spec.source_shape, d.shape)
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)

    @property
    def mask(self) -> np.ndarray:
        return self.spec.mask

    @property
    def pattern(self) -> np.ndarray:
        """The part of ``delta`` that actually reaches prompted images."""
        return self.mask * self.delta


def zero_prompt(spec: PromptSpec) -> Prompt:
    return Prompt(spec, np.zeros(spec.source_shape, dtype=FLOAT))


def _split_batch(x, shape, what):
    x = np.asarray(x)
    if x.shape == shape:
        return x[None], True
    if x.ndim == 4 and x.shape[1:] == shape:
        return x, False
    raise ShapeError(what, shape, x.shape)


def zero_pad(x_t, spec: PromptSpec) -> np.ndarray:
    """Embed ``x_t`` (single or batch) at the placement offset on a zero canvas."""
    xb, single = _split_batch(x_t, spec.target_shape, "target image")
    out = np.zeros((len(xb),) + spec.source_shape, dtype=FLOAT)
    rows, cols = spec.window
    out[:, :, rows, cols] = xb
    return out[0] if single else out


def apply_prompt(x_t, p: Prompt) -> np.ndarray:
    """Prompted input ``place(x_t) + mask * delta``; no clipping to the pixel range."""
    spec = p.spec
    xb, single = _split_batch(x_t, spec.target_shape, "target image")
    out = np.empty((len(xb),) + spec.source_shape, dtype=FLOAT)
    out[:] = p.pattern
    rows, cols = spec.window
    # assignment (not addition) keeps the target window bit-identical to x_t
    out[:, :, rows, cols] = xb
    return out[0] if single else out


def prompt_gradient(grad_x, p: Prompt) -> np.ndarray:
    """Adjoint of :func:`apply_prompt` with respect to ``delta``: ``mask * grad_x``."""
    g = np.asarray(grad_x)
    if g.shape[-3:] != p.spec.source_shape or g.ndim not in (3, 4):
        raise ShapeError("prompted-input gradient", p.spec.source_shape, g.shape)
    return (p.mask * g).astype(g.dtype, copy=False)


def save_prompt(p: Prompt, path, meta: dict | None = None) -> None:
    container.write(path, "prompt", {"spec": p.spec.to_dict(), **(meta or {})}, {"delta": p.delta})


def load_prompt(path) -> Prompt:
    meta, arrays = container.read(path, kind="prompt")
    return Prompt(PromptSpec.from_dict(meta["spec"]), arrays["delta"])


def dump_prompt_image(p: Prompt, path) -> None:
    """Min-max normalised ``mask * delta`` as PPM (3 channels) or PGM."""
    pattern = p.pattern
    img = minmax(pattern)
    write_pnm(path, img if pattern.shape[0] in (1, 3) else img.mean(axis=0))

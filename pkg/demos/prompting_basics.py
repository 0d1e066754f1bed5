"""
Padding a small image into a bigger canvas
==========================================

A prompt is a full-canvas pattern whose centre is masked out; the target image
sits in the hole untouched.
"""

import numpy as np

from reprogram import PromptSpec, Prompt, apply_prompt, prompt_gradient, zero_prompt

spec = PromptSpec(source_shape=(3, 32, 32), target_shape=(3, 16, 16))
print("placement", spec.placement, "border pixels per channel", int(spec.mask[0].sum()))

x = np.random.default_rng(0).uniform(size=(3, 16, 16)).astype(np.float32)

# with delta = 0 the prompted input is plain zero padding
padded = apply_prompt(x, zero_prompt(spec))
print("zero prompt, nonzero border pixels:", int((padded * spec.mask != 0).sum()))

# a random pattern only ever touches the border
p = Prompt(spec, np.random.default_rng(1).normal(size=spec.source_shape))
prompted = apply_prompt(x, p)
rows, cols = spec.window
print("window untouched:", prompted[:, rows, cols].tobytes() == x.tobytes())

# gradients flow back to delta through the same mask
g = prompt_gradient(np.ones(spec.source_shape, np.float32), p)
print("gradient equals the mask:", np.array_equal(g, spec.mask))

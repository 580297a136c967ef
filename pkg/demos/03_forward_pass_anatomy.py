#!/usr/bin/env python3
"""Anatomy of one forward pass, and a gradient sanity check.

Decodes a feature grid into patch embeddings, scores each patch as
foreground, pools the embeddings into one image vector, and classifies it
against the anchors.  Then verifies a couple of analytic parameter
gradients against finite differences.
"""

import numpy as np

from anchorloc import (
    RawEmbeddingMatrix,
    aggregate,
    forward,
    image_cls_loss,
    init_parameters,
    orthogonalize,
)
from anchorloc.model import backward, run_forward

rng = np.random.default_rng(7)

D_ENC, D, K = 12, 8, 4
anchors = orthogonalize(
    RawEmbeddingMatrix(rng.standard_normal((K, D)), [f"class_{k}" for k in range(K)])
)
params = init_parameters(D_ENC, D, upscale=2, seed=1)
params.cls_w = rng.normal(0, 0.4, size=D)

features = rng.standard_normal((3, 3, D_ENC))
fg_map, embedding, probs = forward(features, params, anchors)

print(f"features (3, 3, {D_ENC}) -> patch embeddings (6, 6, {D})")
print(f"foreground map range: [{fg_map.min():.3f}, {fg_map.max():.3f}]")
print(f"aggregation weights sum: {embedding.weights.sum():.9f}")
print(f"class probabilities: {np.round(probs, 4)} (sum {probs.sum():.9f})")
print("note: no class label went in; the class comes out of the anchors\n")

# the aggregation is just a weighted mean; check it against its pieces
cache = run_forward(features, params)
manual = aggregate(cache.z_grid, cache.g_grid)
print("h from forward equals weighted mean of patches:",
      np.allclose(manual.h, embedding.h, atol=1e-12))

# finite-difference check on the classification loss
value, d_h = image_cls_loss(cache.h, 2, anchors)
grads = backward(cache, params, d_h=d_h)
step = 1e-5
print(f"\nimage classification loss = {value:.6f}")
print(f"{'parameter':>10} {'analytic':>12} {'finite diff':>12}")
for name, index in (("w1", (0, 3)), ("w2", (2, 5)), ("cls_w", (1,)), ("b2", (4,))):
    array = getattr(params, name)
    original = array[index]
    array[index] = original + step
    up = image_cls_loss(run_forward(features, params).h, 2, anchors)[0]
    array[index] = original - step
    down = image_cls_loss(run_forward(features, params).h, 2, anchors)[0]
    array[index] = original
    fd = (up - down) / (2 * step)
    analytic = np.asarray(getattr(grads, name))[index]
    print(f"{name:>10} {analytic:12.8f} {fd:12.8f}")

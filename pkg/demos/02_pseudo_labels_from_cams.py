#!/usr/bin/env python3
"""From a teacher heatmap to balanced patch pseudo-labels.

Takes a blurry activation map with a hot rectangle, pools it to the patch
grid, finds the Otsu threshold, and draws a few balanced FG/BG samples —
the supervision one training step sees.  Rerun with a different seed and
the drawn locations change; the candidate pools do not.
"""

import numpy as np

from anchorloc import SamplerConfig, otsu_threshold, sample_fg_bg, to_patch_grid

rng = np.random.default_rng(42)

# a 48x48 teacher map: hot 16x20 rectangle plus background glow
cam = 0.15 * rng.random((48, 48))
cam[12:28, 8:28] += 0.8

pooled = to_patch_grid(cam, 12, 12)
threshold = otsu_threshold(pooled)
print(f"pooled 48x48 map to 12x12 patches; Otsu threshold = {threshold:.3f}")
print(f"cells at/above threshold: {(pooled >= threshold).sum()} "
      f"(true block covers {4 * 5} cells)")

cfg = SamplerConfig(n_fg=20, n_bg=40, samples_per_side=6)
for seed in (0, 1):
    sampled = sample_fg_bg(pooled, cfg, np.random.default_rng(seed))
    print(f"\nseed {seed}: drew {len(sampled.fg_locations)} FG + "
          f"{len(sampled.bg_locations)} BG patches")
    print("  FG:", sampled.fg_locations)
    print("  BG:", sampled.bg_locations)

picture = np.full((12, 12), ".", dtype=object)
picture[pooled >= threshold] = "#"
for r, c in sampled.fg_locations:
    picture[r, c] = "F"
for r, c in sampled.bg_locations:
    picture[r, c] = "b"
print("\nlast draw over the thresholded grid (#: above threshold):")
print("\n".join(" ".join(row) for row in picture))

"""Training objectives and their analytic gradients.

Three terms, combined by nonnegative weights:

* distillation: anchor-softmax cross-entropy of each sampled FG patch
  embedding against the image class,
* patch classification: binary cross-entropy of the FG probability map
  against the sampled pseudo-labels,
* image classification: anchor-softmax cross-entropy of the global
  embedding against the image class.

Each function returns the scalar value together with the gradient w.r.t.
its direct array input (patch grid, probability map, or global embedding);
``model.backward`` turns those into parameter gradients.  Patch-level terms
sum over the sampled locations by default (``mean=True`` divides by the
count).  All values are nonnegative; probabilities inside the binary
cross-entropy are clamped to [1e-7, 1 - 1e-7] so saturated predictions
stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import AnchorSet, softmax
from .errors import ZeroVector
from .pseudo import SampledPatchSet

BCE_CLAMP = 1e-7
_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Term weights; zero disables a term (used by the ablations)."""

    lambda_kd: float = 1.0
    lambda_pcl: float = 1.0
    lambda_icl: float = 1.0

    def __post_init__(self):
        values = (self.lambda_kd, self.lambda_pcl, self.lambda_icl)
        if any(v < 0 for v in values):
            raise ValueError(f"loss weights must be nonnegative, got {values}")
        if all(v == 0 for v in values):
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    l_kd: float
    p_cl: float
    i_cl: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "l_kd": self.l_kd,
            "p_cl": self.p_cl,
            "i_cl": self.i_cl,
            "total": self.total,
        }


@dataclass
class LossGrads:
    """Gradients w.r.t. the three loss inputs (any may be None)."""

    d_grid: np.ndarray | None = None  # w.r.t. patch embeddings (P'_h, P'_w, d)
    d_map: np.ndarray | None = None  # w.r.t. FG probabilities (P'_h, P'_w)
    d_h: np.ndarray | None = None  # w.r.t. the global embedding (d,)


def anchor_cross_entropy(
    v: np.ndarray,
    label: int,
    anchors: AnchorSet,
    temperature: float = 1.0,
    normalize: bool = True,
) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy of anchor scores; returns (value, d/dv)."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if not 0 <= label < anchors.num_classes:
        raise IndexError(f"label {label} out of range [0, {anchors.num_classes})")
    v = np.asarray(v, dtype=np.float64)
    t = anchors.anchors
    if normalize:
        n = np.linalg.norm(v)
        if n < _ZERO_NORM:
            raise ZeroVector(f"norm {n:.3e} too small to normalize")
        v_hat = v / n
    else:
        v_hat = v
    scores = t @ v_hat
    probs = softmax(scores / temperature)
    value = -float(np.log(probs[label]))
    d_scores = probs.copy()
    d_scores[label] -= 1.0
    d_vhat = (t.T @ d_scores) / temperature
    if normalize:
        dv = (d_vhat - (v_hat @ d_vhat) * v_hat) / n
    else:
        dv = d_vhat
    return value, dv


def kd_loss(
    grid: np.ndarray,
    fg_locations,
    label: int,
    anchors: AnchorSet,
    temperature: float = 1.0,
    normalize: bool = True,
    mean: bool = False,
) -> tuple[float, np.ndarray]:
    """Distillation term over the sampled FG patches.

    An empty FG set contributes 0 with zero gradients rather than erroring,
    so degenerate samples never crash a training step.  Patches outside the
    FG set contribute nothing to the value or the gradient.
    """
    grid = np.asarray(grid, dtype=np.float64)
    d_grid = np.zeros_like(grid)
    fg_locations = list(fg_locations)
    if not fg_locations:
        return 0.0, d_grid
    total = 0.0
    for r, c in fg_locations:
        value, dv = anchor_cross_entropy(
            grid[r, c], label, anchors, temperature=temperature, normalize=normalize
        )
        total += value
        d_grid[r, c] += dv
    if mean:
        total /= len(fg_locations)
        d_grid /= len(fg_locations)
    return total, d_grid


def patch_cls_loss(
    fg_map: np.ndarray, sampled: SampledPatchSet, mean: bool = False
) -> tuple[float, np.ndarray]:
    """Binary cross-entropy of the FG map against sampled pseudo-labels."""
    fg_map = np.asarray(fg_map, dtype=np.float64)
    d_map = np.zeros_like(fg_map)
    total = 0.0
    lo, hi = BCE_CLAMP, 1.0 - BCE_CLAMP
    for (r, c), y in zip(sampled.locations, sampled.labels):
        g = fg_map[r, c]
        gc = min(max(g, lo), hi)
        total += -(y * np.log(gc) + (1 - y) * np.log(1.0 - gc))
        # Derivative at the clamped probability: equals the exact gradient
        # inside the clamp band, and keeps a bounded restoring gradient for
        # saturated predictions (composed with a logistic head it reduces
        # to the usual g - y logit gradient).
        d_map[r, c] += (gc - y) / (gc * (1.0 - gc))
    count = len(sampled.locations)
    if mean and count:
        total /= count
        d_map /= count
    return float(total), d_map


def image_cls_loss(
    h: np.ndarray,
    label: int,
    anchors: AnchorSet,
    temperature: float = 1.0,
    normalize: bool = True,
) -> tuple[float, np.ndarray]:
    """Classification term on the global embedding; returns (value, d/dh)."""
    return anchor_cross_entropy(
        h, label, anchors, temperature=temperature, normalize=normalize
    )


def total_loss(
    kd: tuple[float, np.ndarray],
    pcl: tuple[float, np.ndarray],
    icl: tuple[float, np.ndarray],
    weights: LossWeights,
) -> tuple[LossBreakdown, LossGrads]:
    """Weighted sum of the three terms; gradients scale the same way."""
    l_kd, d_grid = kd
    p_cl, d_map = pcl
    i_cl, d_h = icl
    total = (
        weights.lambda_kd * l_kd
        + weights.lambda_pcl * p_cl
        + weights.lambda_icl * i_cl
    )
    breakdown = LossBreakdown(l_kd=float(l_kd), p_cl=float(p_cl), i_cl=float(i_cl), total=float(total))
    grads = LossGrads(
        d_grid=weights.lambda_kd * d_grid,
        d_map=weights.lambda_pcl * d_map,
        d_h=weights.lambda_icl * d_h,
    )
    return breakdown, grads

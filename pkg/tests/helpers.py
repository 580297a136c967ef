"""Shared test utilities: independent oracles and the finite-difference rig.

Every oracle here is deliberately written from scratch (different
algorithm, different code path) so the tests are dual-route checks rather
than reimplementation echoes.
"""

from __future__ import annotations

import numpy as np

from anchorloc.losses import (
    image_cls_loss,
    kd_loss,
    patch_cls_loss,
    total_loss,
)
from anchorloc.model import ModelParameters, backward, init_parameters, run_forward
from anchorloc.pseudo import SampledPatchSet

# ---------------------------------------------------------------------------
# modified Gram-Schmidt oracle (vector-by-vector projection subtraction)


def gram_schmidt_rows(rows: np.ndarray) -> np.ndarray:
    rows = np.array(rows, dtype=np.float64)
    out = []
    for v in rows:
        w = v.copy()
        for q in out:
            w = w - (q @ w) * q
        out.append(w / np.linalg.norm(w))
    return np.array(out)


# ---------------------------------------------------------------------------
# brute-force Otsu oracle: partition the raw values at every bin edge


def otsu_bruteforce(values: np.ndarray, bins: int = 256) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    edges = np.histogram_bin_edges(values, bins=bins, range=(values.min(), values.max()))
    best_var, best_edge = -1.0, None
    for edge in edges[1:-1]:
        below = values[values < edge]
        above = values[values >= edge]
        if below.size == 0 or above.size == 0:
            var = 0.0
        else:
            w0 = below.size / values.size
            w1 = above.size / values.size
            var = w0 * w1 * (below.mean() - above.mean()) ** 2
        if var > best_var:
            best_var, best_edge = var, edge
    return float(best_edge)


# ---------------------------------------------------------------------------
# flood-fill connected-components oracle (4-connectivity, pure python)


def largest_component_box_bruteforce(mask: np.ndarray):
    """(x_min, y_min, x_max, y_max) of the largest 4-connected True region.

    Ties by the earliest first pixel in row-major order.  None if empty.
    """
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    best = None  # (size, first_index, box)
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            stack = [(r, c)]
            seen[r, c] = True
            pixels = []
            while stack:
                pr, pc = stack.pop()
                pixels.append((pr, pc))
                for nr, nc in ((pr - 1, pc), (pr + 1, pc), (pr, pc - 1), (pr, pc + 1)):
                    if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and not seen[nr, nc]:
                        seen[nr, nc] = True
                        stack.append((nr, nc))
            rows = [p[0] for p in pixels]
            cols = [p[1] for p in pixels]
            first = min(p[0] * w + p[1] for p in pixels)
            candidate = (len(pixels), -first, (min(cols), min(rows), max(cols) + 1, max(rows) + 1))
            if best is None or candidate[:2] > best[:2]:
                best = candidate
    return None if best is None else best[2]


# ---------------------------------------------------------------------------
# finite-difference rig for the loss gradients


def random_instance(seed: int, encoder_dim=6, embed_dim=8, num_classes=4):
    """A small random model/anchors/sample tuple (16 decoder patches)."""
    from anchorloc.anchors import RawEmbeddingMatrix, orthogonalize

    rng = np.random.default_rng(seed)
    params = init_parameters(encoder_dim, embed_dim, upscale=2, seed=seed)
    params.w2 = rng.normal(0, 0.3, size=(embed_dim, embed_dim))
    params.b2 = rng.normal(0, 0.1, size=embed_dim)
    params.cls_w = rng.normal(0, 0.5, size=embed_dim)
    params.cls_b = np.asarray(rng.normal(0, 0.2))
    params.b1 = rng.normal(0, 0.1, size=embed_dim)
    features = rng.normal(size=(2, 2, encoder_dim))
    anchors = orthogonalize(
        RawEmbeddingMatrix(
            rng.normal(size=(num_classes, embed_dim)),
            [f"c{i}" for i in range(num_classes)],
        )
    )
    sampled = SampledPatchSet(
        [(0, 0), (1, 2), (3, 3), (2, 1)], np.array([1, 1, 0, 0]), (4, 4)
    )
    label = int(rng.integers(num_classes))
    return params, features, anchors, sampled, label


def term_value_and_grads(params, features, anchors, sampled, label, term, weights):
    """(value, ParameterGradients) for one loss term or the weighted total."""
    cache = run_forward(features, params)
    kd = kd_loss(cache.z_grid, sampled.fg_locations, label, anchors)
    pcl = patch_cls_loss(cache.g_grid, sampled)
    icl = image_cls_loss(cache.h, label, anchors)
    if term == "kd":
        return kd[0], backward(cache, params, d_z=kd[1])
    if term == "pcl":
        return pcl[0], backward(cache, params, d_g=pcl[1])
    if term == "icl":
        return icl[0], backward(cache, params, d_h=icl[1])
    breakdown, lg = total_loss(kd, pcl, icl, weights)
    return breakdown.total, backward(cache, params, lg.d_grid, lg.d_map, lg.d_h)


def max_fd_relative_error(
    params, features, anchors, sampled, label, term, weights, step=1e-5
) -> float:
    """Worst relative error between analytic and central-FD gradients,
    over every parameter coordinate."""
    value_of = lambda: term_value_and_grads(
        params, features, anchors, sampled, label, term, weights
    )[0]
    _, grads = term_value_and_grads(
        params, features, anchors, sampled, label, term, weights
    )
    worst = 0.0
    for name in ModelParameters.FIELDS:
        base = np.atleast_1d(getattr(params, name)).ravel()
        analytic = np.atleast_1d(np.asarray(getattr(grads, name), dtype=float)).ravel()
        for i in range(base.size):
            orig = base[i]
            base[i] = orig + step
            up = value_of()
            base[i] = orig - step
            down = value_of()
            base[i] = orig
            fd = (up - down) / (2 * step)
            rel = abs(fd - analytic[i]) / max(abs(fd), abs(analytic[i]), 1e-6)
            worst = max(worst, rel)
    return worst

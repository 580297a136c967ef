"""Patch pseudo-labels from teacher activation maps.

A teacher CAM (pixel-level heatmap) is average-pooled to the patch grid,
split into foreground/background by Otsu's threshold, and a balanced set
of FG/BG patch locations is drawn:

* FG candidates: the ``n_fg`` highest-activation cells.
* BG candidates: the ``n_bg`` lowest-activation cells, minus FG candidates
  and minus any cell at or above the Otsu threshold.
* The sampler draws ``samples_per_side`` locations uniformly without
  replacement from each pool, so the output is balanced by construction.

Every tie (equal activations) is broken by row-major cell index, and the
RNG is passed in explicitly, so results are reproducible.  Samples are
redrawn at every training step; two calls with the same generator state
coincide, consecutive calls on a stepping generator generally differ.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMap, DimensionMismatch, InsufficientBackground


@dataclass(frozen=True)
class SamplerConfig:
    """Candidate pool sizes and per-step draw count.

    ``n_fg``/``n_bg`` may be given as absolute counts (int >= 1) or as a
    fraction of the grid (0 < float < 1), resolved per grid.
    """

    n_fg: float = 0.2
    n_bg: float = 0.2
    samples_per_side: int = 10
    histogram_bins: int = 256

    def __post_init__(self):
        for name in ("n_fg", "n_bg"):
            v = getattr(self, name)
            if v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.samples_per_side < 1:
            raise ValueError("samples_per_side must be >= 1")
        if self.histogram_bins < 2:
            raise ValueError("histogram_bins must be >= 2")

    def resolve_counts(self, num_cells: int) -> tuple[int, int]:
        def resolve(v):
            if isinstance(v, float) and 0 < v < 1:
                return max(1, int(round(v * num_cells)))
            return int(v)

        n_fg, n_bg = resolve(self.n_fg), resolve(self.n_bg)
        if n_fg + n_bg > num_cells:
            raise ValueError(
                f"n_fg + n_bg = {n_fg + n_bg} exceeds {num_cells} cells"
            )
        if self.samples_per_side > min(n_fg, n_bg):
            raise ValueError(
                f"samples_per_side {self.samples_per_side} exceeds "
                f"min(n_fg, n_bg) = {min(n_fg, n_bg)}"
            )
        return n_fg, n_bg


@dataclass(frozen=True)
class SampledPatchSet:
    """Balanced pseudo-labeled patch locations for one training step."""

    locations: tuple[tuple[int, int], ...]
    labels: np.ndarray  # 1 = FG, 0 = BG, aligned with locations
    grid_shape: tuple[int, int]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "locations", tuple(map(tuple, self.locations)))
        if len(self.locations) != labels.size:
            raise ValueError("locations/labels length mismatch")
        if len(set(self.locations)) != len(self.locations):
            raise ValueError("duplicate sampled locations")
        n_fg = int(np.sum(labels == 1))
        if n_fg * 2 != labels.size:
            raise ValueError("sampled set is not balanced")
        h, w = self.grid_shape
        for r, c in self.locations:
            if not (0 <= r < h and 0 <= c < w):
                raise ValueError(f"location {(r, c)} outside grid {self.grid_shape}")

    @property
    def fg_locations(self) -> tuple[tuple[int, int], ...]:
        return tuple(
            loc for loc, lab in zip(self.locations, self.labels) if lab == 1
        )

    @property
    def bg_locations(self) -> tuple[tuple[int, int], ...]:
        return tuple(
            loc for loc, lab in zip(self.locations, self.labels) if lab == 0
        )


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Bin-edge threshold maximizing between-class variance.

    The histogram spans [min, max] with ``bins`` equal bins; candidate
    thresholds are the interior bin edges.  A value v is background when
    v < t and foreground when v >= t, which matches numpy's half-open
    binning, so class statistics computed from per-bin sums are exact.
    Ties are broken toward the lower threshold.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 2:
        raise DegenerateMap("need at least two values")
    vmin, vmax = float(np.min(values)), float(np.max(values))
    if vmin == vmax:
        raise DegenerateMap("all map values are equal")
    counts, edges = np.histogram(values, bins=bins, range=(vmin, vmax))
    sums, _ = np.histogram(values, bins=bins, range=(vmin, vmax), weights=values)
    total_n = values.size
    total_s = float(np.sum(sums))

    cum_n = np.cumsum(counts)[:-1]  # counts strictly below edges[1..bins-1]
    cum_s = np.cumsum(sums)[:-1]
    n0 = cum_n.astype(np.float64)
    n1 = total_n - n0
    variance = np.zeros(bins - 1)
    valid = (n0 > 0) & (n1 > 0)
    mu0 = np.divide(cum_s, n0, out=np.zeros_like(cum_s), where=valid)
    mu1 = np.divide(total_s - cum_s, n1, out=np.zeros_like(cum_s), where=valid)
    w0 = n0 / total_n
    w1 = n1 / total_n
    variance[valid] = (w0 * w1 * (mu0 - mu1) ** 2)[valid]
    best = int(np.argmax(variance))  # first maximum -> lowest threshold
    return float(edges[best + 1])


def to_patch_grid(values: np.ndarray, patch_rows: int, patch_cols: int) -> np.ndarray:
    """Average-pool a pixel map into a patch_rows x patch_cols grid.

    Rows/columns are split into contiguous, nearly equal chunks (exact
    pooling when the sizes divide evenly).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionMismatch(f"expected 2-D map, got shape {values.shape}")
    h, w = values.shape
    if patch_rows < 1 or patch_cols < 1 or patch_rows > h or patch_cols > w:
        raise DimensionMismatch(
            f"patch grid {patch_rows}x{patch_cols} incompatible with map {h}x{w}"
        )
    row_edges = (np.arange(patch_rows + 1) * h) // patch_rows
    col_edges = (np.arange(patch_cols + 1) * w) // patch_cols
    row_sums = np.add.reduceat(values, row_edges[:-1], axis=0)
    cell_sums = np.add.reduceat(row_sums, col_edges[:-1], axis=1)
    counts = np.diff(row_edges)[:, None] * np.diff(col_edges)[None, :]
    return cell_sums / counts


def sample_fg_bg(
    grid: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator
) -> SampledPatchSet:
    """Draw a balanced set of FG/BG patch locations from an activation grid."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise DimensionMismatch(f"expected 2-D grid, got shape {grid.shape}")
    flat = grid.ravel()
    n_fg, n_bg = cfg.resolve_counts(flat.size)
    threshold = otsu_threshold(grid, bins=cfg.histogram_bins)

    # Stable sorts keep row-major order among equal activations.
    desc = np.argsort(-flat, kind="stable")
    fg_pool = desc[:n_fg]
    fg_set = set(fg_pool.tolist())

    asc = np.argsort(flat, kind="stable")
    bottom = asc[:n_bg]
    bg_pool = np.array(
        [i for i in bottom.tolist() if i not in fg_set and flat[i] < threshold],
        dtype=np.int64,
    )
    if bg_pool.size < cfg.samples_per_side:
        raise InsufficientBackground(
            f"background pool has {bg_pool.size} cells after exclusions, "
            f"need {cfg.samples_per_side}"
        )

    fg_draw = fg_pool[rng.choice(fg_pool.size, cfg.samples_per_side, replace=False)]
    bg_draw = bg_pool[rng.choice(bg_pool.size, cfg.samples_per_side, replace=False)]
    rows, cols = np.unravel_index(np.concatenate([fg_draw, bg_draw]), grid.shape)
    locations = tuple(zip(rows.tolist(), cols.tolist()))
    labels = np.concatenate(
        [np.ones(cfg.samples_per_side, int), np.zeros(cfg.samples_per_side, int)]
    )
    return SampledPatchSet(locations, labels, grid.shape)

"""Synthetic desk-scale dataset generator.

Each image is a feature grid (stand-in for an encoder output) with a
planted rectangular foreground block: block cells carry the class
direction plus Gaussian noise, background cells carry shared distractor
directions plus noise.  The teacher CAM is the indicator of the block at
pixel resolution, optionally corrupted by relocating a fraction of its
positive mass outside the ground-truth box.  Raw class embeddings are unit
vectors with a controlled pairwise cosine so anchor orthogonalization has
something to fix.

Foreground directions are exactly orthonormal to the distractors, so the
task is solvable by the small linear decoder; the noise and corruption
knobs control how hard it is.  Everything derives from the config seed,
so a fixed config regenerates bit-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .errors import InfeasibleConfig

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 8
    grid_size: int = 12  # encoder grid is grid_size x grid_size cells
    encoder_dim: int = 16
    anchor_dim: int = 16
    fg_block_min: int = 4  # block side, in cells
    fg_block_max: int = 6
    noise_sigma: float = 0.25
    cam_corruption: float = 0.0  # fraction of CAM mass moved outside the box
    pair_rho: float = 0.0  # raw-anchor cosine for correlated class pairs
    num_correlated_pairs: int = 0
    train_count: int = 32
    val_count: int = 24
    test_count: int = 24
    pixels_per_cell: int = 4
    num_distractors: int = 4
    seed: int = 0

    def __post_init__(self):
        k = self.num_classes
        if k < 2:
            raise InfeasibleConfig("need at least two classes")
        if k > self.anchor_dim:
            raise InfeasibleConfig(
                f"{k} classes cannot be orthogonalized in anchor dim {self.anchor_dim}"
            )
        if k + self.num_distractors > self.encoder_dim:
            raise InfeasibleConfig(
                f"{k} classes + {self.num_distractors} distractors exceed "
                f"encoder dim {self.encoder_dim}"
            )
        if not (1 <= self.fg_block_min <= self.fg_block_max <= self.grid_size):
            raise InfeasibleConfig(
                f"block range [{self.fg_block_min}, {self.fg_block_max}] does not "
                f"fit a {self.grid_size}-cell grid"
            )
        if not 0.0 <= self.cam_corruption < 1.0:
            raise InfeasibleConfig("cam_corruption must be in [0, 1)")
        if not 0.0 <= self.pair_rho < 1.0:
            raise InfeasibleConfig("pair_rho must be in [0, 1)")
        if 2 * self.num_correlated_pairs > k:
            raise InfeasibleConfig("more correlated pairs than classes allow")
        for split, count in zip(SPLITS, self.split_counts):
            if count < 1 or count % k != 0:
                raise InfeasibleConfig(
                    f"{split} count {count} must be a positive multiple of K={k} "
                    "to keep classes balanced"
                )
        if self.noise_sigma < 0 or self.pixels_per_cell < 1:
            raise InfeasibleConfig("bad noise_sigma or pixels_per_cell")

    @property
    def split_counts(self) -> tuple[int, int, int]:
        return (self.train_count, self.val_count, self.test_count)

    @property
    def image_size(self) -> int:
        return self.grid_size * self.pixels_per_cell

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(f"class_{k:02d}" for k in range(self.num_classes))


def _orthonormal_columns(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, count)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)[None, :]


def class_directions(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """(class directions (K, d_e), distractor directions (m, d_e)); orthonormal."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    basis = _orthonormal_columns(
        rng, cfg.encoder_dim, cfg.num_classes + cfg.num_distractors
    )
    return basis[:, : cfg.num_classes].T.copy(), basis[:, cfg.num_classes :].T.copy()


def raw_class_embeddings(cfg: SynthConfig) -> np.ndarray:
    """Unit anchor rows (K, d); correlated pairs have cosine pair_rho."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    base = _orthonormal_columns(rng, cfg.anchor_dim, cfg.num_classes).T
    rows = base.copy()
    for p in range(cfg.num_correlated_pairs):
        i, j = 2 * p, 2 * p + 1
        rows[j] = cfg.pair_rho * base[i] + math.sqrt(1.0 - cfg.pair_rho**2) * base[j]
    return rows


def _plant_sample(cfg: SynthConfig, label: int, rng: np.random.Generator):
    p = cfg.grid_size
    bh = int(rng.integers(cfg.fg_block_min, cfg.fg_block_max + 1))
    bw = int(rng.integers(cfg.fg_block_min, cfg.fg_block_max + 1))
    r0 = int(rng.integers(0, p - bh + 1))
    c0 = int(rng.integers(0, p - bw + 1))
    return bh, bw, r0, c0


def _make_features(
    cfg: SynthConfig,
    label: int,
    block: tuple[int, int, int, int],
    directions: np.ndarray,
    distractors: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    p = cfg.grid_size
    bh, bw, r0, c0 = block
    picks = rng.integers(0, cfg.num_distractors, size=(p, p))
    grid = distractors[picks]
    grid[r0 : r0 + bh, c0 : c0 + bw] = directions[label]
    grid = grid + cfg.noise_sigma * rng.standard_normal((p, p, cfg.encoder_dim))
    return grid


def _make_cam(
    cfg: SynthConfig, block: tuple[int, int, int, int], rng: np.random.Generator
) -> np.ndarray:
    ppc = cfg.pixels_per_cell
    size = cfg.image_size
    bh, bw, r0, c0 = block
    cam = np.zeros((size, size))
    cam[r0 * ppc : (r0 + bh) * ppc, c0 * ppc : (c0 + bw) * ppc] = 1.0
    if cfg.cam_corruption > 0.0:
        inside = np.flatnonzero(cam.ravel() == 1.0)
        outside = np.flatnonzero(cam.ravel() == 0.0)
        moved = math.ceil(cfg.cam_corruption * inside.size)
        if moved > inside.size or moved > outside.size:
            raise InfeasibleConfig(
                f"cannot relocate {moved} CAM pixels (block {inside.size}, "
                f"background {outside.size})"
            )
        drop = rng.choice(inside.size, size=moved, replace=False)
        add = rng.choice(outside.size, size=moved, replace=False)
        flat = cam.ravel()
        flat[inside[drop]] = 0.0
        flat[outside[add]] = 1.0
    return cam


def generate(cfg: SynthConfig, out_dir) -> dict:
    """Write features, CAMs, raw anchors, and the manifest; return their paths."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "cams").mkdir(parents=True, exist_ok=True)

    directions, distractors = class_directions(cfg)
    anchor_rows = raw_class_embeddings(cfg)
    anchors_path = out_dir / "anchors_raw.tdla"
    from .anchors import AnchorSet  # local import to avoid cycle at module load

    formats.save_anchors(
        anchors_path,
        AnchorSet.from_rows(
            anchor_rows, cfg.class_names, orthogonalized=False, normalize_rows=False
        ),
    )

    records = []
    for split_idx, (split, count) in enumerate(zip(SPLITS, cfg.split_counts)):
        for i in range(count):
            label = i % cfg.num_classes
            rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, 2, split_idx, i])
            )
            block = _plant_sample(cfg, label, rng)
            features = _make_features(cfg, label, block, directions, distractors, rng)
            cam = _make_cam(cfg, block, rng)
            image_id = f"{split}_{i:04d}"
            features_rel = f"features/{image_id}.tdlf"
            cam_rel = f"cams/{image_id}.tdlm"
            formats.save_features(out_dir / features_rel, features)
            formats.save_cam(out_dir / cam_rel, cam)
            bh, bw, r0, c0 = block
            ppc = cfg.pixels_per_cell
            records.append(
                {
                    "id": image_id,
                    "label": label,
                    "features_path": features_rel,
                    "cam_path": cam_rel,
                    "gt_box": [c0 * ppc, r0 * ppc, (c0 + bw) * ppc, (r0 + bh) * ppc],
                    "split": split,
                    "image_size": [cfg.image_size, cfg.image_size],
                }
            )
    manifest_path = out_dir / "manifest.jsonl"
    formats.save_manifest(manifest_path, records)
    return {
        "manifest": manifest_path,
        "anchors": anchors_path,
        "num_images": len(records),
    }

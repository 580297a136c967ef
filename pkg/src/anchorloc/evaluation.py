"""Localization evaluation: map -> box extraction, IoU, sweep metrics.

The protocol: min-max normalize each localization map, binarize at every
threshold of a sweep, keep the largest 4-connected component's tight
bounding box, and score the fraction of images whose box reaches IoU >=
sigma with ground truth.  The best threshold is chosen once per dataset;
the classification-conditioned variants reuse it.

Boxes are half-open [min, max) rectangles.  IoU is computed from exact
coordinate arithmetic (integers stay exact in float64).  The patch-text
map is the evaluation-only diagnostic that scores patches against the
true class anchor; it is the single label-consuming path and every report
carrying it is flagged accordingly.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import formats
from .anchors import AnchorSet, class_probabilities
from .checkpoints import load_model_checkpoint
from .errors import EmptyDataset, ZeroVector
from .model import run_forward

_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class BBox:
    """Half-open axis-aligned box: pixels with min <= coord < max."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def default_sweep(count: int = 100) -> tuple[float, ...]:
    """Evenly spaced thresholds inside the open interval (0, 1)."""
    return tuple(np.linspace(0.0, 1.0, count + 2)[1:-1])


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    map_resolution: tuple[int, int] | None = (256, 256)  # None: native map size
    threshold_sweep: tuple[float, ...] = field(default_factory=default_sweep)

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError("iou_threshold must be in (0, 1)")
        sweep = tuple(float(t) for t in self.threshold_sweep)
        if not sweep or any(b <= a for a, b in zip(sweep, sweep[1:])):
            raise ValueError("threshold_sweep must be nonempty and strictly increasing")
        object.__setattr__(self, "threshold_sweep", sweep)


def minmax_normalize(fg_map: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]; a constant map becomes all zeros."""
    fg_map = np.asarray(fg_map, dtype=np.float64)
    lo, hi = float(np.min(fg_map)), float(np.max(fg_map))
    if hi == lo:
        return np.zeros_like(fg_map)
    return (fg_map - lo) / (hi - lo)


def resample_nearest(fg_map: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    fg_map = np.asarray(fg_map, dtype=np.float64)
    h, w = fg_map.shape
    rows = np.minimum((((np.arange(out_h) + 0.5) * h) // out_h).astype(int), h - 1)
    cols = np.minimum((((np.arange(out_w) + 0.5) * w) // out_w).astype(int), w - 1)
    return fg_map[rows[:, None], cols[None, :]]


def scale_box(box: BBox, from_hw: tuple[int, int], to_hw: tuple[int, int]) -> BBox:
    sy = to_hw[0] / from_hw[0]
    sx = to_hw[1] / from_hw[1]
    return BBox(box.x_min * sx, box.y_min * sy, box.x_max * sx, box.y_max * sy)


def map_to_box(fg_map: np.ndarray, threshold: float) -> BBox:
    """Tight box of the largest 4-connected super-threshold component.

    Component-size ties go to the component whose first pixel comes first
    in row-major order.  If nothing exceeds the threshold the whole image
    is returned.
    """
    fg_map = np.asarray(fg_map, dtype=np.float64)
    h, w = fg_map.shape
    mask = fg_map > threshold
    if not mask.any():
        return BBox(0, 0, w, h)
    labeled, num = ndimage.label(mask)
    sizes = np.bincount(labeled.ravel())[1:]
    best_size = sizes.max()
    candidates = np.flatnonzero(sizes == best_size) + 1
    if candidates.size == 1:
        chosen = int(candidates[0])
    else:
        flat = labeled.ravel()
        chosen = int(
            min(candidates, key=lambda lab: int(np.flatnonzero(flat == lab)[0]))
        )
    rows, cols = np.nonzero(labeled == chosen)
    return BBox(int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)


def iou(a: BBox, b: BBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _gt_iou(box: BBox, gt) -> float:
    """IoU against one box or the max over several ground-truth boxes."""
    if isinstance(gt, BBox):
        return iou(box, gt)
    return max(iou(box, g) for g in gt)


def _sweep_ious(maps, gt_boxes, cfg: EvalConfig) -> np.ndarray:
    """(num_images, num_thresholds) IoU matrix over the sweep."""
    if len(maps) == 0:
        raise EmptyDataset("no images to evaluate")
    if len(maps) != len(gt_boxes):
        raise ValueError(f"{len(maps)} maps vs {len(gt_boxes)} ground-truth boxes")
    matrix = np.zeros((len(maps), len(cfg.threshold_sweep)))
    for i, (fg_map, gt) in enumerate(zip(maps, gt_boxes)):
        normed = minmax_normalize(fg_map)
        for j, tau in enumerate(cfg.threshold_sweep):
            matrix[i, j] = _gt_iou(map_to_box(normed, tau), gt)
    return matrix


@dataclass(frozen=True)
class SweepResult:
    value: float  # accuracy at the best threshold
    curve: tuple[tuple[float, float], ...]  # (threshold, accuracy)
    best_threshold: float
    ious_at_best: np.ndarray  # per-image IoU at the best threshold


def maxboxacc(maps, gt_boxes, cfg: EvalConfig | None = None) -> SweepResult:
    """Best-threshold localization accuracy, independent of classification."""
    cfg = cfg or EvalConfig()
    matrix = _sweep_ious(maps, gt_boxes, cfg)
    hits = (matrix >= cfg.iou_threshold).mean(axis=0)
    best = int(np.argmax(hits))  # first maximum: lowest best threshold
    curve = tuple(zip(cfg.threshold_sweep, hits.tolist()))
    return SweepResult(
        value=float(hits[best]),
        curve=curve,
        best_threshold=float(cfg.threshold_sweep[best]),
        ious_at_best=matrix[:, best],
    )


def _topk_hits(class_probs: np.ndarray, labels, k: int) -> np.ndarray:
    probs = np.asarray(class_probs, dtype=np.float64)
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    labels = np.asarray(labels)
    return np.any(order == labels[:, None], axis=1)


def topk_loc(maps, gt_boxes, class_probs, labels, k, cfg: EvalConfig | None = None) -> float:
    """Fraction with the true class in the top-k AND IoU >= sigma at the
    dataset-level best threshold."""
    cfg = cfg or EvalConfig()
    sweep = maxboxacc(maps, gt_boxes, cfg)
    cls_ok = _topk_hits(class_probs, labels, k)
    loc_ok = sweep.ious_at_best >= cfg.iou_threshold
    return float(np.mean(cls_ok & loc_ok))


def patch_text_localize(grid: np.ndarray, label: int, anchors: AnchorSet) -> np.ndarray:
    """Diagnostic map from patch-anchor similarity for the TRUE class.

    Evaluation-only: it consumes the ground-truth label, unlike the
    foreground-classifier map used for inference.
    """
    grid = np.asarray(grid, dtype=np.float64)
    flat = grid.reshape(-1, grid.shape[2])
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms < _ZERO_NORM):
        raise ZeroVector("a patch embedding has near-zero norm")
    scores = (flat / norms[:, None]) @ anchors.anchors[label]
    return minmax_normalize(scores.reshape(grid.shape[:2]))


# ---------------------------------------------------------------------------
# checkpoint-level evaluation


@dataclass
class EvalReport:
    maxboxacc: float
    top1_loc: float
    top5_loc: float
    top1_cls: float
    best_threshold: float
    curve: tuple[tuple[float, float], ...]
    per_image: list[dict]
    num_images: int
    split: str
    patch_text: dict | None = None  # label-consuming diagnostic, flagged

    def check_ordering(self) -> None:
        assert self.top1_loc <= self.top5_loc + 1e-12
        assert self.top5_loc <= self.maxboxacc + 1e-12
        assert self.top1_loc <= self.top1_cls + 1e-12

    def to_json_dict(self) -> dict:
        out = {
            "maxboxacc": self.maxboxacc,
            "top1_loc": self.top1_loc,
            "top5_loc": self.top5_loc,
            "top1_cls": self.top1_cls,
            "best_threshold": self.best_threshold,
            "num_images": self.num_images,
            "split": self.split,
            "curve": [{"threshold": t, "acc": a} for t, a in self.curve],
            "per_image": self.per_image,
        }
        if self.patch_text is not None:
            out["patch_text"] = self.patch_text
        return out

    def save(self, path) -> None:
        formats._write_atomic(
            path, (json.dumps(self.to_json_dict(), indent=2) + "\n").encode("utf-8")
        )


def _prepare_map(fg_map: np.ndarray, cfg: EvalConfig) -> tuple[np.ndarray, tuple[int, int]]:
    """Resample a map to the evaluation resolution; return (map, target_hw)."""
    target = cfg.map_resolution or fg_map.shape
    if tuple(fg_map.shape) != tuple(target):
        fg_map = resample_nearest(fg_map, target[0], target[1])
    return fg_map, tuple(target)


def evaluate(
    checkpoint_path,
    manifest_path,
    cfg: EvalConfig | None = None,
    split: str = "test",
    include_patch_text: bool = True,
    jobs: int = 1,
) -> EvalReport:
    """Score one checkpoint on one manifest split; returns the full report."""
    cfg = cfg or EvalConfig()
    params, anchors, meta = load_model_checkpoint(checkpoint_path)
    temperature = float(meta.get("temperature", 1.0))
    records = [r for r in formats.load_manifest(manifest_path) if r["split"] == split]
    if not records:
        raise EmptyDataset(f"split {split!r} has no images in {manifest_path}")

    def run_one(record):
        features_path, _ = formats.manifest_paths(manifest_path, record)
        features = formats.load_features(features_path)
        cache = run_forward(features, params)
        probs = class_probabilities(cache.h, anchors, temperature=temperature)
        return cache, probs

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(run_one, records))
    else:
        outputs = [run_one(r) for r in records]

    maps, gts, probs_rows, labels = [], [], [], []
    for record, (cache, probs) in zip(records, outputs):
        image_hw = tuple(record.get("image_size") or formats.cam_shape(
            formats.manifest_paths(manifest_path, record)[1]
        ))
        fg_map, target_hw = _prepare_map(cache.g_grid, cfg)
        maps.append(fg_map)
        gts.append(scale_box(BBox(*record["gt_box"]), image_hw, target_hw))
        probs_rows.append(probs)
        labels.append(int(record["label"]))

    probs_matrix = np.vstack(probs_rows)
    labels_arr = np.asarray(labels)
    sweep = maxboxacc(maps, gts, cfg)
    top1_hits = _topk_hits(probs_matrix, labels_arr, 1)
    top5_hits = _topk_hits(probs_matrix, labels_arr, min(5, anchors.num_classes))
    loc_hits = sweep.ious_at_best >= cfg.iou_threshold

    per_image = []
    for record, iou_val, p_row, hit1 in zip(
        records, sweep.ious_at_best, probs_rows, top1_hits
    ):
        per_image.append(
            {
                "id": record["id"],
                "iou": float(iou_val),
                "pred_class": int(np.argmax(p_row)),
                "correct": bool(hit1),
            }
        )

    patch_text = None
    if include_patch_text:
        pt_maps = []
        for record, (cache, _) in zip(records, outputs):
            pt_maps.append(
                _prepare_map(
                    patch_text_localize(cache.z_grid, int(record["label"]), anchors), cfg
                )[0]
            )
        pt_sweep = maxboxacc(pt_maps, gts, cfg)
        pt_loc = pt_sweep.ious_at_best >= cfg.iou_threshold
        patch_text = {
            "uses_true_labels": True,
            "maxboxacc": pt_sweep.value,
            "top1_loc": float(np.mean(top1_hits & pt_loc)),
            "top5_loc": float(np.mean(top5_hits & pt_loc)),
            "best_threshold": pt_sweep.best_threshold,
        }

    report = EvalReport(
        maxboxacc=sweep.value,
        top1_loc=float(np.mean(top1_hits & loc_hits)),
        top5_loc=float(np.mean(top5_hits & loc_hits)),
        top1_cls=float(np.mean(top1_hits)),
        best_threshold=sweep.best_threshold,
        curve=sweep.curve,
        per_image=per_image,
        num_images=len(records),
        split=split,
        patch_text=patch_text,
    )
    report.check_ordering()
    return report

"""SGD training loop with per-step pseudo-label resampling.

Each step: pool every image's CAM to the decoder grid, redraw balanced
FG/BG patch samples (fresh RNG stream derived from seed, step, and image
index, so runs are reproducible and resumable without serializing
generator state), compute the weighted loss, and apply one SGD update
with momentum and weight decay to the decoder and patch classifier.  The
encoder is never touched.

Model selection uses localization only: the checkpoint with the best
validation MaxBoxAcc becomes the final model.  Parameters and momentum
buffers are snapped to the float32 grid after every update (the
checkpoint precision) while gradient math runs in float64, so
save -> load -> continue is bit-identical to an uninterrupted run.  A
non-finite loss aborts the run rather than being skipped.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoints, formats
from .anchors import AnchorSet
from .errors import InvalidManifest, MissingCam, NonFiniteLoss
from .evaluation import BBox, EvalConfig, maxboxacc, scale_box
from .losses import LossBreakdown, LossWeights, image_cls_loss, kd_loss, patch_cls_loss, total_loss
from .model import (
    ModelParameters,
    backward,
    get_encoder,
    init_parameters,
    run_forward,
    zero_gradients,
)
from .pseudo import SamplerConfig, sample_fg_bg, to_patch_grid

_RNG_INIT, _RNG_SHUFFLE, _RNG_SAMPLE = 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    """Defaults are the desk-scale recipe: 32 train images in batches of
    16 for 100 epochs = 200 steps."""

    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    momentum: float = 0.9
    lambda_kd: float = 1.0
    lambda_pcl: float = 1.0
    lambda_icl: float = 1.0
    n_fg: float = 64
    n_bg: float = 0.2
    samples_per_side: int = 10
    histogram_bins: int = 256
    temperature: float = 1.0
    seed: int = 7
    upscale: int = 2
    embed_dim: int = 16
    encoder: str = "synthetic"
    normalize_scores: bool = True
    mean_reduce_patches: bool = False
    select_every: int = 25  # validate every N epochs (and at the end)

    def __post_init__(self):
        # 0 is allowed as a degenerate diagnostic (null update, losses still
        # reported); normal configs use a positive rate.
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_kd, self.lambda_pcl, self.lambda_icl)

    @property
    def sampler(self) -> SamplerConfig:
        return SamplerConfig(
            n_fg=self.n_fg,
            n_bg=self.n_bg,
            samples_per_side=self.samples_per_side,
            histogram_bins=self.histogram_bins,
        )

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        kwargs = {}
        by_name = {f.name: f for f in fields(cls)}
        for key, value in mapping.items():
            if key not in by_name:
                raise ValueError(f"unknown training config key {key!r}")
            target = by_name[key].type
            if isinstance(value, str):
                if target == "bool":
                    value = value.lower() in ("1", "true", "yes", "on")
                elif target == "int":
                    value = int(value)
                elif target == "float":
                    value = float(value)
                elif target != "str":
                    value = float(value)  # n_fg / n_bg accept int or fraction
            kwargs[key] = value
        return cls(**kwargs)


@dataclass
class TrainState:
    params: ModelParameters
    momenta: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    best_val: float = float("-inf")
    best_epoch: int = -1

    @classmethod
    def fresh(cls, encoder_dim: int, cfg: TrainConfig) -> "TrainState":
        init_seed = np.random.SeedSequence([cfg.seed, _RNG_INIT]).generate_state(1)[0]
        params = init_parameters(
            encoder_dim, cfg.embed_dim, upscale=cfg.upscale, seed=int(init_seed)
        )
        momenta = {
            name: np.zeros_like(getattr(params, name))
            for name in ModelParameters.FIELDS
        }
        return cls(params=params, momenta=momenta)


@dataclass
class TrainItem:
    """One preloaded training image."""

    index: int  # stable dataset position, part of the sampling RNG stream
    image_id: str
    label: int
    features: np.ndarray


def _quantize(arr: np.ndarray) -> np.ndarray:
    # Snap to the float32 grid: checkpoints store float32, and keeping the
    # live state on that grid makes save -> load -> continue bit-identical.
    return arr.astype(np.float32).astype(np.float64)


def _sgd_update(state: TrainState, grads, cfg: TrainConfig) -> None:
    for name in ModelParameters.FIELDS:
        theta = getattr(state.params, name)
        g = getattr(grads, name) + cfg.weight_decay * theta
        v = _quantize(state.momenta[name] * cfg.momentum + g)
        state.momenta[name] = v
        setattr(state.params, name, _quantize(theta - cfg.learning_rate * v))


def train_step(
    batch: list[TrainItem],
    state: TrainState,
    anchors: AnchorSet,
    cams: dict[str, np.ndarray],
    cfg: TrainConfig,
) -> LossBreakdown:
    """One SGD step over a batch; mutates ``state``, returns the mean loss."""
    grads = zero_gradients(state.params)
    sums = np.zeros(3)
    sampler = cfg.sampler
    weights = cfg.loss_weights
    for item in batch:
        cam = cams.get(item.image_id)
        if cam is None:
            raise MissingCam(f"no CAM for image {item.image_id}")
        cache = run_forward(item.features, state.params)
        pooled = to_patch_grid(cam, *cache.grid_shape)
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, _RNG_SAMPLE, state.step, item.index])
        )
        sampled = sample_fg_bg(pooled, sampler, rng)
        kd = kd_loss(
            cache.z_grid,
            sampled.fg_locations,
            item.label,
            anchors,
            temperature=cfg.temperature,
            normalize=cfg.normalize_scores,
            mean=cfg.mean_reduce_patches,
        )
        pcl = patch_cls_loss(cache.g_grid, sampled, mean=cfg.mean_reduce_patches)
        icl = image_cls_loss(
            cache.h,
            item.label,
            anchors,
            temperature=cfg.temperature,
            normalize=cfg.normalize_scores,
        )
        breakdown, lgrads = total_loss(kd, pcl, icl, weights)
        grads += backward(cache, state.params, lgrads.d_grid, lgrads.d_map, lgrads.d_h)
        sums += (breakdown.l_kd, breakdown.p_cl, breakdown.i_cl)

    scale = 1.0 / len(batch)
    mean_terms = sums * scale
    total = (
        weights.lambda_kd * mean_terms[0]
        + weights.lambda_pcl * mean_terms[1]
        + weights.lambda_icl * mean_terms[2]
    )
    if not np.isfinite(total):
        raise NonFiniteLoss(f"step {state.step}: loss {total}")
    _sgd_update(state, grads.scaled(scale), cfg)
    state.step += 1
    return LossBreakdown(
        l_kd=float(mean_terms[0]),
        p_cl=float(mean_terms[1]),
        i_cl=float(mean_terms[2]),
        total=float(total),
    )


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    log_path: Path
    best_val: float
    best_epoch: int
    steps: int


def _load_split(manifest_path, records, split: str):
    items, gt_boxes, image_sizes = [], [], []
    for index, record in enumerate(records):
        if record["split"] != split:
            continue
        features_path, cam_path = formats.manifest_paths(manifest_path, record)
        items.append(
            TrainItem(
                index=index,
                image_id=record["id"],
                label=int(record["label"]),
                features=formats.load_features(features_path),
            )
        )
        gt_boxes.append(BBox(*record["gt_box"]))
        size = record.get("image_size")
        image_sizes.append(tuple(size) if size else formats.cam_shape(cam_path))
    return items, gt_boxes, image_sizes


def validation_maxboxacc(
    params: ModelParameters, items, gt_boxes, image_sizes
) -> float:
    """Localization metric used for model selection, at native map resolution."""
    cfg = EvalConfig(map_resolution=None)
    maps, gts = [], []
    for item, gt, size in zip(items, gt_boxes, image_sizes):
        cache = run_forward(item.features, params)
        maps.append(cache.g_grid)
        gts.append(scale_box(gt, size, cache.grid_shape))
    return maxboxacc(maps, gts, cfg).value


def train(
    manifest_path,
    anchors_path,
    cfg: TrainConfig,
    out_dir,
    resume_from=None,
) -> TrainResult:
    """Full training run; writes per-epoch checkpoints, a JSON-lines log,
    and the selected best model to ``out_dir``."""
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    records = formats.load_manifest(manifest_path)

    encoder = get_encoder(cfg.encoder)
    train_items, _, _ = _load_split(manifest_path, records, "train")
    if not train_items:
        raise InvalidManifest(f"{manifest_path}: no training images")
    for item in train_items:
        item.features = encoder.encode(item.features)
    val_items, val_boxes, val_sizes = _load_split(manifest_path, records, "val")
    for item in val_items:
        item.features = encoder.encode(item.features)

    cams: dict[str, np.ndarray] = {}
    for index, record in enumerate(records):
        if record["split"] != "train":
            continue
        _, cam_path = formats.manifest_paths(manifest_path, record)
        if not cam_path.exists():
            raise MissingCam(f"{record['id']}: {cam_path} does not exist")
        cams[record["id"]] = formats.load_cam(cam_path)

    anchors = checkpoints.quantize_anchors(
        formats.load_anchors(anchors_path)
    )
    anchor_hash = formats.file_sha256(anchors_path)

    if resume_from is not None:
        params, momenta, saved_anchors, meta = checkpoints.load_state(resume_from)
        if meta.get("anchor_sha256") not in (None, anchor_hash):
            raise InvalidManifest(
                "checkpoint was trained with different anchors "
                f"({meta.get('anchor_sha256')} != {anchor_hash})"
            )
        state = TrainState(
            params=params,
            momenta=momenta,
            step=int(meta["step"]),
            epoch=int(meta["epoch"]),
            best_val=float(meta.get("best_val", float("-inf"))),
            best_epoch=int(meta.get("best_epoch", -1)),
        )
    else:
        state = TrainState.fresh(train_items[0].features.shape[2], cfg)

    log_path = out_dir / "train_log.jsonl"
    log_file = open(log_path, "a", encoding="utf-8")

    def log(payload: dict) -> None:
        log_file.write(json.dumps(payload) + "\n")
        log_file.flush()

    def save_epoch(epoch: int) -> Path:
        path = ckpt_dir / f"epoch_{epoch:04d}.ckpt"
        checkpoints.save_state(
            path,
            state.params,
            state.momenta,
            anchors,
            meta={
                "step": state.step,
                "epoch": state.epoch,
                "seed": cfg.seed,
                "anchor_sha256": anchor_hash,
                "temperature": cfg.temperature,
                "normalize_scores": cfg.normalize_scores,
                "encoder": cfg.encoder,
                "best_val": state.best_val,
                "best_epoch": state.best_epoch,
            },
        )
        return path

    last_path = save_epoch(state.epoch) if state.epoch else None
    try:
        for epoch in range(state.epoch, cfg.epochs):
            order = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, _RNG_SHUFFLE, epoch])
            ).permutation(len(train_items))
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_items[i] for i in order[start : start + cfg.batch_size]]
                breakdown = train_step(batch, state, anchors, cams, cfg)
                log(
                    {
                        "step": state.step,
                        "l_kd": breakdown.l_kd,
                        "p_cl": breakdown.p_cl,
                        "i_cl": breakdown.i_cl,
                        "total": breakdown.total,
                        "lr": cfg.learning_rate,
                    }
                )
            state.epoch = epoch + 1
            is_last = state.epoch == cfg.epochs
            if val_items and (state.epoch % cfg.select_every == 0 or is_last):
                val_mba = validation_maxboxacc(
                    state.params, val_items, val_boxes, val_sizes
                )
                log({"event": "validation", "epoch": state.epoch, "val_maxboxacc": val_mba})
                if val_mba > state.best_val:
                    state.best_val = val_mba
                    state.best_epoch = state.epoch
            last_path = save_epoch(state.epoch)
    finally:
        log_file.close()

    if state.best_epoch < 0:  # no validation split: fall back to the last epoch
        state.best_epoch = state.epoch
        best_source = last_path
    else:
        best_source = ckpt_dir / f"epoch_{state.best_epoch:04d}.ckpt"
    best_path = out_dir / "model_best.ckpt"
    tmp = best_path.with_suffix(".ckpt.tmp")
    shutil.copyfile(best_source, tmp)
    os.replace(tmp, best_path)
    return TrainResult(
        best_checkpoint=best_path,
        last_checkpoint=last_path,
        log_path=log_path,
        best_val=state.best_val,
        best_epoch=state.best_epoch,
        steps=state.step,
    )


def lambda_grid_search(
    manifest_path,
    anchors_path,
    base_cfg: TrainConfig,
    grid: list[tuple[float, float, float]],
    out_dir,
) -> dict:
    """Train once per weight combination; select by validation MaxBoxAcc."""
    out_dir = Path(out_dir)
    results = []
    for i, (lam_kd, lam_pcl, lam_icl) in enumerate(grid):
        cfg = replace(
            base_cfg, lambda_kd=lam_kd, lambda_pcl=lam_pcl, lambda_icl=lam_icl
        )
        run = train(manifest_path, anchors_path, cfg, out_dir / f"grid_{i:02d}")
        results.append(
            {
                "weights": [lam_kd, lam_pcl, lam_icl],
                "val_maxboxacc": run.best_val,
                "checkpoint": str(run.best_checkpoint),
            }
        )
    best = max(range(len(results)), key=lambda i: results[i]["val_maxboxacc"])
    return {"runs": results, "best": results[best]}

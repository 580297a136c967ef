"""Figures for an evaluation report: threshold curve and map overlays."""

from __future__ import annotations

import json
from pathlib import Path

from . import formats
from .checkpoints import load_model_checkpoint
from .evaluation import minmax_normalize, resample_nearest
from .model import run_forward


def plot_threshold_curve(report: dict, out_path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curve = report["curve"]
    taus = [point["threshold"] for point in curve]
    accs = [point["acc"] for point in curve]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(taus, accs, lw=1.5)
    best = report.get("best_threshold")
    if best is not None:
        ax.axvline(best, color="tab:red", ls="--", lw=1, label=f"best = {best:.3f}")
        ax.legend()
    ax.set_xlabel("map threshold")
    ax.set_ylabel("box accuracy at the IoU criterion")
    ax.set_title(f"max = {report['maxboxacc']:.3f}")
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_heatmap_overlays(
    checkpoint_path, manifest_path, out_dir, split: str = "test", limit: int = 6
) -> list[Path]:
    """Localization-map overlays with predicted and ground-truth boxes."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib import patches

    from .evaluation import BBox, map_to_box

    params, anchors, _ = load_model_checkpoint(checkpoint_path)
    records = [
        r for r in formats.load_manifest(manifest_path) if r["split"] == split
    ][:limit]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for record in records:
        features_path, _ = formats.manifest_paths(manifest_path, record)
        cache = run_forward(formats.load_features(features_path), params)
        image_hw = tuple(record["image_size"])
        heat = resample_nearest(minmax_normalize(cache.g_grid), *image_hw)
        pred = map_to_box(heat, 0.5)
        gt = BBox(*record["gt_box"])
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(heat, cmap="magma", vmin=0, vmax=1)
        for box, color, name in ((gt, "lime", "gt"), (pred, "red", "pred")):
            ax.add_patch(
                patches.Rectangle(
                    (box.x_min - 0.5, box.y_min - 0.5),
                    box.x_max - box.x_min,
                    box.y_max - box.y_min,
                    fill=False,
                    edgecolor=color,
                    lw=1.5,
                    label=name,
                )
            )
        ax.legend(loc="upper right", fontsize=8)
        ax.set_title(record["id"])
        ax.set_axis_off()
        fig.tight_layout()
        path = out_dir / f"overlay_{record['id']}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def load_report(path) -> dict:
    return json.loads(Path(path).read_text("utf-8"))

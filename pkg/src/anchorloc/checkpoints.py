"""Checkpoint contents: model parameters, optimizer state, anchors.

The container (see :mod:`anchorloc.formats`) stores every array as
little-endian float32.  Training keeps its canonical state in float32 as
well, so save -> load -> continue is bit-identical to an uninterrupted
run.  The anchors used for training are embedded (rows, names, flag) next
to the anchor-file hash, which makes a checkpoint self-contained for
evaluation.
"""

from __future__ import annotations

import numpy as np

from . import formats
from .anchors import AnchorSet
from .errors import FormatError
from .model import ModelParameters

MOMENTUM_PREFIX = "m_"
ANCHORS_KEY = "anchor_rows"


def quantize_anchors(anchors: AnchorSet) -> AnchorSet:
    """Round anchor rows to float32 so training and checkpoints agree bit-for-bit."""
    rows = anchors.anchors.astype(np.float32).astype(np.float64)
    return AnchorSet(rows, anchors.class_names, anchors.orthogonalized)


def save_state(
    path,
    params: ModelParameters,
    momenta: dict[str, np.ndarray],
    anchors: AnchorSet,
    meta: dict,
) -> None:
    arrays: dict[str, np.ndarray] = dict(params.as_dict())
    for name, buf in momenta.items():
        arrays[MOMENTUM_PREFIX + name] = buf
    arrays[ANCHORS_KEY] = anchors.anchors
    header = dict(meta)
    header["upscale"] = params.upscale
    header["anchor_names"] = list(anchors.class_names)
    header["anchor_orthogonalized"] = anchors.orthogonalized
    formats.save_checkpoint(path, arrays, header)


def load_state(path) -> tuple[ModelParameters, dict[str, np.ndarray], AnchorSet, dict]:
    arrays, meta = formats.load_checkpoint(path)
    missing = [n for n in ModelParameters.FIELDS if n not in arrays]
    if missing or ANCHORS_KEY not in arrays:
        raise FormatError(f"{path}: missing checkpoint arrays {missing}")
    params = ModelParameters(
        *(arrays[n] for n in ModelParameters.FIELDS),
        upscale=int(meta.get("upscale", 2)),
    )
    momenta = {
        name[len(MOMENTUM_PREFIX) :]: arr.astype(np.float64)
        for name, arr in arrays.items()
        if name.startswith(MOMENTUM_PREFIX)
    }
    anchors = AnchorSet(
        arrays[ANCHORS_KEY].astype(np.float64),
        tuple(meta["anchor_names"]),
        bool(meta["anchor_orthogonalized"]),
    )
    return params, momenta, anchors, meta


def load_model_checkpoint(path) -> tuple[ModelParameters, AnchorSet, dict]:
    """Evaluation view of a checkpoint: parameters + anchors + header."""
    params, _, anchors, meta = load_state(path)
    return params, anchors, meta

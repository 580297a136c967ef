"""anchorloc: joint patch-level localization and anchor-based classification.

A frozen encoder's patch features are decoded into embeddings aligned with
frozen class-anchor vectors; a binary patch classifier turns them into a
localization map, and the map-weighted embedding average classifies the
image, so inference needs no class label.  Training supervision comes from
teacher activation maps via balanced FG/BG pseudo-label sampling.
"""

__version__ = "0.1.0"

from .anchors import (
    AnchorSet,
    RawEmbeddingMatrix,
    class_probabilities,
    orthogonalize,
    score,
    score_all,
)
from .datagen import SynthConfig, generate
from .evaluation import (
    BBox,
    EvalConfig,
    EvalReport,
    evaluate,
    iou,
    map_to_box,
    maxboxacc,
    patch_text_localize,
    topk_loc,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    image_cls_loss,
    kd_loss,
    patch_cls_loss,
    total_loss,
)
from .model import (
    GlobalEmbedding,
    ModelParameters,
    aggregate,
    decode,
    encode,
    forward,
    init_parameters,
    patch_scores,
)
from .pseudo import (
    SampledPatchSet,
    SamplerConfig,
    otsu_threshold,
    sample_fg_bg,
    to_patch_grid,
)
from .trainer import TrainConfig, TrainResult, train, train_step

__all__ = [
    "AnchorSet",
    "BBox",
    "EvalConfig",
    "EvalReport",
    "GlobalEmbedding",
    "LossBreakdown",
    "LossWeights",
    "ModelParameters",
    "RawEmbeddingMatrix",
    "SampledPatchSet",
    "SamplerConfig",
    "SynthConfig",
    "TrainConfig",
    "TrainResult",
    "aggregate",
    "class_probabilities",
    "decode",
    "encode",
    "evaluate",
    "forward",
    "generate",
    "image_cls_loss",
    "init_parameters",
    "iou",
    "kd_loss",
    "map_to_box",
    "maxboxacc",
    "orthogonalize",
    "otsu_threshold",
    "patch_cls_loss",
    "patch_scores",
    "patch_text_localize",
    "sample_fg_bg",
    "score",
    "score_all",
    "to_patch_grid",
    "topk_loc",
    "total_loss",
    "train",
    "train_step",
]

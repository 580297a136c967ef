import pytest

from anchorloc import formats
from anchorloc.anchors import RawEmbeddingMatrix, orthogonalize
from anchorloc.datagen import SynthConfig, generate
from anchorloc.trainer import TrainConfig

TINY_SYNTH = dict(
    num_classes=4,
    grid_size=8,
    encoder_dim=8,
    anchor_dim=8,
    fg_block_min=3,
    fg_block_max=4,
    train_count=8,
    val_count=8,
    test_count=8,
    noise_sigma=0.2,
    seed=13,
)

TINY_TRAIN = dict(
    epochs=10,
    batch_size=8,
    n_fg=36,
    embed_dim=8,
    select_every=5,
    seed=13,
)


def orthogonalized_anchor_file(raw_path, out_path):
    raw = formats.load_anchors(raw_path, normalize_rows=False)
    anchors = orthogonalize(RawEmbeddingMatrix(raw.anchors, raw.class_names))
    formats.save_anchors(out_path, anchors)
    return out_path


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small synthetic dataset plus its orthogonalized anchor file."""
    root = tmp_path_factory.mktemp("tiny")
    result = generate(SynthConfig(**TINY_SYNTH), root)
    anchors_path = orthogonalized_anchor_file(result["anchors"], root / "anchors_ortho.tdla")
    return {
        "root": root,
        "manifest": result["manifest"],
        "raw_anchors": result["anchors"],
        "anchors": anchors_path,
    }


def tiny_train_config(**overrides) -> TrainConfig:
    return TrainConfig(**{**TINY_TRAIN, **overrides})

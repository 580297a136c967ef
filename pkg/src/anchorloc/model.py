"""Forward model: frozen encoder -> decoder -> patch classifier -> pooling.

The encoder is a frozen adapter producing a P_h x P_w grid of feature
vectors.  The trainable decoder projects each cell to the anchor dimension,
upsamples the grid by an integer factor, and applies a residual per-patch
refinement.  A logistic patch classifier g scores each patch embedding as
foreground; the score grid is the localization map.  The global image
embedding is the g-weighted average of patch embeddings, so classification
needs no class label at inference: the image is classified by anchor
similarity of that one vector.

All math runs in float64; the trainer keeps parameter values on the
float32 grid between steps so the float32 checkpoints round-trip
losslessly.  ``backward`` implements the analytic gradients and is
verified against central finite differences in the test suite.
"""

from __future__ import annotations

import importlib.util
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .anchors import AnchorSet, class_probabilities
from .errors import AdapterUnavailable, ShapeMismatch

AGGREGATION_EPS = 1e-8


# ---------------------------------------------------------------------------
# encoder adapters


class SyntheticEncoder:
    """Identity adapter: the stored feature grid is the encoder output.

    Frozen by construction; gradients never reach it.
    """

    name = "synthetic"

    def encode(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 3:
            raise ShapeMismatch(f"expected (H, W, D) features, got {features.shape}")
        if not np.all(np.isfinite(features)):
            raise ShapeMismatch("non-finite encoder input")
        return features


def get_encoder(spec: str = "synthetic"):
    """Resolve an encoder adapter from its config string.

    ``synthetic`` is built in; ``external:<path>`` loads a Python plug-in
    exposing ``build_encoder()``.
    """
    if spec == "synthetic":
        return SyntheticEncoder()
    if spec.startswith("external:"):
        path = Path(spec.split(":", 1)[1])
        if not path.exists():
            raise AdapterUnavailable(f"encoder plug-in not found: {path}")
        module_spec = importlib.util.spec_from_file_location("anchorloc_encoder", path)
        module = importlib.util.module_from_spec(module_spec)
        module_spec.loader.exec_module(module)
        if not hasattr(module, "build_encoder"):
            raise AdapterUnavailable(f"{path} defines no build_encoder()")
        return module.build_encoder()
    raise AdapterUnavailable(f"unknown encoder spec {spec!r}")


def encode(features: np.ndarray, encoder=None) -> np.ndarray:
    encoder = encoder if encoder is not None else SyntheticEncoder()
    return encoder.encode(features)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ModelParameters:
    """Trainable state: decoder (w1, b1, w2, b2) and patch classifier (cls_w, cls_b).

    Held as float64 for exact gradient math; the trainer keeps values on
    the float32 grid after every update so checkpoints (stored float32)
    round-trip losslessly.  The encoder is external and frozen.
    """

    w1: np.ndarray  # (d, d_e) projection to anchor dimension
    b1: np.ndarray  # (d,)
    w2: np.ndarray  # (d, d) residual refinement
    b2: np.ndarray  # (d,)
    cls_w: np.ndarray  # (d,)
    cls_b: np.ndarray  # scalar, shape ()
    upscale: int = 2

    FIELDS = ("w1", "b1", "w2", "b2", "cls_w", "cls_b")

    def __post_init__(self):
        for name in self.FIELDS:
            # private copy: callers may pass shared or aliased buffers
            arr = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite parameter {name}")
            setattr(self, name, arr)
        if self.upscale < 1:
            raise ValueError("upscale must be >= 1")

    @property
    def embed_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def encoder_dim(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            *(getattr(self, n).copy() for n in self.FIELDS), upscale=self.upscale
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.FIELDS}


def init_parameters(
    encoder_dim: int, embed_dim: int, upscale: int = 2, seed: int = 0
) -> ModelParameters:
    """Random projection, zero refinement, zero classifier.

    With a zero classifier the untrained map is exactly 0.5 everywhere and
    the global embedding is the plain patch mean.
    """
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, 1.0 / np.sqrt(encoder_dim), size=(embed_dim, encoder_dim))
    return ModelParameters(
        w1=w1.astype(np.float32),  # start on the checkpoint (float32) grid
        b1=np.zeros(embed_dim),
        w2=np.zeros((embed_dim, embed_dim)),
        b2=np.zeros(embed_dim),
        cls_w=np.zeros(embed_dim),
        cls_b=np.zeros(()),
        upscale=upscale,
    )


@dataclass
class ParameterGradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    cls_w: np.ndarray
    cls_b: np.ndarray

    def __iadd__(self, other: "ParameterGradients") -> "ParameterGradients":
        for name in ModelParameters.FIELDS:
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self

    def scaled(self, factor: float) -> "ParameterGradients":
        return ParameterGradients(
            *(factor * getattr(self, n) for n in ModelParameters.FIELDS)
        )


def zero_gradients(params: ModelParameters) -> ParameterGradients:
    return ParameterGradients(
        *(np.zeros_like(getattr(params, n), dtype=np.float64) for n in ModelParameters.FIELDS)
    )


# ---------------------------------------------------------------------------
# forward / backward


def _upsample(grid: np.ndarray, s: int) -> np.ndarray:
    return np.repeat(np.repeat(grid, s, axis=0), s, axis=1)


def _upsample_adjoint(grid: np.ndarray, s: int) -> np.ndarray:
    h, w = grid.shape[0] // s, grid.shape[1] // s
    return grid.reshape(h, s, w, s, -1).sum(axis=(1, 3))


@dataclass
class ForwardCache:
    """All intermediates of one forward pass, consumed by ``backward``."""

    enc: np.ndarray  # (P_h, P_w, d_e)
    projected: np.ndarray  # (N, d) after up-sampling, flattened row-major
    tanh_r: np.ndarray  # (N, d) refinement activation
    z: np.ndarray  # (N, d) patch embeddings
    g: np.ndarray  # (N,) foreground probabilities
    weights: np.ndarray  # (N,) aggregation weights, sum 1
    weight_sum: float  # denominator of the weights
    h: np.ndarray  # (d,) global embedding
    grid_shape: tuple[int, int]  # decoder output (P'_h, P'_w)

    @property
    def z_grid(self) -> np.ndarray:
        return self.z.reshape(*self.grid_shape, -1)

    @property
    def g_grid(self) -> np.ndarray:
        return self.g.reshape(self.grid_shape)


def run_forward(enc: np.ndarray, params: ModelParameters) -> ForwardCache:
    enc = np.asarray(enc, dtype=np.float64)
    if enc.ndim != 3:
        raise ShapeMismatch(f"expected (H, W, D) encoder output, got {enc.shape}")
    if enc.shape[2] != params.encoder_dim:
        raise ShapeMismatch(
            f"encoder dim {enc.shape[2]} != projection input {params.encoder_dim}"
        )
    s = params.upscale
    ph, pw, _ = enc.shape
    u0 = enc.reshape(-1, enc.shape[2]) @ params.w1.T + params.b1
    up = _upsample(u0.reshape(ph, pw, -1), s).reshape(-1, params.embed_dim)
    tanh_r = np.tanh(up @ params.w2.T + params.b2)
    z = up + tanh_r
    q = z @ params.cls_w + float(params.cls_b)
    g = expit(q)
    shifted = g + AGGREGATION_EPS
    weight_sum = float(np.sum(shifted))
    weights = shifted / weight_sum
    h = weights @ z
    return ForwardCache(
        enc=enc,
        projected=up,
        tanh_r=tanh_r,
        z=z,
        g=g,
        weights=weights,
        weight_sum=weight_sum,
        h=h,
        grid_shape=(ph * s, pw * s),
    )


def backward(
    cache: ForwardCache,
    params: ModelParameters,
    d_z: np.ndarray | None = None,
    d_g: np.ndarray | None = None,
    d_h: np.ndarray | None = None,
) -> ParameterGradients:
    """Map loss gradients on (z, g, h) to parameter gradients.

    ``d_z``: (N, d) or (P'_h, P'_w, d); ``d_g``: (N,) or (P'_h, P'_w)
    gradient w.r.t. the foreground probabilities; ``d_h``: (d,).
    """
    n, d = cache.z.shape
    dz = np.zeros((n, d))
    dg = np.zeros(n)
    if d_z is not None:
        dz += np.asarray(d_z, dtype=np.float64).reshape(n, d)
    if d_g is not None:
        dg += np.asarray(d_g, dtype=np.float64).reshape(n)
    if d_h is not None:
        d_h = np.asarray(d_h, dtype=np.float64)
        dz += cache.weights[:, None] * d_h[None, :]
        d_weights = cache.z @ d_h
        dg += (d_weights - cache.weights @ d_weights) / cache.weight_sum

    dq = dg * cache.g * (1.0 - cache.g)
    d_cls_w = cache.z.T @ dq
    d_cls_b = np.asarray(np.sum(dq))
    dz = dz + dq[:, None] * params.cls_w[None, :]

    dr = (1.0 - cache.tanh_r**2) * dz
    d_w2 = dr.T @ cache.projected
    d_b2 = dr.sum(axis=0)
    d_up = dz + dr @ params.w2

    s = params.upscale
    gh, gw = cache.grid_shape
    du0 = _upsample_adjoint(d_up.reshape(gh, gw, d), s).reshape(-1, d)
    enc2 = cache.enc.reshape(-1, cache.enc.shape[2])
    d_w1 = du0.T @ enc2
    d_b1 = du0.sum(axis=0)
    return ParameterGradients(d_w1, d_b1, d_w2, d_b2, d_cls_w, d_cls_b)


# ---------------------------------------------------------------------------
# public operations


def decode(enc: np.ndarray, params: ModelParameters) -> np.ndarray:
    """Patch embedding grid (P'_h, P'_w, d) for one encoder output."""
    return run_forward(enc, params).z_grid


def patch_scores(grid: np.ndarray, params: ModelParameters) -> np.ndarray:
    """Foreground probability g(z_p) per patch; the localization map."""
    grid = np.asarray(grid, dtype=np.float64)
    q = grid @ params.cls_w + float(params.cls_b)
    return expit(q)


@dataclass(frozen=True)
class GlobalEmbedding:
    """Weighted-average image embedding and its per-patch weights."""

    h: np.ndarray  # (d,)
    weights: np.ndarray  # (P'_h, P'_w), nonnegative, sums to 1


def aggregate(grid: np.ndarray, fg_map: np.ndarray) -> GlobalEmbedding:
    """Pool patch embeddings with weights proportional to their FG scores.

    A tiny epsilon in numerator and denominator removes the all-zero-map
    singularity; an all-equal map degrades to the unweighted mean.
    """
    grid = np.asarray(grid, dtype=np.float64)
    fg_map = np.asarray(fg_map, dtype=np.float64)
    if grid.shape[:2] != fg_map.shape:
        raise ShapeMismatch(f"grid {grid.shape[:2]} vs map {fg_map.shape}")
    shifted = fg_map.reshape(-1) + AGGREGATION_EPS
    weights = shifted / np.sum(shifted)
    h = weights @ grid.reshape(-1, grid.shape[2])
    return GlobalEmbedding(h=h, weights=weights.reshape(fg_map.shape))


def forward(
    features: np.ndarray,
    params: ModelParameters,
    anchors: AnchorSet,
    temperature: float = 1.0,
    encoder=None,
) -> tuple[np.ndarray, GlobalEmbedding, np.ndarray]:
    """Full inference: localization map, global embedding, class probabilities.

    Consumes no class label; classification comes from anchor similarity of
    the aggregated embedding.
    """
    enc = encode(features, encoder)
    cache = run_forward(enc, params)
    if params.embed_dim != anchors.dim:
        raise ShapeMismatch(f"embed dim {params.embed_dim} != anchor dim {anchors.dim}")
    probs = class_probabilities(cache.h, anchors, temperature=temperature)
    global_embedding = GlobalEmbedding(
        h=cache.h, weights=cache.weights.reshape(cache.grid_shape)
    )
    return cache.g_grid, global_embedding, probs

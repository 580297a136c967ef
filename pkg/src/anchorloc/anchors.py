"""Class-anchor embeddings: orthogonalization, scoring, class probabilities.

Anchors are K frozen d-dimensional vectors, one per class, used as the
classification reference frame.  An embedding is scored against class k by
the dot product with anchor k (cosine similarity when ``normalize`` is on,
which is the default).  Orthogonalization decorrelates anchors of
semantically close classes: the rows are replaced by an orthonormal basis
of their span, computed by QR with a fixed sign convention so results are
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, RankDeficient, ZeroVector

RANK_TOLERANCE = 1e-10
ZERO_NORM_TOLERANCE = 1e-12


def _as_readonly_f64(rows) -> np.ndarray:
    arr = np.array(rows, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RawEmbeddingMatrix:
    """K class-embedding rows of dimension d, as produced by a text encoder."""

    rows: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        rows = _as_readonly_f64(self.rows)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if rows.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D matrix, got shape {rows.shape}")
        k, d = rows.shape
        if k < 2 or d < 1:
            raise DimensionMismatch(f"need K >= 2 and d >= 1, got K={k}, d={d}")
        if len(self.class_names) != k:
            raise DimensionMismatch(
                f"{len(self.class_names)} class names for {k} rows"
            )
        if len(set(self.class_names)) != k:
            raise ValueError("duplicate class names")
        if not np.all(np.isfinite(rows)):
            raise ValueError("embedding rows must be finite")

    @property
    def num_classes(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class AnchorSet:
    """Frozen class anchors t_k.  Immutable; safe for concurrent reads.

    ``normalize_rows`` (the default when building from raw embeddings)
    rescales every row to unit norm so dot-product scores are cosines.
    Orthogonalized sets are already orthonormal and are stored verbatim.
    """

    anchors: np.ndarray
    class_names: tuple[str, ...]
    orthogonalized: bool = False

    def __post_init__(self):
        arr = _as_readonly_f64(self.anchors)
        object.__setattr__(self, "anchors", arr)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if arr.ndim != 2 or arr.shape[0] != len(self.class_names):
            raise DimensionMismatch(
                f"anchor matrix {arr.shape} vs {len(self.class_names)} names"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("anchors must be finite")

    @classmethod
    def from_rows(
        cls,
        rows,
        class_names,
        orthogonalized: bool = False,
        normalize_rows: bool = True,
    ) -> "AnchorSet":
        rows = np.array(rows, dtype=np.float64, copy=True)
        if normalize_rows and not orthogonalized:
            norms = np.linalg.norm(rows, axis=1)
            if np.any(norms < ZERO_NORM_TOLERANCE):
                raise ZeroVector("cannot normalize a zero anchor row")
            rows = rows / norms[:, None]
        return cls(rows, tuple(class_names), orthogonalized)

    @property
    def num_classes(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]


def orthogonalize(raw: RawEmbeddingMatrix) -> AnchorSet:
    """Replace the K rows by an orthonormal basis of their span (QR).

    The i-th output anchor corresponds to the i-th input class.  The sign
    convention (non-negative diagonal of the triangular factor) makes the
    result deterministic.  Requires K <= d and full row rank.
    """
    k, d = raw.rows.shape
    if k > d:
        raise DimensionMismatch(
            f"cannot orthogonalize {k} vectors in dimension {d} (K > d)"
        )
    # QR factors columns; our vectors are rows.
    q, r = np.linalg.qr(raw.rows.T, mode="reduced")
    diag = np.diag(r)
    largest = np.max(np.abs(diag)) if diag.size else 0.0
    if largest == 0.0 or np.min(np.abs(diag)) < RANK_TOLERANCE * largest:
        raise RankDeficient(
            f"numerical rank below {k}: |diag| range "
            f"[{np.min(np.abs(diag)):.3e}, {largest:.3e}]"
        )
    signs = np.where(diag < 0.0, -1.0, 1.0)
    q = q * signs[None, :]
    return AnchorSet(q.T, raw.class_names, orthogonalized=True)


def score(v, k: int, anchors: AnchorSet, normalize: bool = True) -> float:
    """Dot-product score of embedding ``v`` against anchor ``k`` (0-based)."""
    v = np.asarray(v, dtype=np.float64)
    if not 0 <= k < anchors.num_classes:
        raise IndexError(f"class index {k} out of range [0, {anchors.num_classes})")
    if v.shape != (anchors.dim,):
        raise DimensionMismatch(f"vector shape {v.shape}, anchors dim {anchors.dim}")
    if normalize:
        n = np.linalg.norm(v)
        if n < ZERO_NORM_TOLERANCE:
            raise ZeroVector(f"norm {n:.3e} below {ZERO_NORM_TOLERANCE}")
        v = v / n
    return float(v @ anchors.anchors[k])


def score_all(v, anchors: AnchorSet, normalize: bool = True) -> np.ndarray:
    """Scores of ``v`` against every anchor, shape (K,)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (anchors.dim,):
        raise DimensionMismatch(f"vector shape {v.shape}, anchors dim {anchors.dim}")
    if normalize:
        n = np.linalg.norm(v)
        if n < ZERO_NORM_TOLERANCE:
            raise ZeroVector(f"norm {n:.3e} below {ZERO_NORM_TOLERANCE}")
        v = v / n
    return anchors.anchors @ v


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


def class_probabilities(
    v, anchors: AnchorSet, temperature: float = 1.0, normalize: bool = True
) -> np.ndarray:
    """Softmax over anchor scores divided by ``temperature``; sums to 1."""
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    s = score_all(v, anchors, normalize=normalize)
    return softmax(s / temperature)


def gram_matrix(anchors: AnchorSet) -> np.ndarray:
    return anchors.anchors @ anchors.anchors.T

import numpy as np
import pytest

from anchorloc.anchors import AnchorSet, RawEmbeddingMatrix, orthogonalize
from anchorloc.losses import (
    LossWeights,
    image_cls_loss,
    kd_loss,
    patch_cls_loss,
    total_loss,
)
from anchorloc.pseudo import SampledPatchSet


def basis_anchors(k, d=None):
    d = d or k
    return AnchorSet.from_rows(np.eye(d)[:k], [f"c{i}" for i in range(k)], orthogonalized=True)


LN_E_PLUS_2 = float(np.log(np.e + 2.0))


class TestKdLoss:
    def test_empty_foreground_contributes_nothing(self):
        grid = np.random.default_rng(0).normal(size=(2, 2, 3))
        value, grad = kd_loss(grid, [], 1, basis_anchors(3))
        assert value == 0.0
        assert not grad.any()

    def test_aligned_patch_value(self):
        # one FG patch equal to its anchor: scores (1, 0, 0)
        anchors = basis_anchors(3)
        grid = np.zeros((1, 1, 3))
        grid[0, 0] = anchors.anchors[0]
        value, _ = kd_loss(grid, [(0, 0)], 0, anchors)
        assert value == pytest.approx(LN_E_PLUS_2 - 1.0, abs=1e-12)
        assert value == pytest.approx(0.5514, abs=1e-4)

    def test_orthogonal_patch_gives_log_k(self):
        anchors = basis_anchors(3, d=4)
        grid = np.zeros((1, 1, 4))
        grid[0, 0, 3] = 2.0  # orthogonal to every anchor
        value, _ = kd_loss(grid, [(0, 0)], 2, anchors)
        assert value == pytest.approx(np.log(3.0), abs=1e-12)

    def test_sums_over_fg_patches(self):
        anchors = basis_anchors(3)
        grid = np.zeros((2, 2, 3))
        grid[:, :] = anchors.anchors[1]
        value, _ = kd_loss(grid, [(0, 0), (1, 1)], 1, anchors)
        assert value == pytest.approx(2 * (LN_E_PLUS_2 - 1.0), abs=1e-12)
        mean_value, _ = kd_loss(grid, [(0, 0), (1, 1)], 1, anchors, mean=True)
        assert mean_value == pytest.approx(LN_E_PLUS_2 - 1.0, abs=1e-12)

    def test_locality_outside_fg_set(self):
        rng = np.random.default_rng(1)
        anchors = basis_anchors(4, d=6)
        grid = rng.normal(size=(3, 3, 6))
        fg = [(0, 0), (2, 2)]
        value, grad = kd_loss(grid, fg, 1, anchors)
        perturbed = grid.copy()
        perturbed[1, 1] += rng.normal(size=6)
        value2, grad2 = kd_loss(perturbed, fg, 1, anchors)
        assert value2 == value
        np.testing.assert_array_equal(grad2, grad)
        assert not grad[1, 1].any()


class TestPatchClsLoss:
    def test_perfect_prediction_is_near_zero(self):
        sampled = SampledPatchSet([(0, 0), (0, 1)], np.array([1, 0]), (1, 2))
        fg_map = np.array([[1.0, 0.0]])
        value, _ = patch_cls_loss(fg_map, sampled)
        assert 0 <= value <= 2 * -np.log(1 - 1e-7) + 1e-12

    def test_uniform_half_gives_ln2_each(self):
        sampled = SampledPatchSet([(0, 0), (1, 1), (0, 1), (1, 0)], np.array([1, 1, 0, 0]), (2, 2))
        value, _ = patch_cls_loss(np.full((2, 2), 0.5), sampled)
        assert value == pytest.approx(4 * np.log(2.0), abs=1e-12)

    def test_hand_computed_pair(self):
        sampled = SampledPatchSet([(0, 0), (0, 1)], np.array([1, 0]), (1, 2))
        value, _ = patch_cls_loss(np.array([[0.7311, 0.2689]]), sampled)
        assert value == pytest.approx(2 * -np.log(0.7311), abs=1e-9)
        assert value == pytest.approx(0.6265, abs=1e-3)

    def test_locality_outside_sampled_set(self):
        rng = np.random.default_rng(2)
        sampled = SampledPatchSet([(0, 0), (2, 2)], np.array([1, 0]), (3, 3))
        fg_map = rng.random((3, 3))
        value, grad = patch_cls_loss(fg_map, sampled)
        other = fg_map.copy()
        other[1, 1] = rng.random()
        value2, grad2 = patch_cls_loss(other, sampled)
        assert value2 == value
        np.testing.assert_array_equal(grad2, grad)

    def test_saturated_prediction_keeps_finite_value_and_gradient(self):
        sampled = SampledPatchSet([(0, 0), (0, 1)], np.array([1, 0]), (1, 2))
        value, grad = patch_cls_loss(np.array([[1e-12, 1.0]]), sampled)
        assert np.isfinite(value)
        assert value == pytest.approx(2 * -np.log(1e-7), rel=1e-6)
        assert np.all(np.isfinite(grad))
        assert grad[0, 0] < 0 < grad[0, 1]  # restoring directions


class TestImageClsLoss:
    def test_anchor_aligned_embedding(self):
        anchors = basis_anchors(3)
        value, _ = image_cls_loss(anchors.anchors[2] * 7.0, 2, anchors)
        assert value == pytest.approx(LN_E_PLUS_2 - 1.0, abs=1e-12)

    def test_orthogonal_embedding_gives_log_k(self):
        anchors = basis_anchors(3, d=5)
        h = np.zeros(5)
        h[4] = 1.0
        value, _ = image_cls_loss(h, 0, anchors)
        assert value == pytest.approx(np.log(3.0), abs=1e-12)

    def test_strictly_decreasing_in_target_score(self):
        anchors = basis_anchors(4)
        values = []
        for alpha in (0.1, 0.5, 1.0, 2.0, 5.0):
            h = anchors.anchors[1] * alpha + anchors.anchors[0] * 0.3
            values.append(image_cls_loss(h, 1, anchors)[0])
        assert all(b < a for a, b in zip(values, values[1:]))


class TestTotalLoss:
    def make_terms(self, seed=0):
        rng = np.random.default_rng(seed)
        kd = (2.0, rng.normal(size=(2, 2, 3)))
        pcl = (4.0, rng.normal(size=(2, 2)))
        icl = (6.0, rng.normal(size=3))
        return kd, pcl, icl

    def test_single_term_weights(self):
        kd, pcl, icl = self.make_terms()
        breakdown, grads = total_loss(kd, pcl, icl, LossWeights(1.0, 0.0, 0.0))
        assert breakdown.total == kd[0]
        np.testing.assert_array_equal(grads.d_grid, kd[1])
        assert not grads.d_map.any()
        assert not grads.d_h.any()

    def test_weighted_sum(self):
        kd, pcl, icl = self.make_terms()
        breakdown, _ = total_loss(kd, pcl, icl, LossWeights(0.5, 0.5, 0.5))
        assert breakdown.total == pytest.approx(6.0, abs=1e-12)
        assert breakdown.total == pytest.approx(
            0.5 * breakdown.l_kd + 0.5 * breakdown.p_cl + 0.5 * breakdown.i_cl, abs=1e-9
        )

    def test_gradient_linearity(self):
        kd, pcl, icl = self.make_terms(3)
        w = LossWeights(0.3, 0.7, 0.2)
        _, grads = total_loss(kd, pcl, icl, w)
        np.testing.assert_allclose(grads.d_grid, 0.3 * kd[1], atol=1e-15)
        np.testing.assert_allclose(grads.d_map, 0.7 * pcl[1], atol=1e-15)
        np.testing.assert_allclose(grads.d_h, 0.2 * icl[1], atol=1e-15)

    def test_rejects_all_zero_weights(self):
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            LossWeights(-0.1, 1.0, 1.0)


class TestProperties:
    def test_nonnegativity_on_random_instances(self):
        rng = np.random.default_rng(4)
        anchors = orthogonalize(
            RawEmbeddingMatrix(rng.normal(size=(4, 6)), [f"c{i}" for i in range(4)])
        )
        sampled = SampledPatchSet([(0, 0), (1, 1)], np.array([1, 0]), (2, 2))
        for _ in range(50):
            grid = rng.normal(size=(2, 2, 6))
            fg_map = rng.random((2, 2))
            h = rng.normal(size=6)
            y = int(rng.integers(4))
            kd = kd_loss(grid, sampled.fg_locations, y, anchors)
            pcl = patch_cls_loss(fg_map, sampled)
            icl = image_cls_loss(h, y, anchors)
            breakdown, _ = total_loss(kd, pcl, icl, LossWeights(1, 1, 1))
            assert breakdown.l_kd >= 0 and breakdown.p_cl >= 0
            assert breakdown.i_cl >= 0 and breakdown.total >= 0

    def test_class_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        k, d = 5, 7
        rows = rng.normal(size=(k, d))
        names = [f"c{i}" for i in range(k)]
        anchors = orthogonalize(RawEmbeddingMatrix(rows, names))
        perm = rng.permutation(k)
        permuted = AnchorSet(
            anchors.anchors[perm], tuple(names[i] for i in perm), orthogonalized=True
        )
        sampled = SampledPatchSet([(0, 0), (0, 1)], np.array([1, 0]), (1, 2))
        grid = rng.normal(size=(1, 2, d))
        h = rng.normal(size=d)
        y = 3
        y_permuted = int(np.flatnonzero(perm == y)[0])
        assert kd_loss(grid, sampled.fg_locations, y, anchors)[0] == pytest.approx(
            kd_loss(grid, sampled.fg_locations, y_permuted, permuted)[0], abs=1e-12
        )
        assert image_cls_loss(h, y, anchors)[0] == pytest.approx(
            image_cls_loss(h, y_permuted, permuted)[0], abs=1e-12
        )

"""Loss values frozen by hand evaluation plus finite-difference gradients."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planarseg.core import (
    EmbeddingMap,
    ImageGrid,
    InstanceSegmentation,
    PixelPlaneParams,
    PlanarMask,
    PlanarProbabilityMap,
    PlaneInstanceParams,
    PointMap,
    SoftAssignment,
)
from planarseg.losses import (
    Margins,
    balanced_bce,
    central_difference,
    embedding_loss,
    instance_param_loss,
    pixel_param_loss,
    pull_loss,
    push_loss,
    total_loss,
)

GRID = ImageGrid(3, 4)
FD_TOL = 1e-6


def rel_err(analytic, numeric):
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / denom


class TestMargins:
    def test_defaults(self):
        m = Margins()
        assert m.delta_v == 0.5
        assert m.delta_d == 1.5

    def test_ordering_enforced(self):
        with pytest.raises(ValueError, match="delta_d"):
            Margins(delta_v=1.0, delta_d=0.5)

    def test_positive_pull_margin(self):
        with pytest.raises(ValueError, match="delta_v"):
            Margins(delta_v=0.0, delta_d=1.0)


def half_mask():
    return PlanarMask(GRID, np.arange(GRID.n_pixels) < GRID.n_pixels // 2)


class TestBalancedBce:
    def test_perfect_predictions_near_zero(self):
        gt = half_mask()
        probs = PlanarProbabilityMap(GRID, gt.mask.astype(np.float64))
        value, _ = balanced_bce(probs, gt)
        assert 0.0 <= value < 1e-9 * GRID.n_pixels

    def test_uniform_half_probability(self):
        # frozen: |F| = |B|, p = 0.5 everywhere -> 0.5 * N * log 2
        gt = half_mask()
        probs = PlanarProbabilityMap(GRID, np.full(GRID.n_pixels, 0.5))
        value, _ = balanced_bce(probs, gt)
        assert value == pytest.approx(0.5 * GRID.n_pixels * math.log(2.0))

    def test_ratio_mode(self):
        # frozen: |F|=2, |B|=6, p=0.5: 1 * 2 log2 + (2/6) * 6 log2 = 4 log2
        grid = ImageGrid(2, 4)
        gt = PlanarMask(grid, np.arange(8) < 2)
        probs = PlanarProbabilityMap(grid, np.full(8, 0.5))
        value, _ = balanced_bce(probs, gt, weight_mode="ratio")
        assert value == pytest.approx(4.0 * math.log(2.0))

    def test_unknown_mode_rejected(self):
        gt = half_mask()
        probs = PlanarProbabilityMap(GRID, np.full(GRID.n_pixels, 0.5))
        with pytest.raises(ValueError, match="weight_mode"):
            balanced_bce(probs, gt, weight_mode="mean")

    def test_single_class_rejected(self):
        gt = PlanarMask(GRID, np.ones(GRID.n_pixels, dtype=bool))
        probs = PlanarProbabilityMap(GRID, np.full(GRID.n_pixels, 0.5))
        with pytest.raises(ValueError, match="degenerate class balance"):
            balanced_bce(probs, gt)

    def test_grid_mismatch(self):
        probs = PlanarProbabilityMap(ImageGrid(2, 2), np.full(4, 0.5))
        with pytest.raises(ValueError, match="grids"):
            balanced_bce(probs, half_mask())

    @pytest.mark.parametrize("mode", ["fraction", "ratio"])
    def test_gradient_matches_finite_differences(self, mode):
        rng = np.random.default_rng(1)
        gt = half_mask()
        p = rng.uniform(0.05, 0.95, GRID.n_pixels)
        _, grad = balanced_bce(PlanarProbabilityMap(GRID, p), gt, mode)
        fd = central_difference(
            lambda arr: balanced_bce(PlanarProbabilityMap(GRID, arr), gt, mode)[0], p
        )
        assert rel_err(grad, fd) < FD_TOL


def two_cluster_labels():
    labels = np.zeros(GRID.n_pixels, dtype=np.int64)
    labels[:4] = 1
    labels[4:8] = 2
    return InstanceSegmentation(GRID, labels)


class TestPullLoss:
    def test_two_points_straddling_mean(self):
        # frozen: mu = (1,0); each point sits 1.0 away, excess 0.5 -> 0.5
        grid = ImageGrid(1, 2)
        emb = EmbeddingMap(grid, np.array([[0.0, 0.0], [2.0, 0.0]]))
        seg = InstanceSegmentation(grid, np.array([1, 1]))
        value, _ = pull_loss(emb, seg, Margins(0.5, 1.5))
        assert value == pytest.approx(0.5)

    def test_tight_cluster_is_free(self):
        grid = ImageGrid(1, 3)
        emb = EmbeddingMap(grid, np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]]))
        seg = InstanceSegmentation(grid, np.array([1, 1, 1]))
        value, grad = pull_loss(emb, seg)
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_averages_over_instances(self):
        # frozen: instance 1 contributes 0.5, instance 2 is tight -> 0.25
        grid = ImageGrid(1, 4)
        emb = EmbeddingMap(
            grid, np.array([[0.0, 0.0], [2.0, 0.0], [5.0, 5.0], [5.0, 5.0]])
        )
        seg = InstanceSegmentation(grid, np.array([1, 1, 2, 2]))
        value, _ = pull_loss(emb, seg)
        assert value == pytest.approx(0.25)

    def test_unlabeled_pixels_ignored(self):
        grid = ImageGrid(1, 3)
        emb = EmbeddingMap(grid, np.array([[0.0, 0.0], [2.0, 0.0], [99.0, 99.0]]))
        seg = InstanceSegmentation(grid, np.array([1, 1, 0]))
        value, grad = pull_loss(emb, seg)
        assert value == pytest.approx(0.5)
        np.testing.assert_array_equal(grad[2], 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        seg = two_cluster_labels()
        x = rng.normal(0.0, 2.0, (GRID.n_pixels, 2))
        _, grad = pull_loss(EmbeddingMap(GRID, x), seg)
        fd = central_difference(
            lambda arr: pull_loss(EmbeddingMap(GRID, arr), seg)[0], x
        )
        assert rel_err(grad, fd) < FD_TOL

    def test_translation_invariant_value(self):
        rng = np.random.default_rng(3)
        seg = two_cluster_labels()
        x = rng.normal(size=(GRID.n_pixels, 2))
        base, _ = pull_loss(EmbeddingMap(GRID, x), seg)
        moved, _ = pull_loss(EmbeddingMap(GRID, x + np.array([7.0, -3.0])), seg)
        assert moved == pytest.approx(base, abs=1e-12)


class TestPushLoss:
    def test_single_instance_is_zero(self):
        grid = ImageGrid(1, 2)
        emb = EmbeddingMap(grid, np.array([[0.0, 0.0], [9.0, 9.0]]))
        seg = InstanceSegmentation(grid, np.array([1, 1]))
        value, grad = push_loss(emb, seg)
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_two_centers_inside_margin(self):
        # frozen: centers 1.0 apart, delta_d = 1.5, ordered pairs -> 0.5
        grid = ImageGrid(1, 2)
        emb = EmbeddingMap(grid, np.array([[0.0, 0.0], [1.0, 0.0]]))
        seg = InstanceSegmentation(grid, np.array([1, 2]))
        value, _ = push_loss(emb, seg, Margins(0.5, 1.5))
        assert value == pytest.approx(0.5)

    def test_separated_centers_are_free(self):
        grid = ImageGrid(1, 2)
        emb = EmbeddingMap(grid, np.array([[0.0, 0.0], [5.0, 0.0]]))
        seg = InstanceSegmentation(grid, np.array([1, 2]))
        value, grad = push_loss(emb, seg)
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_three_centers_hand_value(self):
        # frozen: pair gaps 1.0, 1.0, 2.0 under delta_d=1.5 give shorts
        # 0.5, 0.5, 0; 2 * (0.5 + 0.5) / (3 * 2) = 1/3
        grid = ImageGrid(1, 3)
        emb = EmbeddingMap(grid, np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))
        seg = InstanceSegmentation(grid, np.array([1, 2, 3]))
        value, _ = push_loss(emb, seg)
        assert value == pytest.approx(1.0 / 3.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        seg = two_cluster_labels()
        x = rng.normal(0.0, 0.3, (GRID.n_pixels, 2))
        _, grad = push_loss(EmbeddingMap(GRID, x), seg)
        fd = central_difference(
            lambda arr: push_loss(EmbeddingMap(GRID, arr), seg)[0], x
        )
        assert rel_err(grad, fd) < FD_TOL


class TestEmbeddingLoss:
    def test_equals_sum_of_parts(self):
        rng = np.random.default_rng(5)
        seg = two_cluster_labels()
        x = rng.normal(size=(GRID.n_pixels, 2))
        emb = EmbeddingMap(GRID, x)
        v, g = embedding_loss(emb, seg)
        v_pull, g_pull = pull_loss(emb, seg)
        v_push, g_push = push_loss(emb, seg)
        assert v == v_pull + v_push
        np.testing.assert_array_equal(g, g_pull + g_push)

    def test_separated_tight_clusters_are_free(self):
        grid = ImageGrid(1, 4)
        emb = EmbeddingMap(
            grid, np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [5.1, 0.0]])
        )
        seg = InstanceSegmentation(grid, np.array([1, 1, 2, 2]))
        value, grad = embedding_loss(emb, seg)
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)


class TestPixelParamLoss:
    def test_exact_match_is_zero(self):
        params = PixelPlaneParams(GRID, np.ones((GRID.n_pixels, 3)))
        value, grad = pixel_param_loss(params, params, half_mask())
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_single_pixel_offset(self):
        # frozen: one masked pixel off by (0.3, 0, 0.4) -> norm 0.5
        grid = ImageGrid(1, 2)
        gt = PixelPlaneParams(grid, np.zeros((2, 3)))
        pred = PixelPlaneParams(grid, np.array([[0.3, 0.0, 0.4], [9.0, 9.0, 9.0]]))
        mask = PlanarMask(grid, np.array([True, False]))
        value, grad = pixel_param_loss(pred, gt, mask)
        assert value == pytest.approx(0.5)
        np.testing.assert_array_equal(grad[1], 0.0)

    def test_averages_over_masked_pixels_only(self):
        # frozen: offsets of norm 0.5 and 1.0 over N=2 -> 0.75
        grid = ImageGrid(1, 3)
        gt = PixelPlaneParams(grid, np.zeros((3, 3)))
        pred = PixelPlaneParams(
            grid, np.array([[0.3, 0.0, 0.4], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]])
        )
        mask = PlanarMask(grid, np.array([True, True, False]))
        value, _ = pixel_param_loss(pred, gt, mask)
        assert value == pytest.approx(0.75)

    def test_empty_mask_is_zero(self):
        params = PixelPlaneParams(GRID, np.ones((GRID.n_pixels, 3)))
        mask = PlanarMask(GRID, np.zeros(GRID.n_pixels, dtype=bool))
        value, grad = pixel_param_loss(params, params, mask)
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        gt = PixelPlaneParams(GRID, rng.normal(size=(GRID.n_pixels, 3)))
        pred_arr = rng.normal(size=(GRID.n_pixels, 3))
        mask = half_mask()
        _, grad = pixel_param_loss(PixelPlaneParams(GRID, pred_arr), gt, mask)
        fd = central_difference(
            lambda arr: pixel_param_loss(PixelPlaneParams(GRID, arr), gt, mask)[0],
            pred_arr,
        )
        assert rel_err(grad, fd) < FD_TOL


def assignment_fixture():
    grid = ImageGrid(1, 2)
    points = PointMap(grid, np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]]))
    weights = np.array([[1.0, 0.0], [0.0, 1.0]])
    return grid, points, SoftAssignment(grid, weights)


class TestInstanceParamLoss:
    def test_single_pixel_unit_residual(self):
        # frozen: Q = (0,0,2), n = (0,0,1) -> |2 - 1| / (1 * 1) = 1
        grid = ImageGrid(1, 1)
        points = PointMap(grid, np.array([[0.0, 0.0, 2.0]]))
        sa = SoftAssignment(grid, np.array([[1.0]]))
        value, _ = instance_param_loss(
            PlaneInstanceParams(np.array([[0.0, 0.0, 1.0]])), sa, points
        )
        assert value == pytest.approx(1.0)

    def test_on_plane_params_are_free(self):
        grid, points, sa = assignment_fixture()
        params = PlaneInstanceParams(np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 1.0]]))
        value, grad = instance_param_loss(params, sa, points)
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_soft_weights_hand_value(self):
        # frozen: residuals 1 and -0.5 at weight 0.5 -> (0.5 + 0.25) / 2
        grid = ImageGrid(1, 1)
        points = PointMap(grid, np.array([[0.0, 0.0, 2.0]]))
        sa = SoftAssignment(grid, np.array([[0.5, 0.5]]))
        params = PlaneInstanceParams(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.25]]))
        value, _ = instance_param_loss(params, sa, points)
        assert value == pytest.approx(0.375)

    def test_cluster_count_mismatch(self):
        grid, points, sa = assignment_fixture()
        with pytest.raises(ValueError, match="cluster counts"):
            instance_param_loss(
                PlaneInstanceParams(np.array([[0.0, 0.0, 1.0]])), sa, points
            )

    def test_assigned_invalid_point_rejected(self):
        grid = ImageGrid(1, 2)
        points = PointMap(
            grid,
            np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 0.0]]),
            np.array([True, False]),
        )
        sa = SoftAssignment(grid, np.array([[1.0], [1.0]]))
        with pytest.raises(ValueError, match="valid points"):
            instance_param_loss(
                PlaneInstanceParams(np.array([[0.0, 0.0, 1.0]])), sa, points
            )

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        grid = ImageGrid(2, 3)
        pts = rng.normal(size=(6, 3)) + np.array([0.0, 0.0, 3.0])
        points = PointMap(grid, pts)
        raw = rng.uniform(0.1, 1.0, (6, 2))
        sa = SoftAssignment(grid, raw / raw.sum(axis=1, keepdims=True))
        params_arr = rng.normal(0.0, 0.4, (2, 3)) + np.array([0.0, 0.0, 0.5])
        _, grad = instance_param_loss(PlaneInstanceParams(params_arr), sa, points)
        fd = central_difference(
            lambda arr: instance_param_loss(PlaneInstanceParams(arr), sa, points)[0],
            params_arr,
        )
        assert rel_err(grad, fd) < FD_TOL


def total_loss_inputs(seed=0):
    rng = np.random.default_rng(seed)
    grid = ImageGrid(2, 4)
    n = grid.n_pixels
    gt_mask = PlanarMask(grid, np.arange(n) < 6)
    probs = PlanarProbabilityMap(grid, rng.uniform(0.1, 0.9, n))
    labels = np.where(np.arange(n) < 3, 1, np.where(np.arange(n) < 6, 2, 0))
    seg = InstanceSegmentation(grid, labels)
    emb = EmbeddingMap(grid, rng.normal(size=(n, 2)))
    pred_pp = PixelPlaneParams(grid, rng.normal(size=(n, 3)))
    gt_pp = PixelPlaneParams(grid, rng.normal(size=(n, 3)))
    points = PointMap(grid, rng.normal(size=(n, 3)) + np.array([0, 0, 3.0]))
    raw = rng.uniform(0.1, 1.0, (n, 2))
    sa = SoftAssignment(grid, raw / raw.sum(axis=1, keepdims=True))
    inst = PlaneInstanceParams(rng.normal(0.0, 0.4, (2, 3)))
    return probs, gt_mask, emb, seg, pred_pp, gt_pp, inst, sa, points


class TestTotalLoss:
    def test_matches_component_calls(self):
        probs, gt_mask, emb, seg, pred_pp, gt_pp, inst, sa, points = (
            total_loss_inputs()
        )
        report = total_loss(
            probs, gt_mask, emb, seg, pred_pp, gt_pp, inst, sa, points
        )
        assert report.l_s == balanced_bce(probs, gt_mask)[0]
        assert report.l_pull == pull_loss(emb, seg)[0]
        assert report.l_push == push_loss(emb, seg)[0]
        assert report.l_pp == pixel_param_loss(pred_pp, gt_pp, gt_mask)[0]
        assert report.l_ip == instance_param_loss(inst, sa, points)[0]
        assert report.total == pytest.approx(
            report.l_s + report.l_e + report.l_pp + report.l_ip, abs=1e-15
        )

    def test_perfect_inputs_give_zero_components(self):
        grid = ImageGrid(2, 3)
        n = grid.n_pixels
        gt_mask = PlanarMask(grid, np.arange(n) < 4)
        probs = PlanarProbabilityMap(grid, gt_mask.mask.astype(np.float64))
        labels = np.where(np.arange(n) < 2, 1, np.where(np.arange(n) < 4, 2, 0))
        seg = InstanceSegmentation(grid, labels)
        emb_arr = np.zeros((n, 2))
        emb_arr[labels == 2] = [5.0, 0.0]
        emb = EmbeddingMap(grid, emb_arr)
        pp = PixelPlaneParams(grid, np.tile([0.0, 0.0, 0.5], (n, 1)))
        points = PointMap(grid, np.tile([0.0, 0.0, 2.0], (n, 1)))
        weights = np.zeros((n, 2))
        weights[labels == 1, 0] = 1.0
        weights[labels == 2, 1] = 1.0
        sa = SoftAssignment(grid, weights)
        inst = PlaneInstanceParams(np.tile([0.0, 0.0, 0.5], (2, 1)))
        report = total_loss(probs, gt_mask, emb, seg, pp, pp, inst, sa, points)
        assert report.l_pull == 0.0
        assert report.l_push == 0.0
        assert report.l_pp == 0.0
        assert report.l_ip == 0.0
        assert report.total == pytest.approx(report.l_s)
        assert report.l_s < 1e-9

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_every_component_nonnegative(self, seed):
        report = total_loss(*total_loss_inputs(seed))
        for value in (
            report.l_s,
            report.l_pull,
            report.l_push,
            report.l_pp,
            report.l_ip,
        ):
            assert value >= 0.0


class TestCentralDifference:
    def test_quadratic_gradient(self):
        x = np.array([1.0, -2.0, 3.0])
        fd = central_difference(lambda a: float((a**2).sum()), x)
        np.testing.assert_allclose(fd, 2.0 * x, atol=1e-8)

    def test_matrix_input_shape(self):
        x = np.arange(6, dtype=np.float64).reshape(2, 3)
        fd = central_difference(lambda a: float(a.sum()), x)
        assert fd.shape == (2, 3)
        np.testing.assert_allclose(fd, 1.0, atol=1e-9)

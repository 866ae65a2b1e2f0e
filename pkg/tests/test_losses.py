import numpy as np
import pytest

from geomeval import (
    LossConfig,
    Pointmap,
    Pose,
    Trajectory,
    camera_loss,
    compose,
    distill_loss,
    geodesic_angle,
    gradient_loss,
    normal_loss,
    pointmap_loss,
    pointmap_normals,
    relative_pose,
    scale_loss,
    scene_norm,
    total_loss,
)
from geomeval.errors import DegenerateInputError, EmptyOverlapError, ShapeMismatchError
from geomeval.losses import LAPLACE, SCHARR_X, SCHARR_Y

from conftest import random_pointmap, random_pose, random_trajectory, rng_for
from test_alignment import grid_search_scale


def scaled(maps, a):
    return [Pointmap(pm.points * a, pm.mask, pm.frame_index) for pm in maps]


def brute_force_pointmap_loss(pred, gt):
    """Line-by-line evaluation: normalize both scenes by their mean
    distance-to-origin, find the L1-optimal scale by dense grid search,
    and average the per-pixel L1 residual."""
    np_hat = scene_norm(pred)
    np_ref = scene_norm(gt)
    pred_n = scaled(pred, 1.0 / np_hat)
    gt_n = scaled(gt, 1.0 / np_ref)
    s = grid_search_scale(pred_n, gt_n, lo=1e-2, hi=1e2, n=200_000)
    num, cnt = 0.0, 0
    for pp, gp in zip(pred_n, gt_n):
        m = pp.mask & gp.mask
        num += np.abs(s * pp.points[m] - gp.points[m]).sum()
        cnt += m.sum()
    return num / cnt


class TestPointmapLoss:
    def test_zero_on_equal(self, rng):
        maps = [random_pointmap(rng, frame_index=i) for i in range(2)]
        assert pointmap_loss(maps, maps) == 0.0

    def test_scale_absorbed(self, rng):
        gt = [random_pointmap(rng, frame_index=i) for i in range(2)]
        assert pointmap_loss(scaled(gt, 3.0), gt) == pytest.approx(0.0, abs=1e-9)

    def test_matches_brute_force(self):
        rng = rng_for(42)
        gt = [random_pointmap(rng, 8, 8, i) for i in range(2)]
        pred = [Pointmap(pm.points + np.array([0.0, 0.0, 0.1]), pm.mask, pm.frame_index)
                for pm in scaled(gt, 1.0 / scene_norm(gt))]
        gt_unit = scaled(gt, 1.0 / scene_norm(gt))
        ours = pointmap_loss(pred, gt_unit)
        oracle = brute_force_pointmap_loss(pred, gt_unit)
        assert ours == pytest.approx(oracle, abs=1e-6)

    def test_prediction_scaling_invariance(self, rng):
        gt = [random_pointmap(rng, frame_index=i) for i in range(2)]
        pred = [Pointmap(pm.points + rng.normal(0, 0.1, pm.points.shape),
                         pm.mask, pm.frame_index) for pm in gt]
        base = pointmap_loss(pred, gt)
        for a in (0.2, 5.0):
            assert pointmap_loss(scaled(pred, a), gt) == pytest.approx(base, abs=1e-9)

    def test_frame_permutation_consistency(self, rng):
        gt = [random_pointmap(rng, frame_index=i) for i in range(3)]
        pred = [Pointmap(pm.points * 1.1 + 0.05, pm.mask, pm.frame_index) for pm in gt]
        perm = [2, 0, 1]
        assert pointmap_loss([pred[i] for i in perm], [gt[i] for i in perm]) == \
            pytest.approx(pointmap_loss(pred, gt), abs=1e-12)

    def test_empty_overlap(self, rng):
        pm = random_pointmap(rng)
        empty = Pointmap(pm.points, np.zeros(pm.mask.shape, dtype=bool))
        with pytest.raises(EmptyOverlapError):
            pointmap_loss([empty], [pm])


class TestCameraLoss:
    def test_zero_on_equal(self, rng):
        t = random_trajectory(rng, 4)
        assert camera_loss(t, t) == pytest.approx(0.0, abs=1e-9)

    def test_global_rigid_gauge(self, rng):
        gt = random_trajectory(rng, 4)
        w = random_pose(rng)
        pred = Trajectory(tuple(compose(w, g) for g in gt.poses))
        assert camera_loss(pred, gt) == pytest.approx(0.0, abs=1e-9)

    def test_independent_gauges(self, rng):
        gt = random_trajectory(rng, 4)
        pred = random_trajectory(rng, 4)
        base = camera_loss(pred, gt)
        w1, w2 = random_pose(rng), random_pose(rng)
        pred_g = Trajectory(tuple(compose(w1, g) for g in pred.poses))
        gt_g = Trajectory(tuple(compose(w2, g) for g in gt.poses))
        assert camera_loss(pred_g, gt_g) == pytest.approx(base, abs=1e-9)

    def test_hand_expanded_three_frames(self, rng):
        gt = random_trajectory(rng, 3)
        poses = list(gt.poses)
        poses[1] = random_pose(rng)
        pred = Trajectory(tuple(poses))
        lr, lt = 1.0, 2.0
        total = 0.0
        for u in range(3):
            for v in range(3):
                if u == v:
                    continue
                a = relative_pose(pred.poses[u], pred.poses[v])
                b = relative_pose(gt.poses[u], gt.poses[v])
                total += lr * geodesic_angle(a.rotation, b.rotation)
                total += lt * np.abs(a.translation - b.translation).sum()
        assert camera_loss(pred, gt, lr, lt) == pytest.approx(total / 6.0, abs=1e-9)

    def test_frame_order_reversal(self, rng):
        gt = random_trajectory(rng, 4)
        pred = random_trajectory(rng, 4)
        rev = slice(None, None, -1)
        assert camera_loss(Trajectory(pred.poses[rev]), Trajectory(gt.poses[rev])) == \
            pytest.approx(camera_loss(pred, gt), abs=1e-12)

    def test_length_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            camera_loss(random_trajectory(rng, 3), random_trajectory(rng, 4))


class TestScaleLoss:
    def test_zero_on_equal(self, rng):
        maps = [random_pointmap(rng)]
        assert scale_loss(1.0, maps, maps) == pytest.approx(0.0, abs=1e-9)

    def test_exact_metric_recovery(self, rng):
        gt = [random_pointmap(rng, frame_index=i) for i in range(2)]
        for a in (0.3, 4.0):
            pred = scaled(gt, 1.0 / a)
            assert scale_loss(a, pred, gt) == pytest.approx(0.0, abs=1e-9)

    def test_log_distance_of_factor_e(self, rng):
        gt = [random_pointmap(rng)]
        pred = scaled(gt, 1.0 / 2.5)
        assert scale_loss(np.e * 2.5, pred, gt) == pytest.approx(1.0, abs=1e-9)

    def test_nonpositive_scale(self, rng):
        maps = [random_pointmap(rng)]
        with pytest.raises(DegenerateInputError):
            scale_loss(0.0, maps, maps)


class TestNormalLoss:
    def test_zero_on_equal(self, rng):
        maps = [random_pointmap(rng)]
        assert normal_loss(maps, maps) == pytest.approx(0.0, abs=1e-6)

    def test_tilted_vs_frontal_plane(self):
        h = w = 16
        jj, ii = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        x = (jj - w / 2) * 0.1
        y = (ii - h / 2) * 0.1
        frontal = Pointmap(np.stack([x, y, np.full_like(x, 5.0)], axis=-1),
                           np.ones((h, w), dtype=bool))
        tilted = Pointmap(np.stack([x, y, 5.0 - x], axis=-1),
                          np.ones((h, w), dtype=bool))
        assert normal_loss([tilted], [frontal]) == pytest.approx(np.pi / 4, abs=1e-9)

    def test_matches_per_pixel_oracle(self, rng):
        pred = [random_pointmap(rng, 12, 12)]
        gt = [random_pointmap(rng, 12, 12)]
        n1, v1 = pointmap_normals(pred[0])
        n2, v2 = pointmap_normals(gt[0])
        both = v1 & v2
        oracle = np.mean([np.arccos(np.clip(np.dot(a, b), -1, 1))
                          for a, b in zip(n1[both], n2[both])])
        assert normal_loss(pred, gt) == pytest.approx(oracle, abs=1e-9)

    def test_range(self, rng):
        v = normal_loss([random_pointmap(rng)], [random_pointmap(rng)])
        assert 0.0 <= v <= np.pi


class TestGradientLoss:
    def test_zero_on_equal(self, rng):
        maps = [random_pointmap(rng, 16, 16)]
        assert gradient_loss(maps, maps) == 0.0

    def test_constant_offset_invariance(self):
        # prediction whose inverse depth differs from gt by a constant:
        # every filter annihilates constants
        h = w = 16
        jj, ii = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        z = 4.0 + 0.3 * np.sin(ii / 2) + 0.2 * np.cos(jj / 3)
        gt = Pointmap(np.stack([jj * 0.1, ii * 0.1, z], axis=-1),
                      np.ones((h, w), dtype=bool))
        nrm = scene_norm([gt])
        inv_shift = nrm / z + 0.25
        z2 = nrm / inv_shift
        pred = Pointmap(np.stack([jj * 0.1, ii * 0.1, z2], axis=-1),
                        np.ones((h, w), dtype=bool))
        assert gradient_loss([pred], [gt], scales=(1,)) == pytest.approx(0.0, abs=1e-9)

    def test_step_edge_matches_hand_convolution(self):
        h = w = 12
        jj, ii = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        z_gt = np.full((h, w), 4.0)
        gt = Pointmap(np.stack([jj * 0.1, ii * 0.1, z_gt], axis=-1),
                      np.ones((h, w), dtype=bool))
        nrm = scene_norm([gt])
        inv_gt = nrm / z_gt
        inv_pred = inv_gt.copy()
        inv_pred[:, 6:] += 0.4  # step edge in inverse depth
        z_pred = nrm / inv_pred
        pred = Pointmap(np.stack([jj * 0.1, ii * 0.1, z_pred], axis=-1),
                        np.ones((h, w), dtype=bool))
        diff = inv_pred - inv_gt
        acc = 0.0
        for k in (SCHARR_X, SCHARR_Y, LAPLACE):
            for i in range(h - 2):
                for j in range(w - 2):
                    acc += abs((k * diff[i:i + 3, j:j + 3]).sum())
        oracle = acc / (3 * (h - 2) * (w - 2))
        assert gradient_loss([pred], [gt], scales=(1,)) == pytest.approx(oracle, abs=1e-9)

    def test_bad_scales_rejected(self, rng):
        maps = [random_pointmap(rng)]
        with pytest.raises(DegenerateInputError):
            gradient_loss(maps, maps, scales=(3,))


class TestDistillLoss:
    def test_zero_on_match(self, rng):
        teacher = rng.normal(size=(2, 3, 3, 8))
        assert distill_loss(teacher, teacher, np.eye(8)) == pytest.approx(0.0, abs=1e-12)

    def test_antipodal(self, rng):
        teacher = rng.normal(size=(2, 3, 3, 8))
        assert distill_loss(-teacher, teacher, np.eye(8)) == pytest.approx(2.0, abs=1e-12)

    def test_matches_per_token_oracle(self, rng):
        student = rng.normal(size=(2, 4, 4, 6))
        proj = rng.normal(size=(6, 10))
        teacher = rng.normal(size=(2, 4, 4, 10))
        p = (student @ proj).reshape(-1, 10)
        t = teacher.reshape(-1, 10)
        sims = [np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
                for a, b in zip(p, t)]
        assert distill_loss(student, teacher, proj) == pytest.approx(1 - np.mean(sims), abs=1e-9)

    def test_zero_vector_token(self):
        student = np.zeros((1, 1, 2, 4))
        teacher = np.ones((1, 1, 2, 4))
        assert distill_loss(student, teacher, np.eye(4)) == pytest.approx(1.0)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            distill_loss(rng.normal(size=(1, 2, 2, 4)),
                         rng.normal(size=(1, 2, 3, 4)), np.eye(4))

    def test_range(self, rng):
        v = distill_loss(rng.normal(size=(1, 4, 4, 8)),
                         rng.normal(size=(1, 4, 4, 8)), np.eye(8))
        assert 0.0 <= v <= 2.0


class TestTotalLoss:
    def test_all_zero(self):
        r = total_loss({k: 0.0 for k in ("pm", "cam", "trans", "rot", "scale",
                                         "normal", "gradient", "distill")})
        assert r.total == 0.0

    def test_single_term(self):
        r = total_loss({"trans": 1.0})
        assert r.total == pytest.approx(100.0)
        assert r.weighted["trans"] == pytest.approx(100.0)

    def test_default_weights_sum(self):
        # 1 + 0.1 + 100 + 1 + 1 + 1 + 0.1 + 0.5
        terms = {k: 1.0 for k in ("pm", "cam", "trans", "rot", "scale",
                                  "normal", "gradient", "distill")}
        assert total_loss(terms).total == pytest.approx(104.7)

    def test_total_consistency(self, rng):
        terms = {"pm": 0.3, "normal": 1.2, "gradient": 0.05}
        cfg = LossConfig()
        r = total_loss(terms, cfg)
        assert r.total == pytest.approx(sum(r.weighted.values()), abs=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(DegenerateInputError):
            total_loss({"pm": np.inf})

    def test_unknown_term_rejected(self):
        with pytest.raises(DegenerateInputError):
            total_loss({"bogus": 1.0})

    def test_negative_weight_rejected(self):
        with pytest.raises(DegenerateInputError):
            LossConfig(lambda_pm=-1.0)

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from geomeval import (
    Pointmap,
    Pose,
    compose,
    geodesic_angle,
    pointmap_normals,
    pointmap_to_inverse_depth,
    pose_inverse,
    relative_pose,
    rot9d_to_rotation,
    scene_norm,
)
from geomeval.errors import DegenerateInputError, EmptyOverlapError

from conftest import random_pointmap, random_pose, random_rotation, rng_for


class TestRot9d:
    def test_identity(self):
        assert np.allclose(rot9d_to_rotation(np.eye(3)), np.eye(3), atol=1e-12)

    def test_uniform_scaling_removed(self):
        assert np.allclose(rot9d_to_rotation(2 * np.eye(3)), np.eye(3), atol=1e-12)

    def test_idempotent_on_rotations(self, rng):
        for _ in range(20):
            r = random_rotation(rng)
            assert np.allclose(rot9d_to_rotation(r), r, atol=1e-12)

    def test_positive_scaling_invariance(self, rng):
        m = rng.normal(size=(3, 3))
        r = rot9d_to_rotation(m)
        for a in (0.01, 0.5, 7.0):
            assert np.allclose(rot9d_to_rotation(a * m), r, atol=1e-12)

    def test_nearest_rotation_monte_carlo(self):
        # the decoded rotation must beat 10,000 random rotations in
        # Frobenius distance to the input
        rng = rng_for(7)
        m = np.eye(3) + 0.3 * rng.normal(size=(3, 3))
        assert np.linalg.cond(m) < 10
        r = rot9d_to_rotation(m)
        d_best = np.linalg.norm(r - m)
        qs = Rotation.random(10_000, random_state=0).as_matrix()
        d_rand = np.linalg.norm(qs - m, axis=(1, 2))
        assert (d_best <= d_rand + 1e-12).all()

    def test_output_is_rotation(self, rng):
        r = rot9d_to_rotation(rng.normal(size=(3, 3)))
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(r), 1.0, atol=1e-12)

    def test_nonfinite_rejected(self):
        m = np.eye(3)
        m[0, 0] = np.nan
        with pytest.raises(DegenerateInputError):
            rot9d_to_rotation(m)


class TestPoseOps:
    def test_inverse_identity(self):
        g = pose_inverse(Pose.identity())
        assert np.allclose(g.rotation, np.eye(3))
        assert np.allclose(g.translation, 0)

    def test_inverse_pure_translation(self):
        g = pose_inverse(Pose(np.eye(3), [1.0, -2.0, 3.0]))
        assert np.allclose(g.translation, [-1.0, 2.0, -3.0])

    def test_inverse_composition(self, rng):
        for _ in range(10):
            g = random_pose(rng)
            gi = compose(g, pose_inverse(g))
            assert np.allclose(gi.rotation, np.eye(3), atol=1e-12)
            assert np.allclose(gi.translation, 0, atol=1e-12)

    def test_relative_pose_same(self, rng):
        g = random_pose(rng)
        r = relative_pose(g, g)
        assert np.allclose(r.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(r.translation, 0, atol=1e-12)

    def test_relative_pose_identity_base(self, rng):
        g = random_pose(rng)
        r = relative_pose(Pose.identity(), g)
        assert np.allclose(r.rotation, g.rotation)
        assert np.allclose(r.translation, g.translation)

    def test_relative_pose_composition_oracle(self, rng):
        for _ in range(10):
            gu, gv = random_pose(rng), random_pose(rng)
            guv = relative_pose(gu, gv)
            back = compose(gu, guv)
            assert np.allclose(back.rotation, gv.rotation, atol=1e-12)
            assert np.allclose(back.translation, gv.translation, atol=1e-12)


class TestGeodesicAngle:
    def test_zero_on_equal(self, rng):
        r = random_rotation(rng)
        assert geodesic_angle(r, r) == pytest.approx(0.0, abs=1e-7)

    def test_axis_angle_about_z(self):
        r = Rotation.from_rotvec([0, 0, 0.3]).as_matrix()
        assert geodesic_angle(np.eye(3), r) == pytest.approx(0.3, abs=1e-12)

    def test_matches_log_map_oracle(self, rng):
        for _ in range(20):
            r1, r2 = random_rotation(rng), random_rotation(rng)
            oracle = np.linalg.norm(Rotation.from_matrix(r1.T @ r2).as_rotvec())
            assert geodesic_angle(r1, r2) == pytest.approx(oracle, abs=1e-9)

    def test_symmetry_and_triangle_inequality(self, rng):
        for _ in range(30):
            a, b, c = (random_rotation(rng) for _ in range(3))
            assert geodesic_angle(a, b) == pytest.approx(geodesic_angle(b, a), abs=1e-9)
            assert geodesic_angle(a, c) <= geodesic_angle(a, b) + geodesic_angle(b, c) + 1e-9


class TestSceneNorm:
    def test_single_point(self):
        pts = np.zeros((2, 2, 3))
        mask = np.zeros((2, 2), dtype=bool)
        pts[0, 0] = [0, 0, 2]
        mask[0, 0] = True
        assert scene_norm([Pointmap(pts, mask)]) == pytest.approx(2.0)

    def test_arithmetic_mean(self):
        pts = np.zeros((2, 2, 3))
        mask = np.zeros((2, 2), dtype=bool)
        pts[0, 0] = [1, 0, 0]
        pts[0, 1] = [0, 3, 0]
        mask[0, :] = True
        assert scene_norm([Pointmap(pts, mask)]) == pytest.approx(2.0)

    def test_homogeneity(self, rng):
        maps = [random_pointmap(rng, frame_index=i) for i in range(3)]
        base = scene_norm(maps)
        for a in (0.1, 2.5, 40.0):
            scaled = [Pointmap(pm.points * a, pm.mask, pm.frame_index) for pm in maps]
            assert scene_norm(scaled) == pytest.approx(a * base, rel=1e-12)

    def test_empty_mask_error(self):
        pm = Pointmap(np.zeros((2, 2, 3)), np.zeros((2, 2), dtype=bool))
        with pytest.raises(EmptyOverlapError):
            scene_norm([pm])


def _grid_pointmap(fn, h=16, w=16):
    jj, ii = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    x = (jj - w / 2) * 0.1
    y = (ii - h / 2) * 0.1
    z = fn(x, y)
    return Pointmap(np.stack([x, y, z], axis=-1), np.ones((h, w), dtype=bool))


class TestPointmapNormals:
    def test_frontal_plane(self):
        pm = _grid_pointmap(lambda x, y: np.full_like(x, 5.0))
        n, v = pointmap_normals(pm)
        assert v[:-1, :-1].all() and not v[-1].any() and not v[:, -1].any()
        assert np.allclose(n[v], [0, 0, -1], atol=1e-12)

    def test_tilted_plane_45deg(self):
        pm = _grid_pointmap(lambda x, y: 5.0 - x)  # x + z = 5
        n, v = pointmap_normals(pm)
        expect = np.array([-1, 0, -1]) / np.sqrt(2)
        assert np.allclose(n[v], expect, atol=1e-12)

    def test_sphere_patch_analytic(self):
        # front patch of a sphere centered at (0, 0, 5), radius 2
        h = w = 64
        jj, ii = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        x = (jj - w / 2) / w * 2.0
        y = (ii - h / 2) / h * 2.0
        z = 5.0 - np.sqrt(4.0 - x ** 2 - y ** 2)
        pm = Pointmap(np.stack([x, y, z], axis=-1), np.ones((h, w), dtype=bool))
        n, v = pointmap_normals(pm)
        center = np.array([0, 0, 5.0])
        analytic = (pm.points - center) / np.linalg.norm(pm.points - center, axis=-1, keepdims=True)
        dots = np.clip(np.abs(np.sum(n[v] * analytic[v], axis=-1)), -1, 1)
        assert np.degrees(np.arccos(dots)).max() < 2.0

    def test_unit_length(self, rng):
        pm = random_pointmap(rng, 12, 12)
        n, v = pointmap_normals(pm)
        assert np.allclose(np.linalg.norm(n[v], axis=-1), 1.0, atol=1e-9)

    def test_invalid_source_masks_normal(self):
        pm0 = _grid_pointmap(lambda x, y: np.full_like(x, 5.0))
        mask = pm0.mask.copy()
        mask[3, 4] = False
        n, v = pointmap_normals(Pointmap(pm0.points, mask))
        # every stencil touching (3, 4) is invalidated; (2, 3) is untouched
        assert not v[3, 4] and not v[3, 3] and not v[2, 4] and v[2, 3]


class TestInverseDepth:
    def test_constant_depth(self):
        pm = _grid_pointmap(lambda x, y: np.full_like(x, 2.0))
        d, v = pointmap_to_inverse_depth(pm, 1.0)
        assert v.all()
        assert np.allclose(d, 0.5)

    def test_canonical_unit(self):
        pm = _grid_pointmap(lambda x, y: np.full_like(x, 3.7))
        d, v = pointmap_to_inverse_depth(pm, 3.7)
        assert np.allclose(d, 1.0)

    def test_inversion_identity(self, rng):
        pm = random_pointmap(rng)
        d, v = pointmap_to_inverse_depth(pm, 2.3)
        z = pm.points[..., 2]
        assert np.allclose(d[v] * z[v], 2.3, atol=1e-12)

    def test_nonpositive_depth_masked(self):
        pts = np.ones((2, 2, 3))
        pts[0, 0, 2] = 0.0
        d, v = pointmap_to_inverse_depth(Pointmap(pts, np.ones((2, 2), dtype=bool)), 1.0)
        assert not v[0, 0] and v[1, 1]

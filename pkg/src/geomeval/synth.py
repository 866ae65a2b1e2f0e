"""Deterministic synthetic scenes: analytic surfaces ray-cast from known
camera trajectories, plus reproducible corruption.

All randomness flows through the Philox counter-based generator (64-bit,
splittable via keys), so a given seed reproduces byte-identical scenes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError
from .geometry import Pointmap, Pose, Sim3, Trajectory, compose

SURFACES = ("plane", "tilted_plane", "sphere_patch", "two_plane_step", "smooth_random")
TRAJECTORIES = ("static", "orbit", "random_walk")

_FOV_DEG = 60.0
_BASE_DEPTH = 4.0  # surface stand-off before metric scaling


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_frames: int = 4
    resolution: tuple = (32, 32)
    surface: str = "plane"
    trajectory: str = "static"
    metric_scale: float = 1.0

    def __post_init__(self):
        if self.n_frames < 1:
            raise DegenerateInputError("n_frames must be >= 1")
        h, w = self.resolution
        if h < 4 or w < 4:
            raise DegenerateInputError("resolution must be at least 4x4")
        if self.surface not in SURFACES:
            raise DegenerateInputError(f"unknown surface '{self.surface}'")
        if self.trajectory not in TRAJECTORIES:
            raise DegenerateInputError(f"unknown trajectory '{self.trajectory}'")
        if not self.metric_scale > 0:
            raise DegenerateInputError("metric_scale must be positive")


@dataclass(frozen=True)
class Corruption:
    gaussian_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_magnitude: float = 100.0
    global_sim3: Sim3 = None
    jitter_rot: float = 0.0     # radians, per-frame pose jitter
    jitter_trans: float = 0.0   # meters

    def __post_init__(self):
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise DegenerateInputError("outlier_fraction must be in [0, 1)")


@dataclass
class SceneData:
    pointmaps: list                 # list[Pointmap]
    depths: list                    # list[np.ndarray], z of each pointmap
    trajectory: Trajectory
    metric_scale: float
    outlier_masks: list = field(default_factory=list)  # set by corrupt()


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def _ray_dirs(h: int, w: int) -> np.ndarray:
    """Per-pixel camera-frame ray directions (u, v, 1); z equals z-depth."""
    f = 0.5 * max(h, w) / np.tan(np.radians(_FOV_DEG) / 2.0)
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    u = (jj + 0.5 - w / 2.0) / f
    v = (ii + 0.5 - h / 2.0) / f
    return np.stack([u, v, np.ones_like(u)], axis=-1)


def _look_at(position, target, up=(0.0, -1.0, 0.0)) -> Pose:
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    z = z / np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), position)


def _trajectory(spec: SceneSpec, rng: np.random.Generator) -> Trajectory:
    n, ms = spec.n_frames, spec.metric_scale
    center = np.array([0.0, 0.0, _BASE_DEPTH * ms])
    if spec.trajectory == "static":
        poses = [Pose.identity() for _ in range(n)]
    elif spec.trajectory == "orbit":
        radius = 0.5 * ms
        poses = []
        for k in range(n):
            th = 2.0 * np.pi * k / n
            pos = np.array([radius * np.cos(th), radius * np.sin(th), 0.0])
            poses.append(_look_at(pos, center))
    else:  # random_walk
        poses = [Pose.identity()]
        for _ in range(n - 1):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            ang = abs(rng.normal(0.0, np.radians(3.0)))
            step_r = _axis_angle(axis, ang)
            step_t = rng.normal(0.0, 0.05 * ms, size=3)
            prev = poses[-1]
            poses.append(Pose(prev.rotation @ step_r, prev.translation + step_t))
    return Trajectory(tuple(poses))


def _axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    kx, ky, kz = axis
    k_mat = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    return np.eye(3) + np.sin(angle) * k_mat + (1 - np.cos(angle)) * k_mat @ k_mat


class _Surface:
    """Analytic world surface supporting vectorized ray intersection."""

    def __init__(self, spec: SceneSpec, rng: np.random.Generator):
        self.kind = spec.surface
        self.ms = spec.metric_scale
        z0 = _BASE_DEPTH * self.ms
        if self.kind == "smooth_random":
            # gentle heightfield: sum of sinusoids with total slope < 0.5,
            # keeping the ray equation monotone for bisection
            self.amps = rng.uniform(0.05, 0.12, size=4) * self.ms
            self.freqs = rng.uniform(0.5, 1.5, size=(4, 2)) / self.ms
            self.phases = rng.uniform(0.0, 2.0 * np.pi, size=4)
        self.z0 = z0

    def _height(self, x, y):
        z = np.full_like(x, self.z0)
        for a, (fx, fy), ph in zip(self.amps, self.freqs, self.phases):
            z = z + a * np.sin(fx * x + fy * y + ph)
        return z

    def intersect(self, origins, dirs):
        """Ray-surface intersection; returns (s, valid) with s the z-depth
        parameter (X = o + s * d, d the unnormalized (u, v, 1) direction
        rotated to world)."""
        o, d = origins, dirs
        if self.kind in ("plane", "tilted_plane"):
            if self.kind == "plane":
                n = np.array([0.0, 0.0, 1.0])
                c = self.z0
            else:
                n = np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0)
                c = self.z0 / np.sqrt(2.0)
            denom = d @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (c - o @ n) / denom
            valid = (np.abs(denom) > 1e-12) & (s > 1e-6)
            return s, valid
        if self.kind == "sphere_patch":
            center = np.array([0.0, 0.0, self.z0])
            radius = 0.45 * self.z0
            oc = o - center
            a = np.sum(d * d, axis=-1)
            b = 2.0 * np.sum(d * oc, axis=-1)
            c0 = np.sum(oc * oc, axis=-1) - radius ** 2
            disc = b * b - 4 * a * c0
            valid = disc >= 0
            s = np.full(a.shape, np.nan)
            sq = np.sqrt(np.where(valid, disc, 0.0))
            s_near = (-b - sq) / (2 * a)
            s[valid] = s_near[valid]
            valid = valid & (s > 1e-6)
            return s, valid
        if self.kind == "two_plane_step":
            z1, z2 = self.z0, 1.5 * self.z0
            s1 = (z1 - o[..., 2]) / d[..., 2]
            s2 = (z2 - o[..., 2]) / d[..., 2]
            x1 = o[..., 0] + s1 * d[..., 0]
            x2 = o[..., 0] + s2 * d[..., 0]
            ok1 = (s1 > 1e-6) & (x1 < 0)
            ok2 = (s2 > 1e-6) & (x2 >= 0)
            s = np.where(ok1, s1, np.where(ok2, s2, np.nan))
            return s, ok1 | ok2
        # smooth_random: g(s) = o_z + s d_z - height(...) is monotone in s
        # by the amplitude/frequency bounds; bisection to ~1e-13
        lo = np.full(d.shape[:-1], 1e-3)
        hi = np.full(d.shape[:-1], 3.0 * self.z0)
        def g(s):
            x = o[..., 0] + s * d[..., 0]
            y = o[..., 1] + s * d[..., 1]
            return o[..., 2] + s * d[..., 2] - self._height(x, y)
        valid = (g(lo) < 0) & (g(hi) > 0)
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            neg = g(mid) < 0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        return 0.5 * (lo + hi), valid


def generate(spec: SceneSpec) -> SceneData:
    """Render the analytic surface from every camera of the trajectory.

    Outputs are exactly self-consistent: depth equals the z channel of
    each pointmap, and unprojected world points agree across views up to
    the ray-cast tolerance.
    """
    rng = _rng(spec.seed)
    surface = _Surface(spec, rng)
    trajectory = _trajectory(spec, rng)
    h, w = spec.resolution
    dirs_cam = _ray_dirs(h, w)

    pointmaps, depths = [], []
    for k, pose in enumerate(trajectory.poses):
        dirs_world = dirs_cam @ pose.rotation.T
        origins = np.broadcast_to(pose.translation, dirs_world.shape)
        s, valid = surface.intersect(origins, dirs_world)
        s = np.where(valid, s, 1.0)
        points = dirs_cam * s[..., None]   # camera frame; z-depth = s
        valid = valid & (points[..., 2] > 0)
        points = np.where(valid[..., None], points, 0.0)
        pointmaps.append(Pointmap(points, valid, frame_index=k))
        depths.append(points[..., 2].copy())
    return SceneData(pointmaps=pointmaps, depths=depths,
                     trajectory=trajectory, metric_scale=spec.metric_scale)


def corrupt(data: SceneData, c: Corruption, seed: int = 0) -> SceneData:
    """Apply a world gauge, noise, outliers, and pose jitter, reproducibly.

    A global Sim3 gauge W transforms the world: poses become W o g (the
    gauge scale enters their translations) and camera-frame pointmaps are
    scaled by W's scale. Gaussian noise and outliers then perturb the
    points; exactly floor(outlier_fraction * n_valid) pixels per frame are
    flagged in the returned outlier masks.
    """
    rng = _rng(seed)
    pointmaps = [Pointmap(pm.points.copy(), pm.mask.copy(), pm.frame_index)
                 for pm in data.pointmaps]
    poses = list(data.trajectory.poses)

    if c.global_sim3 is not None:
        g = c.global_sim3
        pointmaps = [Pointmap(pm.points * g.scale, pm.mask, pm.frame_index)
                     for pm in pointmaps]
        poses = [Pose(g.rotation @ p.rotation,
                      g.scale * g.rotation @ p.translation + g.translation)
                 for p in poses]

    if c.jitter_rot > 0 or c.jitter_trans > 0:
        jittered = []
        for p in poses:
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            dr = _axis_angle(axis, rng.normal(0.0, c.jitter_rot)) \
                if c.jitter_rot > 0 else np.eye(3)
            dt = rng.normal(0.0, c.jitter_trans, size=3) \
                if c.jitter_trans > 0 else np.zeros(3)
            jittered.append(compose(Pose(dr, dt), p))
        poses = jittered

    outlier_masks = []
    out_maps = []
    for pm in pointmaps:
        pts = pm.points.copy()
        if c.gaussian_sigma > 0:
            noise = rng.normal(0.0, c.gaussian_sigma, size=pts.shape)
            pts = np.where(pm.mask[..., None], pts + noise, pts)
        omask = np.zeros(pm.mask.shape, dtype=bool)
        if c.outlier_fraction > 0:
            valid_idx = np.flatnonzero(pm.mask.ravel())
            n_out = int(np.floor(c.outlier_fraction * len(valid_idx)))
            if n_out:
                chosen = rng.choice(valid_idx, size=n_out, replace=False)
                flat = pts.reshape(-1, 3)
                flat[chosen] *= c.outlier_magnitude
                pts = flat.reshape(pts.shape)
                omask.ravel()[chosen] = True
        out_maps.append(Pointmap(pts, pm.mask, pm.frame_index))
        outlier_masks.append(omask)

    depths = [pm.points[..., 2].copy() for pm in out_maps]
    return SceneData(pointmaps=out_maps, depths=depths,
                     trajectory=Trajectory(tuple(poses),
                                           data.trajectory.frame_indices),
                     metric_scale=data.metric_scale,
                     outlier_masks=outlier_masks)

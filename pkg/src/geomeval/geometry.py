"""Core 3D types and closed-form geometry operations.

Conventions:
  - Poses are camera-to-world SE(3) transforms.
  - Relative pose between views u and v is g_uv = g_u^-1 o g_v.
  - Pointmaps live in each camera's local frame, z looking forward (z > 0
    for visible surface points).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, EmptyOverlapError, ShapeMismatchError

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Pointmap:
    """H x W grid of 3D points in the camera frame with a validity mask."""

    points: np.ndarray  # (H, W, 3) float64
    mask: np.ndarray    # (H, W) bool
    frame_index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        msk = np.asarray(self.mask, dtype=bool)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ShapeMismatchError(f"points must be (H, W, 3), got {pts.shape}")
        if msk.shape != pts.shape[:2]:
            raise ShapeMismatchError("mask shape does not match points")
        if pts.shape[0] < 2 or pts.shape[1] < 2:
            raise DegenerateInputError("pointmap must be at least 2x2")
        if msk.any() and not np.isfinite(pts[msk]).all():
            raise DegenerateInputError("masked-valid points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "mask", msk)

    @property
    def shape(self):
        return self.points.shape[:2]

    def valid_points(self) -> np.ndarray:
        """Flat (M, 3) array of the masked-valid points."""
        return self.points[self.mask]


def _check_rotation(r: np.ndarray, what: str = "rotation") -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ShapeMismatchError(f"{what} must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=1e-8):
        raise DegenerateInputError(f"{what} is not orthonormal")
    if not np.isclose(np.linalg.det(r), 1.0, atol=1e-8):
        raise DegenerateInputError(f"{what} has det != +1")
    return r


@dataclass(frozen=True)
class Pose:
    """SE(3) camera-to-world transform."""

    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = _check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Sim3:
    """Similarity transform: p -> scale * R @ p + t."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise DegenerateInputError("Sim3 scale must be positive and finite")
        r = _check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Sim3":
        return Sim3(1.0, np.eye(3), np.zeros(3))

    @staticmethod
    def from_pose(g: Pose) -> "Sim3":
        return Sim3(1.0, g.rotation, g.translation)


@dataclass(frozen=True)
class Trajectory:
    """Ordered camera poses with strictly increasing frame indices."""

    poses: tuple
    frame_indices: tuple = field(default=None)

    def __post_init__(self):
        poses = tuple(self.poses)
        if self.frame_indices is None:
            idx = tuple(range(len(poses)))
        else:
            idx = tuple(int(i) for i in self.frame_indices)
        if len(idx) != len(poses):
            raise ShapeMismatchError("frame_indices length must match poses")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DegenerateInputError("frame_indices must be strictly increasing")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "frame_indices", idx)

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        """(N, 3) array of camera centers."""
        return np.array([g.translation for g in self.poses])


def compose(g1: Pose, g2: Pose) -> Pose:
    """g1 o g2: applies g2 first, then g1."""
    return Pose(g1.rotation @ g2.rotation,
                g1.rotation @ g2.translation + g1.translation)


def pose_inverse(g: Pose) -> Pose:
    rt = g.rotation.T
    return Pose(rt, -rt @ g.translation)


def relative_pose(g_u: Pose, g_v: Pose) -> Pose:
    """g_uv = g_u^-1 o g_v, mapping view v's frame into view u's frame."""
    return compose(pose_inverse(g_u), g_v)


def rot9d_to_rotation(m: np.ndarray) -> np.ndarray:
    """Decode a free 3x3 matrix into the Frobenius-nearest proper rotation.

    SVD projection: m = U S V^T  ->  U diag(1, 1, det(U V^T)) V^T.
    Ties between singular values are broken by the SVD's deterministic
    descending ordering.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ShapeMismatchError(f"expected 3x3 matrix, got {m.shape}")
    if not np.isfinite(m).all():
        raise DegenerateInputError("matrix entries must be finite")
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def geodesic_angle(r1: np.ndarray, r2: np.ndarray) -> float:
    """Rotation angle of r1^T r2, in [0, pi]."""
    r1 = _check_rotation(r1, "r1")
    r2 = _check_rotation(r2, "r2")
    q = r1.T @ r2
    c = (np.trace(q) - 1.0) / 2.0
    # sin from the skew-symmetric part; atan2 keeps full precision near 0
    # and pi, unlike a bare arccos of the trace
    s = np.linalg.norm(q - q.T) / (2.0 * np.sqrt(2.0))
    return float(np.arctan2(s, c))


def scene_norm(pointmaps) -> float:
    """Mean distance-to-origin over all valid points of all frames."""
    dists = []
    for pm in pointmaps:
        pts = pm.valid_points()
        if len(pts):
            dists.append(np.linalg.norm(pts, axis=1))
    if not dists:
        raise EmptyOverlapError("no valid point in any frame")
    return float(np.concatenate(dists).mean())


def pointmap_normals(p: Pointmap):
    """Per-pixel surface normals from forward-difference cross products.

    normal(i,j) = normalize(cross(p[i,j+1]-p[i,j], p[i+1,j]-p[i,j])),
    flipped to face the camera (normal . (-p) >= 0). The last row and
    column have no forward neighbors and are invalid; so is any pixel whose
    stencil touches an invalid point or whose cross product is near zero.

    Returns (normals, valid) with shapes (H, W, 3) and (H, W).
    """
    pts, msk = p.points, p.mask
    h, w = pts.shape[:2]
    normals = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)

    dx = pts[:-1, 1:] - pts[:-1, :-1]   # p[i,j+1] - p[i,j]
    dy = pts[1:, :-1] - pts[:-1, :-1]   # p[i+1,j] - p[i,j]
    n = np.cross(dx, dy)
    norm = np.linalg.norm(n, axis=2)
    ok = msk[:-1, :-1] & msk[:-1, 1:] & msk[1:, :-1] & (norm > 1e-12)

    with np.errstate(invalid="ignore", divide="ignore"):
        n = n / norm[..., None]
    # orient toward the camera at the origin
    flip = np.sum(n * pts[:-1, :-1], axis=2) > 0
    n[flip] = -n[flip]

    normals[:-1, :-1][ok] = n[ok]
    valid[:-1, :-1] = ok
    return normals, valid


def pointmap_to_inverse_depth(p: Pointmap, normalizer: float):
    """Canonical inverse depth normalizer / z; z <= 1e-9 pixels are masked.

    Returns (inv_depth, valid) grids.
    """
    if not normalizer > 0:
        raise DegenerateInputError("normalizer must be positive")
    z = p.points[..., 2]
    valid = p.mask & (z > 1e-9)
    inv = np.zeros_like(z)
    inv[valid] = normalizer / z[valid]
    return inv, valid

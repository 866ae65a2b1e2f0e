"""Registration solvers: robust scale, affine depth alignment, Umeyama, ICP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateInputError,
    EmptyOverlapError,
    NoCorrespondenceError,
    ShapeMismatchError,
)
from .geometry import Pose, Sim3, compose

_COORD_EPS = 1e-9


@dataclass(frozen=True)
class AffineAlign:
    """Shared scale/shift fitted to depth (or inverse depth)."""

    scale: float
    shift: float


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-8   # change of mean residual
    max_correspondence_dist: float = np.inf

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DegenerateInputError("max_iterations must be >= 1")
        if not self.convergence_tol > 0 or not self.max_correspondence_dist > 0:
            raise DegenerateInputError("tolerances must be positive")


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Exact minimizer of sum_i w_i |x - v_i| (lower weighted median)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptyOverlapError("weighted_median of empty input")
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    csum = np.cumsum(w)
    idx = int(np.searchsorted(csum, 0.5 * csum[-1]))
    return float(v[min(idx, len(v) - 1)])


def _stack_valid(pred_maps, gt_maps):
    pred, gt = [], []
    for pp, gp in zip(pred_maps, gt_maps):
        if pp.shape != gp.shape:
            raise ShapeMismatchError("pred/gt pointmap shapes differ")
        both = pp.mask & gp.mask
        pred.append(pp.points[both])
        gt.append(gp.points[both])
    if len(pred_maps) != len(gt_maps):
        raise ShapeMismatchError("pred/gt frame counts differ")
    pred = np.concatenate(pred) if pred else np.zeros((0, 3))
    gt = np.concatenate(gt) if gt else np.zeros((0, 3))
    if len(pred) == 0:
        raise EmptyOverlapError("no jointly valid pixel")
    return pred, gt


def roe_scale(pred, gt) -> float:
    """Scale s minimizing sum |s * pred - gt|_1 over jointly valid pixels.

    The objective is piecewise linear in s, so the exact minimizer is the
    weighted median of per-coordinate ratios gt_c / pred_c with weights
    |pred_c|, over coordinates with |pred_c| > 1e-9.
    """
    p, g = _stack_valid(pred, gt)
    p, g = p.ravel(), g.ravel()
    use = np.abs(p) > _COORD_EPS
    if not use.any():
        raise DegenerateInputError("all predicted coordinates are zero")
    return weighted_median(g[use] / p[use], np.abs(p[use]))


def affine_align_depth(pred_depth, gt_depth, robust: bool = False,
                       irls_iterations: int = 50) -> AffineAlign:
    """Shared (scale, shift) aligning predicted depth to ground truth.

    robust=False solves least squares; robust=True minimizes the L1
    objective via iteratively reweighted least squares with weight
    w = 1 / max(|residual|, 1e-6).

    Inputs are lists of (grid, mask) pairs or plain grids (fully valid).
    """
    xs, ys = [], []
    for pd, gd in zip(pred_depth, gt_depth):
        pg, pm = _grid_and_mask(pd)
        gg, gm = _grid_and_mask(gd)
        if pg.shape != gg.shape:
            raise ShapeMismatchError("pred/gt depth shapes differ")
        both = pm & gm
        xs.append(pg[both])
        ys.append(gg[both])
    x = np.concatenate(xs) if xs else np.zeros(0)
    y = np.concatenate(ys) if ys else np.zeros(0)
    if len(x) < 2:
        raise EmptyOverlapError("need at least 2 jointly valid pixels")
    if np.ptp(x) < 1e-12:
        raise DegenerateInputError("all predicted depths equal; affine fit is rank-deficient")

    a_mat = np.stack([x, np.ones_like(x)], axis=1)
    sol, *_ = np.linalg.lstsq(a_mat, y, rcond=None)
    if robust:
        for _ in range(irls_iterations):
            r = a_mat @ sol - y
            w = 1.0 / np.maximum(np.abs(r), 1e-6)
            aw = a_mat * w[:, None]
            sol = np.linalg.solve(a_mat.T @ aw, aw.T @ y)
    return AffineAlign(scale=float(sol[0]), shift=float(sol[1]))


def _grid_and_mask(d):
    if isinstance(d, tuple):
        grid, mask = d
        return np.asarray(grid, dtype=np.float64), np.asarray(mask, dtype=bool)
    grid = np.asarray(d, dtype=np.float64)
    return grid, np.ones(grid.shape, dtype=bool)


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool = True) -> Sim3:
    """Closed-form least-squares similarity (or rigid) transform src -> dst.

    Reflections are prevented by the determinant-correction diagonal.
    Raises when the source covariance has rank < 2.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ShapeMismatchError("src/dst must be matching (N, 3) arrays")
    n = len(src)
    if n < 3:
        raise DegenerateInputError("need at least 3 correspondences")

    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cs = src - mu_s
    cd = dst - mu_d
    var_s = (cs ** 2).sum() / n
    cov = cd.T @ cs / n

    src_sv = np.linalg.svd(cs, compute_uv=False)
    if src_sv[0] == 0 or (src_sv > src_sv[0] * 1e-9).sum() < 2:
        raise DegenerateInputError("source points are (near) collinear")

    u, d, vt = np.linalg.svd(cov)
    s_fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2] = -1.0
    rot = u @ np.diag(s_fix) @ vt
    scale = float((d * s_fix).sum() / var_s) if with_scale else 1.0
    if scale <= 0:
        raise DegenerateInputError("recovered scale is nonpositive")
    t = mu_d - scale * rot @ mu_s
    return Sim3(scale, rot, t)


def apply_sim3(t: Sim3, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return t.scale * pts @ t.rotation.T + t.translation


def compose_sim3(t1: Sim3, t2: Sim3) -> Sim3:
    """(t1 o t2)(p) = t1(t2(p))."""
    return Sim3(t1.scale * t2.scale,
                t1.rotation @ t2.rotation,
                t1.scale * t1.rotation @ t2.translation + t1.translation)


def sim3_inverse(t: Sim3) -> Sim3:
    rt = t.rotation.T
    return Sim3(1.0 / t.scale, rt, -rt @ t.translation / t.scale)


@dataclass(frozen=True)
class IcpResult:
    refinement: Pose          # rigid correction; total = refinement o init
    residuals: tuple          # accepted mean residuals, non-increasing
    iterations: int


def icp_refine(src: np.ndarray, dst: np.ndarray, init, cfg: IcpConfig) -> IcpResult:
    """Point-to-point ICP refining a rough initial alignment.

    init may be a Pose or a Sim3 (its scale is kept fixed; only a rigid
    correction is estimated). Nearest neighbors come from a KD-tree over
    dst; pairs farther than cfg.max_correspondence_dist are dropped. The
    accepted mean-residual sequence is non-increasing: an update that
    would raise the residual is rejected and iteration stops.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    init_sim3 = init if isinstance(init, Sim3) else Sim3.from_pose(init)
    pts = apply_sim3(init_sim3, src)
    tree = cKDTree(dst)

    refine = Pose.identity()
    residuals = []
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        dist, idx = tree.query(pts)
        sel = dist <= cfg.max_correspondence_dist
        if not sel.any():
            if it == 1:
                raise NoCorrespondenceError(
                    "no pair within max_correspondence_dist at first iteration")
            break
        res = float(dist[sel].mean())
        if residuals and res > residuals[-1]:
            # reject the last update's correspondences; keep previous state
            break
        residuals.append(res)
        if len(residuals) >= 2 and residuals[-2] - residuals[-1] < cfg.convergence_tol:
            break
        if res == 0.0:
            break
        step = umeyama(pts[sel], dst[idx[sel]], with_scale=False)
        step_pose = Pose(step.rotation, step.translation)
        refine = compose(step_pose, refine)
        pts = step_pose.apply(pts)

    return IcpResult(refinement=refine, residuals=tuple(residuals), iterations=it)

"""Evaluation metrics: pointmap/depth accuracy, boundary sharpness,
trajectory errors, and reconstruction quality."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree
from skimage.feature import canny

from .alignment import apply_sim3, umeyama
from .errors import (
    DegenerateInputError,
    EmptyOverlapError,
    InsufficientPointsError,
    NoEdgesError,
    ShapeMismatchError,
)
from .geometry import Trajectory, geodesic_angle, relative_pose

DEFAULT_F1_THRESHOLDS = (1.05, 1.10, 1.15, 1.20, 1.25)


@dataclass(frozen=True)
class PointmapMetrics:
    rel_p: float    # mean relative point error, percent
    delta_p: float  # inlier ratio, percent


@dataclass(frozen=True)
class BoundaryMetrics:
    f1: float
    pdbe_acc: float
    pdbe_comp: float
    pdbe_chamfer: float


@dataclass(frozen=True)
class TrajectoryMetrics:
    ate: float    # meters, RMSE
    rpe_t: float  # meters
    rpe_r: float  # degrees


@dataclass(frozen=True)
class ReconMetrics:
    acc: float
    comp: float
    nc: float


def _stack_pairs(pred, gt):
    if len(pred) != len(gt):
        raise ShapeMismatchError("pred/gt frame counts differ")
    ps, gs = [], []
    for pp, gp in zip(pred, gt):
        if pp.shape != gp.shape:
            raise ShapeMismatchError("pred/gt pointmap shapes differ")
        both = pp.mask & gp.mask
        ps.append(pp.points[both])
        gs.append(gp.points[both])
    p = np.concatenate(ps) if ps else np.zeros((0, 3))
    g = np.concatenate(gs) if gs else np.zeros((0, 3))
    if len(p) == 0:
        raise EmptyOverlapError("no jointly valid pixel")
    return p, g


def pointmap_metrics(pred, gt, tau: float = 0.25) -> PointmapMetrics:
    """Rel^p (percent) and inlier ratio delta^p (percent) at threshold tau.

    Alignment is the caller's responsibility. Pixels with near-zero
    ground-truth norm are excluded.
    """
    p, g = _stack_pairs(pred, gt)
    gn = np.linalg.norm(g, axis=1)
    keep = gn > 1e-9
    if not keep.any():
        raise EmptyOverlapError("all ground-truth points at the origin")
    p, g, gn = p[keep], g[keep], gn[keep]
    err = np.linalg.norm(p - g, axis=1)
    rel = float((err / gn).mean() * 100.0)
    pn = np.linalg.norm(p, axis=1)
    delta = float((err / np.minimum(gn, pn) < tau).mean() * 100.0)
    return PointmapMetrics(rel_p=rel, delta_p=delta)


def depth_metrics(pred_depth, gt_depth, tau: float = 0.25):
    """(rel_d, delta_d) in percent, scalar analogue of pointmap_metrics.

    Inputs are lists of (grid, mask) pairs or plain grids.
    """
    from .alignment import _grid_and_mask
    ps, gs = [], []
    for pd, gd in zip(pred_depth, gt_depth):
        pg, pm = _grid_and_mask(pd)
        gg, gm = _grid_and_mask(gd)
        if pg.shape != gg.shape:
            raise ShapeMismatchError("pred/gt depth shapes differ")
        both = pm & gm
        ps.append(pg[both])
        gs.append(gg[both])
    p = np.concatenate(ps) if ps else np.zeros(0)
    g = np.concatenate(gs) if gs else np.zeros(0)
    keep = np.abs(g) > 1e-9
    if not keep.any():
        raise EmptyOverlapError("no jointly valid pixel with nonzero gt depth")
    p, g = p[keep], g[keep]
    err = np.abs(p - g)
    rel = float((err / np.abs(g)).mean() * 100.0)
    delta = float((err / np.minimum(np.abs(g), np.abs(p)) < tau).mean() * 100.0)
    return rel, delta


def _contour_pairs(depth, threshold):
    d = np.asarray(depth, dtype=np.float64)
    eps = 1e-12
    h = np.maximum(d[:, 1:], d[:, :-1]) / np.maximum(np.minimum(d[:, 1:], d[:, :-1]), eps)
    v = np.maximum(d[1:, :], d[:-1, :]) / np.maximum(np.minimum(d[1:, :], d[:-1, :]), eps)
    return h > threshold, v > threshold


def boundary_f1(pred_depth, gt_depth,
                ratio_thresholds=DEFAULT_F1_THRESHOLDS) -> float:
    """Occluding-contour F1 averaged over depth-ratio thresholds.

    A horizontally/vertically adjacent pixel pair is a contour when the
    larger-over-smaller depth ratio exceeds the threshold. F1 is the
    harmonic mean of contour precision and recall; a threshold with no
    contours on either side contributes 0.
    """
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatchError("pred/gt depth shapes differ")
    if pred.shape[0] < 2 or pred.shape[1] < 2:
        raise DegenerateInputError("depth maps must be at least 2x2")
    scores = []
    for t in ratio_thresholds:
        ph, pv = _contour_pairs(pred, t)
        gh, gv = _contour_pairs(gt, t)
        inter = int((ph & gh).sum() + (pv & gv).sum())
        n_pred = int(ph.sum() + pv.sum())
        n_gt = int(gh.sum() + gv.sum())
        prec = inter / n_pred if n_pred else 0.0
        rec = inter / n_gt if n_gt else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0)
    return float(np.mean(scores))


def depth_edges(depth, canny_low: float = 0.1, canny_high: float = 0.2,
                sigma_blur: float = 1.0) -> np.ndarray:
    """Canny edges of the [0,1]-normalized inverse-depth map."""
    d = np.asarray(depth, dtype=np.float64)
    inv = 1.0 / np.maximum(d, 1e-9)
    lo, hi = inv.min(), inv.max()
    if hi - lo < 1e-15:
        return np.zeros(d.shape, dtype=bool)
    norm = (inv - lo) / (hi - lo)
    return canny(norm, sigma=sigma_blur,
                 low_threshold=canny_low, high_threshold=canny_high)


def pdbe(pred_depth, gt_depth, canny_low: float = 0.1,
         canny_high: float = 0.2, sigma_blur: float = 1.0):
    """Pseudo depth boundary error: (acc, comp, chamfer) in pixels.

    acc is the mean distance from each predicted edge pixel to the nearest
    ground-truth edge pixel, comp the symmetric counterpart, chamfer their
    average. Distances come from exact Euclidean distance transforms.
    """
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatchError("pred/gt depth shapes differ")
    e_pred = depth_edges(pred, canny_low, canny_high, sigma_blur)
    e_gt = depth_edges(gt, canny_low, canny_high, sigma_blur)
    if not e_pred.any() or not e_gt.any():
        raise NoEdgesError("a depth map yielded zero edge pixels")
    acc = float(distance_transform_edt(~e_gt)[e_pred].mean())
    comp = float(distance_transform_edt(~e_pred)[e_gt].mean())
    return acc, comp, (acc + comp) / 2.0


def boundary_metrics(pred_depth, gt_depth,
                     ratio_thresholds=DEFAULT_F1_THRESHOLDS,
                     canny_low: float = 0.1, canny_high: float = 0.2,
                     sigma_blur: float = 1.0) -> BoundaryMetrics:
    f1 = boundary_f1(pred_depth, gt_depth, ratio_thresholds)
    acc, comp, chamfer = pdbe(pred_depth, gt_depth, canny_low, canny_high, sigma_blur)
    return BoundaryMetrics(f1=f1, pdbe_acc=acc, pdbe_comp=comp, pdbe_chamfer=chamfer)


def _check_trajectories(pred: Trajectory, gt: Trajectory, min_len: int):
    if len(pred) != len(gt):
        raise ShapeMismatchError("trajectory lengths differ")
    if len(pred) < min_len:
        raise DegenerateInputError(f"need at least {min_len} poses")


def ate(pred: Trajectory, gt: Trajectory) -> float:
    """RMSE of camera positions after a single Sim(3) alignment."""
    _check_trajectories(pred, gt, 3)
    t = umeyama(pred.positions(), gt.positions(), with_scale=True)
    aligned = apply_sim3(t, pred.positions())
    return float(np.sqrt(((aligned - gt.positions()) ** 2).sum(axis=1).mean()))


def rpe(pred: Trajectory, gt: Trajectory, delta: int = 1):
    """(rpe_t meters, rpe_r degrees) over frame intervals of length delta.

    The predicted trajectory is pre-scaled by the ATE Sim(3) scale so
    translation errors are in ground-truth units; relative motions are
    otherwise gauge-free.
    """
    _check_trajectories(pred, gt, 2)
    if not 1 <= delta < len(pred):
        raise DegenerateInputError("need length > delta >= 1")
    try:
        s = umeyama(pred.positions(), gt.positions(), with_scale=True).scale
    except DegenerateInputError:
        s = 1.0  # collinear positions: keep predicted units
    t_err, r_err = [], []
    for i in range(len(pred) - delta):
        m_hat = relative_pose(pred.poses[i], pred.poses[i + delta])
        m_ref = relative_pose(gt.poses[i], gt.poses[i + delta])
        e_rot = m_ref.rotation.T @ m_hat.rotation
        e_trans = m_ref.rotation.T @ (s * m_hat.translation - m_ref.translation)
        t_err.append(np.linalg.norm(e_trans) ** 2)
        r_err.append(geodesic_angle(np.eye(3), e_rot) ** 2)
    rpe_t = float(np.sqrt(np.mean(t_err)))
    rpe_r = float(np.degrees(np.sqrt(np.mean(r_err))))
    return rpe_t, rpe_r


def estimate_normals(points: np.ndarray, k: int = 20,
                     viewpoint=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Per-point normals from PCA over the k nearest neighbors, oriented
    toward the given viewpoint."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < k + 1:
        raise InsufficientPointsError(f"need at least {k + 1} points")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    normals = np.empty_like(pts)
    vp = np.asarray(viewpoint, dtype=np.float64)
    for i in range(len(pts)):
        nb = pts[idx[i]]
        cov = np.cov(nb.T)
        w, v = np.linalg.eigh(cov)
        n = v[:, 0]
        if np.dot(n, vp - pts[i]) < 0:
            n = -n
        normals[i] = n
    return normals


def recon_metrics(pred_cloud: np.ndarray, gt_cloud: np.ndarray,
                  k_normals: int = 20,
                  viewpoint=(0.0, 0.0, 0.0)) -> ReconMetrics:
    """Accuracy, completeness, and normal consistency of a reconstruction.

    acc: mean nearest-neighbor distance pred -> gt; comp: gt -> pred;
    nc: mean |n_pred . n_gt| over mutually nearest pairs. Alignment is the
    caller's responsibility.
    """
    pred = np.asarray(pred_cloud, dtype=np.float64)
    gt = np.asarray(gt_cloud, dtype=np.float64)
    if len(pred) < k_normals + 1 or len(gt) < k_normals + 1:
        raise InsufficientPointsError(f"need at least {k_normals + 1} points per cloud")
    tree_gt = cKDTree(gt)
    tree_pred = cKDTree(pred)
    d_pg, nn_pg = tree_gt.query(pred)
    d_gp, nn_gp = tree_pred.query(gt)
    acc = float(d_pg.mean())
    comp = float(d_gp.mean())

    mutual = np.flatnonzero(nn_gp[nn_pg] == np.arange(len(pred)))
    if len(mutual) == 0:
        nc = math.nan
    else:
        n_pred = estimate_normals(pred, k_normals, viewpoint)
        n_gt = estimate_normals(gt, k_normals, viewpoint)
        nc = float(np.abs(np.sum(n_pred[mutual] * n_gt[nn_pg[mutual]], axis=1)).mean())
    return ReconMetrics(acc=acc, comp=comp, nc=nc)

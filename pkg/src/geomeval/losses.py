"""Forward evaluation of the training losses.

All losses are pure functions of their inputs; no gradients are computed.
Default weights follow the training recipe:
pm 1.0, cam 0.1, trans 100.0, rot 1.0, scale 1.0, normal 1.0,
gradient 0.1, distill 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .alignment import roe_scale
from .errors import DegenerateInputError, EmptyOverlapError, ShapeMismatchError
from .geometry import (
    Pointmap,
    Trajectory,
    geodesic_angle,
    pointmap_normals,
    pointmap_to_inverse_depth,
    relative_pose,
    scene_norm,
)

# Scharr derivative kernels (weights 3-10-3, divisor 32) and the
# unnormalized 4-neighbor Laplacian.
SCHARR_X = np.array([[-3, 0, 3], [-10, 0, 10], [-3, 0, 3]], dtype=np.float64) / 32.0
SCHARR_Y = SCHARR_X.T.copy()
LAPLACE = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)


@dataclass(frozen=True)
class LossConfig:
    lambda_pm: float = 1.0
    lambda_cam: float = 0.1
    lambda_trans: float = 100.0
    lambda_rot: float = 1.0
    lambda_scale: float = 1.0
    lambda_normal: float = 1.0
    lambda_gradient: float = 0.1
    lambda_distill: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise DegenerateInputError(f"{f.name} must be finite and >= 0")


@dataclass(frozen=True)
class LossReport:
    terms: dict       # name -> unweighted value
    weighted: dict    # name -> lambda * value
    total: float


_TERM_WEIGHTS = {
    "pm": "lambda_pm",
    "cam": "lambda_cam",
    "trans": "lambda_trans",
    "rot": "lambda_rot",
    "scale": "lambda_scale",
    "normal": "lambda_normal",
    "gradient": "lambda_gradient",
    "distill": "lambda_distill",
}


def _joint_masks(pred, gt):
    if len(pred) != len(gt):
        raise ShapeMismatchError("pred/gt frame counts differ")
    masks = []
    for pp, gp in zip(pred, gt):
        if pp.shape != gp.shape:
            raise ShapeMismatchError("pred/gt pointmap shapes differ")
        masks.append(pp.mask & gp.mask)
    if not any(m.any() for m in masks):
        raise EmptyOverlapError("no jointly valid pixel")
    return masks


def _normalized(maps):
    nrm = scene_norm(maps)
    return [Pointmap(pm.points / nrm, pm.mask, pm.frame_index) for pm in maps], nrm


def pointmap_loss(pred, gt) -> float:
    """Scale-invariant L1 pointmap loss.

    Both scenes are divided by their mean distance-to-origin, a single
    robust scale aligns the normalized prediction, and the mean L1 norm of
    the residual is taken over jointly valid pixels. No confidence
    weighting.
    """
    masks = _joint_masks(pred, gt)
    pred_n, _ = _normalized(pred)
    gt_n, _ = _normalized(gt)
    s = roe_scale(pred_n, gt_n)
    num, cnt = 0.0, 0
    for pp, gp, m in zip(pred_n, gt_n, masks):
        diff = np.abs(s * pp.points[m] - gp.points[m])
        num += diff.sum()
        cnt += m.sum()
    return num / cnt


def camera_loss(pred: Trajectory, gt: Trajectory,
                lambda_rot: float = 1.0, lambda_trans: float = 1.0) -> float:
    """Mean pairwise relative-pose error over all ordered pairs u != v."""
    if len(pred) != len(gt):
        raise ShapeMismatchError("trajectory lengths differ")
    n = len(pred)
    if n < 2:
        raise DegenerateInputError("need at least 2 poses")
    total = 0.0
    for u in range(n):
        for v in range(n):
            if u == v:
                continue
            g_hat = relative_pose(pred.poses[u], pred.poses[v])
            g_ref = relative_pose(gt.poses[u], gt.poses[v])
            ang = geodesic_angle(g_hat.rotation, g_ref.rotation)
            dt = np.abs(g_hat.translation - g_ref.translation).sum()
            total += lambda_rot * ang + lambda_trans * dt
    return total / (n * (n - 1))


def scale_loss(pred_scale: float, pred, gt) -> float:
    """| log s_hat - log(s* . norm(gt) / norm(pred)) | with s* the robust
    scale aligning the normalized scenes."""
    if not pred_scale > 0:
        raise DegenerateInputError("predicted scale must be positive")
    _joint_masks(pred, gt)
    pred_n, norm_pred = _normalized(pred)
    gt_n, norm_gt = _normalized(gt)
    s = roe_scale(pred_n, gt_n)
    return abs(math.log(pred_scale) - math.log(s * norm_gt / norm_pred))


def normal_loss(pred, gt) -> float:
    """Mean angular difference of cross-product normals, in radians."""
    _joint_masks(pred, gt)
    angles = []
    for pp, gp in zip(pred, gt):
        n_hat, v_hat = pointmap_normals(pp)
        n_ref, v_ref = pointmap_normals(gp)
        both = v_hat & v_ref
        if both.any():
            dot = np.clip(np.sum(n_hat[both] * n_ref[both], axis=1), -1.0, 1.0)
            angles.append(np.arccos(dot))
    if not angles:
        raise EmptyOverlapError("no pixel with valid normals in both maps")
    return float(np.concatenate(angles).mean())


def _avg_pool(grid, mask):
    h, w = grid.shape
    h2, w2 = h // 2 * 2, w // 2 * 2
    g = grid[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2)
    m = mask[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2)
    return g.mean(axis=(1, 3)), m.all(axis=(1, 3))


def _conv3x3(grid, kernel):
    h, w = grid.shape
    out = np.zeros((h - 2, w - 2))
    for di in range(3):
        for dj in range(3):
            out += kernel[di, dj] * grid[di:di + h - 2, dj:dj + w - 2]
    return out


def _filter_bank(grid, mask):
    """Scharr-x/y and Laplace responses with full-support validity."""
    h, w = mask.shape
    support = np.ones((h - 2, w - 2), dtype=bool)
    for di in range(3):
        for dj in range(3):
            support &= mask[di:di + h - 2, dj:dj + w - 2]
    resp = [_conv3x3(grid, k) for k in (SCHARR_X, SCHARR_Y, LAPLACE)]
    return resp, support


def gradient_loss(pred, gt, scales=(1, 2, 4)) -> float:
    """Multi-scale L1 loss on Scharr/Laplace responses of canonical
    inverse depth.

    Both maps are converted with the ground-truth scene normalizer.
    Each scale factor 2^k is realized by k steps of 2x average pooling; a
    pooled pixel is valid only when all four children are. A response
    pixel contributes only when the full 3x3 support is valid in both
    prediction and ground truth.
    """
    if any(s not in (1, 2, 4, 8) for s in scales):
        raise DegenerateInputError("scales must be a subset of {1, 2, 4, 8}")
    _joint_masks(pred, gt)
    normalizer = scene_norm(gt)
    per_scale = {s: [0.0, 0] for s in scales}
    for pp, gp in zip(pred, gt):
        d_hat, v_hat = pointmap_to_inverse_depth(pp, normalizer)
        d_ref, v_ref = pointmap_to_inverse_depth(gp, normalizer)
        for s in scales:
            gh, mh = d_hat, v_hat
            gr, mr = d_ref, v_ref
            f = s
            while f > 1:
                gh, mh = _avg_pool(gh, mh)
                gr, mr = _avg_pool(gr, mr)
                f //= 2
            if min(gh.shape) < 3:
                continue
            rh, vh = _filter_bank(gh, mh)
            rr, vr = _filter_bank(gr, mr)
            both = vh & vr
            if both.any():
                for a, b in zip(rh, rr):
                    per_scale[s][0] += np.abs(a[both] - b[both]).sum()
                per_scale[s][1] += 3 * both.sum()
    vals = [acc / cnt for acc, cnt in per_scale.values() if cnt > 0]
    if not vals:
        raise EmptyOverlapError("no pixel with full filter support at any scale")
    return float(np.mean(vals))


def distill_loss(student: np.ndarray, teacher: np.ndarray,
                 projection: np.ndarray) -> float:
    """1 - mean per-token cosine similarity of projected student vs teacher.

    student: (..., C_s) token array; projection: (C_s, C_t) matrix.
    Tokens where either side is the zero vector contribute similarity 0.
    """
    student = np.asarray(student, dtype=np.float64)
    teacher = np.asarray(teacher, dtype=np.float64)
    proj = student @ np.asarray(projection, dtype=np.float64)
    if proj.shape != teacher.shape:
        raise ShapeMismatchError(
            f"projected student shape {proj.shape} != teacher shape {teacher.shape}")
    p = proj.reshape(-1, proj.shape[-1])
    t = teacher.reshape(-1, teacher.shape[-1])
    np_norm = np.linalg.norm(p, axis=1)
    nt_norm = np.linalg.norm(t, axis=1)
    denom = np_norm * nt_norm
    sim = np.zeros(len(p))
    ok = denom > 0
    sim[ok] = np.sum(p[ok] * t[ok], axis=1) / denom[ok]
    return float(1.0 - sim.mean())


def total_loss(terms: dict, cfg: LossConfig = LossConfig()) -> LossReport:
    """Weighted sum of the supplied per-term values.

    terms maps a subset of {pm, cam, trans, rot, scale, normal, gradient,
    distill} to unweighted scalars; missing terms count as absent (weight
    unused), non-finite terms are an error.
    """
    weighted = {}
    total = 0.0
    for name, value in terms.items():
        if name not in _TERM_WEIGHTS:
            raise DegenerateInputError(f"unknown loss term '{name}'")
        if not math.isfinite(value):
            raise DegenerateInputError(f"loss term '{name}' is not finite")
        w = getattr(cfg, _TERM_WEIGHTS[name]) * float(value)
        weighted[name] = w
        total += w
    return LossReport(terms=dict(terms), weighted=weighted, total=total)

"""Command-line surface: scene synthesis and the eval-* commands.

Every invocation prints exactly one JSON record on stdout with the full
effective configuration echoed, so results are self-describing and
machine-parseable. Exit codes: 2 parse/spec failure, 3 shape mismatch,
4 empty overlap, 1 other toolkit errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io as gio
from .alignment import affine_align_depth, roe_scale
from .errors import (
    DegenerateInputError,
    EmptyOverlapError,
    GeomevalError,
    ShapeMismatchError,
)
from .geometry import Pointmap, scene_norm
from .losses import LossConfig, camera_loss, gradient_loss, normal_loss, pointmap_loss, scale_loss, total_loss
from .metrics import (
    DEFAULT_F1_THRESHOLDS,
    ate,
    boundary_f1,
    depth_metrics,
    pdbe,
    pointmap_metrics,
    recon_metrics,
    rpe,
)
from .synth import Corruption, SceneSpec, corrupt, generate


def _emit(record: dict):
    print(json.dumps(record, sort_keys=True))


def _threads() -> int:
    try:
        return int(os.environ.get("GEOMEVAL_THREADS", os.cpu_count() or 1))
    except ValueError:
        return os.cpu_count() or 1


def _load_pointmaps(path):
    return gio.read_gpm(path)


def _apply_affine_to_points(pred, align):
    """Rescale each point by the ratio of affine-corrected to raw depth.

    The shared (scale, shift) is fitted on inverse depth; corrected
    inverse depth a/z + b gives a new depth whose ratio scales the full
    3-vector, keeping rays fixed. Pixels with nonpositive corrected
    inverse depth become invalid.
    """
    out = []
    for pm in pred:
        z = pm.points[..., 2]
        ok = pm.mask & (z > 1e-9)
        inv = np.zeros_like(z)
        inv[ok] = align.scale / z[ok] + align.shift
        ok = ok & (inv > 1e-9)
        factor = np.ones_like(z)
        factor[ok] = (1.0 / inv[ok]) / z[ok]
        out.append(Pointmap(pm.points * factor[..., None], ok, pm.frame_index))
    return out


def _inverse_depth_grids(maps):
    grids = []
    for pm in maps:
        z = pm.points[..., 2]
        ok = pm.mask & (z > 1e-9)
        inv = np.zeros_like(z)
        inv[ok] = 1.0 / z[ok]
        grids.append((inv, ok))
    return grids


def align_pointmaps(pred, gt, mode: str, robust: bool = True):
    """Apply the requested alignment protocol; returns (aligned_pred, info)."""
    if mode == "metric":
        return pred, {"mode": "metric"}
    if mode == "scale":
        s = roe_scale(pred, gt)
        aligned = [Pointmap(pm.points * s, pm.mask, pm.frame_index) for pm in pred]
        return aligned, {"mode": "scale", "scale": s}
    if mode == "affine":
        fit = affine_align_depth(_inverse_depth_grids(pred),
                                 _inverse_depth_grids(gt), robust=robust)
        aligned = _apply_affine_to_points(pred, fit)
        return aligned, {"mode": "affine", "scale": fit.scale,
                         "shift": fit.shift, "robust": robust}
    raise DegenerateInputError(f"unknown alignment mode '{mode}'")


def _cmd_synth(args):
    spec = gio.parse_scene_spec(args.spec)
    data = generate(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    gpm = os.path.join(args.out_dir, "scene.gpm")
    gdm = os.path.join(args.out_dir, "scene.gdm")
    traj = os.path.join(args.out_dir, "trajectory.txt")
    gio.write_gpm(gpm, data.pointmaps)
    gio.write_gdm(gdm, data.depths, [pm.mask for pm in data.pointmaps])
    gio.write_trajectory(traj, data.trajectory)
    manifest = {
        "seed": spec.seed, "n_frames": spec.n_frames,
        "resolution": list(spec.resolution), "surface": spec.surface,
        "trajectory": spec.trajectory, "metric_scale": spec.metric_scale,
        "files": {"pointmaps": "scene.gpm", "depths": "scene.gdm",
                  "trajectory": "trajectory.txt"},
    }
    mpath = os.path.join(args.out_dir, "manifest.json")
    gio._atomic_write(mpath, (json.dumps(manifest, sort_keys=True) + "\n").encode())
    _emit({"command": "synth", "spec": manifest, "out_dir": args.out_dir,
           "threads": _threads()})


def _cmd_eval_pointmap(args):
    pred = _load_pointmaps(args.pred)
    gt = _load_pointmaps(args.gt)
    aligned, info = align_pointmaps(pred, gt, args.align)
    m = pointmap_metrics(aligned, gt, tau=args.tau)
    _emit({"command": "eval-pointmap", "pred": args.pred, "gt": args.gt,
           "align": info, "tau": args.tau, "threads": _threads(),
           "metrics": {"rel_p": m.rel_p, "delta_p": m.delta_p}})


def _cmd_eval_depth(args):
    pred = gio.read_gdm(args.pred)
    gt = gio.read_gdm(args.gt)
    info = {"mode": args.align}
    if args.align == "scale":
        num, den = [], []
        for (pg, pm), (gg, gm) in zip(pred, gt):
            both = pm & gm
            num.append(gg[both])
            den.append(pg[both])
        from .alignment import weighted_median
        x = np.concatenate(den)
        y = np.concatenate(num)
        use = np.abs(x) > 1e-9
        if not use.any():
            raise DegenerateInputError("all predicted depths are zero")
        s = weighted_median(y[use] / x[use], np.abs(x[use]))
        pred = [(pg * s, pm) for pg, pm in pred]
        info["scale"] = s
    elif args.align == "affine":
        def inv(grids):
            out = []
            for g, m in grids:
                ok = m & (g > 1e-9)
                iv = np.zeros_like(g)
                iv[ok] = 1.0 / g[ok]
                out.append((iv, ok))
            return out
        fit = affine_align_depth(inv(pred), inv(gt), robust=True)
        new = []
        for g, m in pred:
            ok = m & (g > 1e-9)
            iv = np.zeros_like(g)
            iv[ok] = fit.scale / g[ok] + fit.shift
            ok = ok & (iv > 1e-9)
            d = np.zeros_like(g)
            d[ok] = 1.0 / iv[ok]
            new.append((d, ok))
        pred = new
        info.update({"scale": fit.scale, "shift": fit.shift, "robust": True})
    elif args.align != "metric":
        raise DegenerateInputError(f"unknown alignment mode '{args.align}'")
    rel_d, delta_d = depth_metrics(pred, gt, tau=args.tau)
    _emit({"command": "eval-depth", "pred": args.pred, "gt": args.gt,
           "align": info, "tau": args.tau, "threads": _threads(),
           "metrics": {"rel_d": rel_d, "delta_d": delta_d}})


def _cmd_eval_boundary(args):
    pred = gio.read_gdm(args.pred)
    gt = gio.read_gdm(args.gt)
    thresholds = tuple(args.f1_thresholds)
    f1s, accs, comps = [], [], []
    for (pg, _), (gg, _) in zip(pred, gt):
        f1s.append(boundary_f1(pg, gg, thresholds))
        a, c, _ = pdbe(pg, gg, args.canny_low, args.canny_high, args.sigma_blur)
        accs.append(a)
        comps.append(c)
    acc = float(np.mean(accs))
    comp = float(np.mean(comps))
    _emit({"command": "eval-boundary", "pred": args.pred, "gt": args.gt,
           "f1_thresholds": list(thresholds), "canny_low": args.canny_low,
           "canny_high": args.canny_high, "sigma_blur": args.sigma_blur,
           "threads": _threads(),
           "metrics": {"f1": float(np.mean(f1s)), "pdbe_acc": acc,
                       "pdbe_comp": comp, "pdbe_chamfer": (acc + comp) / 2.0}})


def _cmd_eval_pose(args):
    pred = gio.read_trajectory(args.pred)
    gt = gio.read_trajectory(args.gt)
    ate_v = ate(pred, gt)
    rpe_t, rpe_r = rpe(pred, gt, delta=args.rpe_delta)
    _emit({"command": "eval-pose", "pred": args.pred, "gt": args.gt,
           "rpe_delta": args.rpe_delta, "threads": _threads(),
           "metrics": {"ate": ate_v, "rpe_t": rpe_t, "rpe_r": rpe_r}})


def _cmd_eval_recon(args):
    pred = np.concatenate([pm.valid_points() for pm in _load_pointmaps(args.pred)])
    gt = np.concatenate([pm.valid_points() for pm in _load_pointmaps(args.gt)])
    m = recon_metrics(pred, gt, k_normals=args.k_normals)
    _emit({"command": "eval-recon", "pred": args.pred, "gt": args.gt,
           "k_normals": args.k_normals, "threads": _threads(),
           "metrics": {"acc": m.acc, "comp": m.comp, "nc": m.nc}})


def _cmd_eval_loss(args):
    pred = _load_pointmaps(args.pred)
    gt = _load_pointmaps(args.gt)
    cfg = LossConfig(lambda_pm=args.lambda_pm, lambda_cam=args.lambda_cam,
                     lambda_trans=args.lambda_trans, lambda_rot=args.lambda_rot,
                     lambda_scale=args.lambda_scale, lambda_normal=args.lambda_normal,
                     lambda_gradient=args.lambda_gradient,
                     lambda_distill=args.lambda_distill)
    terms = {"pm": pointmap_loss(pred, gt),
             "normal": normal_loss(pred, gt),
             "gradient": gradient_loss(pred, gt, scales=tuple(args.gradient_scales))}
    if args.pred_traj and args.gt_traj:
        terms["cam"] = camera_loss(gio.read_trajectory(args.pred_traj),
                                   gio.read_trajectory(args.gt_traj),
                                   lambda_rot=args.lambda_rot,
                                   lambda_trans=args.lambda_trans)
    if args.pred_scale is not None:
        terms["scale"] = scale_loss(args.pred_scale, pred, gt)
    report = total_loss(terms, cfg)
    _emit({"command": "eval-loss", "pred": args.pred, "gt": args.gt,
           "pred_traj": args.pred_traj, "gt_traj": args.gt_traj,
           "pred_scale": args.pred_scale,
           "gradient_scales": list(args.gradient_scales),
           "weights": {k: getattr(cfg, k) for k in (
               "lambda_pm", "lambda_cam", "lambda_trans", "lambda_rot",
               "lambda_scale", "lambda_normal", "lambda_gradient",
               "lambda_distill")},
           "threads": _threads(),
           "terms": report.terms, "weighted": report.weighted,
           "total": report.total})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geomeval")
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic scene")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=_cmd_synth)

    ep = sub.add_parser("eval-pointmap")
    ep.add_argument("--pred", required=True)
    ep.add_argument("--gt", required=True)
    ep.add_argument("--align", choices=["affine", "scale", "metric"], default="scale")
    ep.add_argument("--tau", type=float, default=0.25)
    ep.set_defaults(func=_cmd_eval_pointmap)

    ed = sub.add_parser("eval-depth")
    ed.add_argument("--pred", required=True)
    ed.add_argument("--gt", required=True)
    ed.add_argument("--align", choices=["affine", "scale", "metric"], default="scale")
    ed.add_argument("--tau", type=float, default=0.25)
    ed.set_defaults(func=_cmd_eval_depth)

    eb = sub.add_parser("eval-boundary")
    eb.add_argument("--pred", required=True)
    eb.add_argument("--gt", required=True)
    eb.add_argument("--f1-thresholds", type=float, nargs="+",
                    default=list(DEFAULT_F1_THRESHOLDS))
    eb.add_argument("--canny-low", type=float, default=0.1)
    eb.add_argument("--canny-high", type=float, default=0.2)
    eb.add_argument("--sigma-blur", type=float, default=1.0)
    eb.set_defaults(func=_cmd_eval_boundary)

    pp = sub.add_parser("eval-pose")
    pp.add_argument("--pred", required=True)
    pp.add_argument("--gt", required=True)
    pp.add_argument("--rpe-delta", type=int, default=1)
    pp.set_defaults(func=_cmd_eval_pose)

    er = sub.add_parser("eval-recon")
    er.add_argument("--pred", required=True)
    er.add_argument("--gt", required=True)
    er.add_argument("--k-normals", type=int, default=20)
    er.set_defaults(func=_cmd_eval_recon)

    el = sub.add_parser("eval-loss")
    el.add_argument("--pred", required=True)
    el.add_argument("--gt", required=True)
    el.add_argument("--pred-traj", default=None)
    el.add_argument("--gt-traj", default=None)
    el.add_argument("--pred-scale", type=float, default=None)
    el.add_argument("--gradient-scales", type=int, nargs="+", default=[1, 2, 4])
    cfg = LossConfig()
    for name in ("pm", "cam", "trans", "rot", "scale", "normal", "gradient", "distill"):
        el.add_argument(f"--lambda-{name}", type=float,
                        default=getattr(cfg, f"lambda_{name}"))
    el.set_defaults(func=_cmd_eval_loss)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (gio.FormatError, DegenerateInputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ShapeMismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except EmptyOverlapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except GeomevalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

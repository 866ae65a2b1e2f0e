"""Binary pointmap/depth containers and the text trajectory format.

GPM1 (pointmaps): magic "GPM1", version u16, N/H/W u32, flags u16
(bit0 = mask present), then N*H*W*3 float32 little-endian row-major
(frame, row, col, xyz), then an optional N*H*W byte mask (0/1).

GDM1 (depths): identical layout with one channel.

Trajectory text: lines "index tx ty tz qx qy qz qw" (quaternion
scalar-last, unit within 1e-6), '#' comments, strictly increasing indices.

All writers are atomic (write to a temp file, then rename). Floats are
float32 on disk and float64 in memory.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateInputError, GeomevalError, ShapeMismatchError
from .geometry import Pointmap, Pose, Trajectory

_HEADER = struct.Struct("<4sHIIIH")
_FLAG_MASK = 1


class FormatError(GeomevalError):
    """Malformed container file."""


def _atomic_write(path, payload: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_geomeval_")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(magic: bytes, arrays, masks, channels: int) -> bytes:
    n = len(arrays)
    h, w = arrays[0].shape[:2]
    flags = _FLAG_MASK if masks is not None else 0
    parts = [_HEADER.pack(magic, 1, n, h, w, flags)]
    data = np.stack(arrays).astype("<f4")
    parts.append(data.tobytes(order="C"))
    if masks is not None:
        parts.append(np.stack(masks).astype(np.uint8).tobytes(order="C"))
    return b"".join(parts)


def _unpack(blob: bytes, magic: bytes, channels: int):
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header")
    mg, version, n, h, w, flags = _HEADER.unpack_from(blob)
    if mg != magic:
        raise FormatError(f"bad magic {mg!r}, expected {magic!r}")
    if version != 1:
        raise FormatError(f"unsupported version {version}")
    count = n * h * w * channels
    off = _HEADER.size
    need = off + 4 * count + (n * h * w if flags & _FLAG_MASK else 0)
    if len(blob) != need:
        raise FormatError(f"payload length {len(blob)} != expected {need}")
    shape = (n, h, w, channels) if channels > 1 else (n, h, w)
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
    data = data.reshape(shape).astype(np.float64)
    off += 4 * count
    if flags & _FLAG_MASK:
        mask = np.frombuffer(blob, dtype=np.uint8, count=n * h * w, offset=off)
        mask = mask.reshape(n, h, w).astype(bool)
    else:
        mask = np.ones((n, h, w), dtype=bool)
    if np.isnan(data[mask]).any():
        raise FormatError("NaN in masked-valid entries")
    return data, mask


def write_gpm(path, pointmaps):
    """Write a list of Pointmap frames (shapes must agree)."""
    shapes = {pm.shape for pm in pointmaps}
    if len(shapes) != 1:
        raise ShapeMismatchError("all frames must share one resolution")
    payload = _pack(b"GPM1", [pm.points for pm in pointmaps],
                    [pm.mask for pm in pointmaps], 3)
    _atomic_write(path, payload)


def read_gpm(path):
    with open(path, "rb") as f:
        data, mask = _unpack(f.read(), b"GPM1", 3)
    return [Pointmap(data[i], mask[i], frame_index=i) for i in range(len(data))]


def write_gdm(path, depths, masks=None):
    """Write depth grids; masks default to all-valid."""
    depths = [np.asarray(d, dtype=np.float64) for d in depths]
    if len({d.shape for d in depths}) != 1:
        raise ShapeMismatchError("all frames must share one resolution")
    if masks is None:
        masks = [np.ones(d.shape, dtype=bool) for d in depths]
    payload = _pack(b"GDM1", depths, masks, 1)
    _atomic_write(path, payload)


def read_gdm(path):
    """Returns a list of (depth grid, mask) pairs."""
    with open(path, "rb") as f:
        data, mask = _unpack(f.read(), b"GDM1", 1)
    return [(data[i], mask[i]) for i in range(len(data))]


def write_trajectory(path, traj: Trajectory):
    # Matrix -> quaternion conversion is not bit-stable, so a trajectory
    # that came from read_trajectory carries its source quaternions and
    # those are re-emitted verbatim (after checking they still match the
    # pose), keeping write(read(f)) byte-identical to f.
    cached = getattr(traj, "_quaternions", None)
    if cached is not None and len(cached) != len(traj.poses):
        cached = None
    lines = ["# index tx ty tz qx qy qz qw"]
    for i, (idx, pose) in enumerate(zip(traj.frame_indices, traj.poses)):
        q = None
        if cached is not None:
            qc = np.asarray(cached[i], dtype=np.float64)
            if np.array_equal(Rotation.from_quat(qc).as_matrix(), pose.rotation):
                q = qc
        if q is None:
            q = Rotation.from_matrix(pose.rotation).as_quat()  # scalar-last
        t = pose.translation
        vals = " ".join("%.17g" % v for v in (*t, *q))
        lines.append(f"{idx} {vals}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_trajectory(path) -> Trajectory:
    poses, indices, quats = [], [], []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise FormatError(f"line {ln}: expected 8 fields, got {len(parts)}")
            idx = int(parts[0])
            tx, ty, tz, qx, qy, qz, qw = (float(v) for v in parts[1:])
            q = np.array([qx, qy, qz, qw])
            if abs(np.linalg.norm(q) - 1.0) > 1e-6:
                raise FormatError(f"line {ln}: quaternion norm off by > 1e-6")
            poses.append(Pose(Rotation.from_quat(q).as_matrix(), (tx, ty, tz)))
            indices.append(idx)
            quats.append(q)
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise FormatError("frame indices must be strictly increasing")
    if not poses:
        raise FormatError("empty trajectory file")
    traj = Trajectory(tuple(poses), tuple(indices))
    object.__setattr__(traj, "_quaternions", tuple(quats))
    return traj


def parse_scene_spec(path):
    """Parse the key-value scene spec text format.

    Lines are "key value" (or "key: value"); '#' starts a comment. Keys:
    seed, n_frames, resolution (HxW), surface, trajectory, metric_scale.
    """
    from .synth import SceneSpec

    kv = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.replace(":", " ", 1).partition(" ")
            value = value.strip()
            if not value:
                raise DegenerateInputError(f"line {ln}: missing value for '{key}'")
            kv[key.strip()] = value
    kwargs = {}
    try:
        if "seed" in kv:
            kwargs["seed"] = int(kv.pop("seed"))
        if "n_frames" in kv:
            kwargs["n_frames"] = int(kv.pop("n_frames"))
        if "resolution" in kv:
            h, w = kv.pop("resolution").lower().split("x")
            kwargs["resolution"] = (int(h), int(w))
        if "surface" in kv:
            kwargs["surface"] = kv.pop("surface")
        if "trajectory" in kv:
            kwargs["trajectory"] = kv.pop("trajectory")
        if "metric_scale" in kv:
            kwargs["metric_scale"] = float(kv.pop("metric_scale"))
    except (ValueError, TypeError) as e:
        raise DegenerateInputError(f"bad spec value: {e}") from e
    if kv:
        raise DegenerateInputError(f"unknown spec keys: {sorted(kv)}")
    return SceneSpec(**kwargs)

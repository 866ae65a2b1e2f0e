import numpy as np
import pytest

from geomeval import Pointmap, Pose, Trajectory


def rng_for(seed):
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def random_rotation(rng):
    from scipy.spatial.transform import Rotation
    return Rotation.random(random_state=np.random.RandomState(rng.integers(2**31))).as_matrix()


def random_pose(rng, t_scale=1.0):
    return Pose(random_rotation(rng), rng.normal(0.0, t_scale, size=3))


def random_pointmap(rng, h=8, w=8, frame_index=0, z0=4.0):
    """Smooth random surface patch with strictly positive depth."""
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    z = z0 + 0.5 * np.sin(ii / 3.0 + rng.uniform(0, 6)) \
        + 0.5 * np.cos(jj / 2.5 + rng.uniform(0, 6))
    x = (jj - w / 2) / max(h, w) * z
    y = (ii - h / 2) / max(h, w) * z
    pts = np.stack([x, y, z], axis=-1)
    return Pointmap(pts, np.ones((h, w), dtype=bool), frame_index)


def random_trajectory(rng, n=5, t_scale=1.0):
    poses = [random_pose(rng, t_scale) for _ in range(n)]
    return Trajectory(tuple(poses))


@pytest.fixture
def rng():
    return rng_for(12345)

"""Multi-view geometry toolkit: alignment solvers, training losses,
evaluation metrics, a toy dual-stream attention forward pass, and a
synthetic-scene oracle with reproducible file formats."""

from .geometry import (
    Pointmap,
    Pose,
    Sim3,
    Trajectory,
    compose,
    geodesic_angle,
    pointmap_normals,
    pointmap_to_inverse_depth,
    pose_inverse,
    relative_pose,
    rot9d_to_rotation,
    scene_norm,
)
from .alignment import (
    AffineAlign,
    IcpConfig,
    IcpResult,
    affine_align_depth,
    apply_sim3,
    compose_sim3,
    icp_refine,
    roe_scale,
    sim3_inverse,
    umeyama,
    weighted_median,
)
from .losses import (
    LossConfig,
    LossReport,
    camera_loss,
    distill_loss,
    gradient_loss,
    normal_loss,
    pointmap_loss,
    scale_loss,
    total_loss,
)
from .metrics import (
    BoundaryMetrics,
    PointmapMetrics,
    ReconMetrics,
    TrajectoryMetrics,
    ate,
    boundary_f1,
    boundary_metrics,
    depth_metrics,
    pdbe,
    pointmap_metrics,
    recon_metrics,
    rpe,
)
from .synth import Corruption, SceneData, SceneSpec, corrupt, generate

__version__ = "0.1.0"

"""Downstream heads: dense regression with tiled inference, relative and absolute pose."""

from .dense import (DenseHead, DenseRegressor, dense_head, flow_infer_tiled, stereo_mse_log_loss,
                    tile_assignment, tile_layout, tile_positions)
from .pose import (AprWeights, Pose, PoseHead, apr_loss, procrustes, procrustes_orthonormalize,
                   quat_log, relative_pose_loss)

__all__ = [
    "DenseHead", "DenseRegressor", "dense_head", "flow_infer_tiled", "stereo_mse_log_loss",
    "tile_assignment", "tile_layout", "tile_positions", "AprWeights", "Pose", "PoseHead",
    "apr_loss", "procrustes", "procrustes_orthonormalize", "quat_log", "relative_pose_loss",
]

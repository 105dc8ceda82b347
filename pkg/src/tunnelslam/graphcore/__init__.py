"""Pose graph container, g2o serialization, and robust optimization."""

from .g2o import ID_STRIDE, pack_id, read_g2o, sidecar_path, unpack_id, write_g2o
from .optimize import (
    DEFAULT_BARC2,
    OptimizeConfig,
    OptimizeResult,
    optimize,
    residual,
    residual_jacobians,
)
from .types import DEFAULT_ODOMETRY_INFO, Edge, PoseGraph, check_information

__all__ = [
    "DEFAULT_BARC2",
    "DEFAULT_ODOMETRY_INFO",
    "Edge",
    "ID_STRIDE",
    "OptimizeConfig",
    "OptimizeResult",
    "PoseGraph",
    "check_information",
    "optimize",
    "pack_id",
    "read_g2o",
    "residual",
    "residual_jacobians",
    "sidecar_path",
    "unpack_id",
    "write_g2o",
]

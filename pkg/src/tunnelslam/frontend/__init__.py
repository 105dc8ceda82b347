"""Odometry front end: ICP registration, keyframes, informativeness."""

from .icp import IcpParams, IcpResult, icp_register, voxel_downsample
from .keyframes import KeyFrame, apply_tunnel_filter, select_keyframes, tunnel_filter
from .nn import HashGrid
from .odometry import MODES, OdometryTrace, run_odometry

__all__ = [
    "HashGrid",
    "IcpParams",
    "IcpResult",
    "KeyFrame",
    "MODES",
    "OdometryTrace",
    "apply_tunnel_filter",
    "icp_register",
    "run_odometry",
    "select_keyframes",
    "tunnel_filter",
    "voxel_downsample",
]

"""Synthetic tunnel worlds, LiDAR scans, trajectories, and odometry."""

from .lidar import LidarModel, raycast_scan, union_exit
from .odometry import OdometryModel, degrade_odometry, integrate_increments
from .rng import derive_rng
from .trajectory import RobotSpec, Trajectory, script_trajectories
from .world import CrossSection, Segment, TunnelWorld, build_world
from .io import (
    read_increments_csv,
    read_ply,
    read_trajectory_csv,
    write_increments_csv,
    write_ply,
    write_trajectory_csv,
)

__all__ = [
    "CrossSection",
    "LidarModel",
    "OdometryModel",
    "RobotSpec",
    "Segment",
    "Trajectory",
    "TunnelWorld",
    "build_world",
    "degrade_odometry",
    "derive_rng",
    "integrate_increments",
    "raycast_scan",
    "read_increments_csv",
    "read_ply",
    "read_trajectory_csv",
    "script_trajectories",
    "union_exit",
    "write_increments_csv",
    "write_ply",
    "write_trajectory_csv",
]

"""Synthetic multi-robot LiDAR SLAM testbed for degenerate tunnel networks.

The package simulates tunnel worlds and robot trajectories, runs an
ICP-based odometry front end with keyframe selection, matches keyframes
across robots with rotation-invariant polar descriptors, verifies
candidates by feature-based global registration, filters the surviving
loop measurements for pairwise consistency, and optimizes the merged
pose graph with a robust back end.
"""

from .geom import Pose3, PointCloud, ObbSummary

__all__ = ["Pose3", "PointCloud", "ObbSummary"]
__version__ = "0.1.0"

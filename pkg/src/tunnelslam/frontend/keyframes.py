"""Keyframe selection and the informativeness filter.

A new keyframe is emitted whenever the estimated pose has moved at least
the keyframe distance from the previous keyframe. Each keyframe carries a
voxel-downsampled copy of its scan in the sensor frame.

The informativeness test looks at the principal-axis bounding box of the
keyframe cloud: in a plain tunnel stretch the box is long and thin, while
near an intersection the second-largest extent grows past the tunnel
width. Keyframes whose second extent stays below the width threshold are
flagged uninformative; they remain in the odometry chain but are skipped
by cross-robot matching and graph insertion.
"""

from dataclasses import dataclass

import numpy as np

from ..geom import PointCloud, Pose3, oriented_bbox
from ..errors import StreamLengthMismatch
from .icp import voxel_downsample


@dataclass
class KeyFrame:
    robot: int
    index: int
    stamp: float
    pose: Pose3  # estimated odometry pose at selection time
    cloud: PointCloud  # sensor frame, voxel-downsampled
    informative: bool = True
    gt_pose: Pose3 = None  # evaluation metadata, not used by the pipeline
    descriptor: object = None  # place-recognition descriptor, attached later


def select_keyframes(
    robot: int,
    poses,
    stamps,
    scans,
    keyframe_distance: float = 0.5,
    voxel_size: float = 0.5,
    gt_poses=None,
) -> list:
    """Distance-triggered keyframes along an estimated trajectory.

    The first scan is always a keyframe; afterwards a scan becomes one
    when its estimated position is at least keyframe_distance from the
    last keyframe's. Indices count keyframes, not scans.
    """
    if not (len(poses) == len(stamps) == len(scans)):
        raise StreamLengthMismatch(
            f"poses/stamps/scans lengths differ: {len(poses)}/{len(stamps)}/{len(scans)}"
        )
    if gt_poses is not None and len(gt_poses) != len(poses):
        raise StreamLengthMismatch("gt_poses length differs from poses")
    out = []
    last = None
    for i, pose in enumerate(poses):
        if last is not None and np.linalg.norm(pose.t - last.t) < keyframe_distance:
            continue
        out.append(
            KeyFrame(
                robot=robot,
                index=len(out),
                stamp=float(stamps[i]),
                pose=pose,
                cloud=voxel_downsample(scans[i], voxel_size),
                gt_pose=None if gt_poses is None else gt_poses[i],
            )
        )
        last = pose
    return out


def tunnel_filter(kf: KeyFrame, width_threshold: float) -> bool:
    """True when the keyframe sees more than a plain tunnel cross-section."""
    box = oriented_bbox(kf.cloud)
    return bool(box.extents[1] >= width_threshold)


def apply_tunnel_filter(keyframes, width_threshold: float):
    """Set the informative flag on every keyframe; returns the same list."""
    for kf in keyframes:
        kf.informative = tunnel_filter(kf, width_threshold)
    return keyframes

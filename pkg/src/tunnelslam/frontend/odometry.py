"""Scan-to-scan odometry in two flavors.

``unconstrained`` seeds each ICP with the previous estimated increment
(constant velocity). In self-similar tunnels the registration cost is flat
along the axis, so the estimate inherits whatever the seed says and the
axial component is effectively open-loop.

``kinematic`` seeds each ICP with the wheel odometry increment and then
keeps only the part of the ICP answer that scan matching can actually
observe reliably in a tunnel: the lateral offset, which the walls pin
down and the planar wheel model cannot see (it zeroes body-frame lateral
motion, which is wrong while cornering). Everything else comes from the
wheel prior. The longitudinal component because the wheel measures arc
length directly while nearest-neighbor matching between two samplings of
a self-similar surface locks onto sampling-grid coincidences, giving a
deterministic per-step axial bias that accumulates linearly. The rotation
because encoder differencing measures yaw directly while scan-matched yaw
picks up a systematic per-step bias wherever visibility is asymmetric
(junction mouths occlude and reveal wall patches between scans, and those
frontier points pull the rotation estimate the same way every step).
"""

from dataclasses import dataclass

import numpy as np

from ..errors import StreamLengthMismatch
from ..geom import Pose3, compose
from .icp import IcpParams, IcpResult, icp_register, voxel_downsample

MODES = ("unconstrained", "kinematic")


@dataclass
class OdometryTrace:
    poses: list  # estimated pose per scan, first is identity
    increments: list  # per-step relative estimates
    fitness: np.ndarray  # per-step ICP fitness


def _project_to_prior(icp_inc: Pose3, prior: Pose3) -> Pose3:
    """Lateral translation from ICP, rotation and the other axes from the
    prior. The prior increment carries the wheel's forward travel along
    its local x axis, so longitudinal means x here."""
    return Pose3(prior.q, [prior.t[0], icp_inc.t[1], prior.t[2]])


def run_odometry(
    scans,
    mode: str,
    wheel_increments=None,
    voxel_size: float = 0.5,
    icp_params: IcpParams = None,
) -> OdometryTrace:
    """Chain consecutive scan registrations into an odometry trajectory.

    scans is a list of PointCloud in sensor frames. Kinematic mode needs
    len(scans) - 1 wheel increments.
    """
    if mode not in MODES:
        raise ValueError(f"unknown odometry mode {mode!r}")
    if mode == "kinematic":
        if wheel_increments is None or len(wheel_increments) != len(scans) - 1:
            got = 0 if wheel_increments is None else len(wheel_increments)
            raise StreamLengthMismatch(
                f"kinematic mode needs {len(scans) - 1} wheel increments, got {got}"
            )
    # the threshold must stay below the scan-to-scan displacement: in a
    # self-similar tunnel the previous scan contains an identical copy of
    # the current one shifted by the increment, and if that copy is within
    # matching range every point pairs with its own ghost and the solver
    # locks onto zero motion regardless of the seed
    icp_params = icp_params or IcpParams(max_correspondence_dist=0.6)
    down = [voxel_downsample(s, voxel_size) for s in scans]

    poses = [Pose3.identity()]
    increments = []
    fitness = []
    prev_inc = Pose3.identity()
    for k in range(len(scans) - 1):
        init = wheel_increments[k] if mode == "kinematic" else prev_inc
        # source = newer scan, target = older: the result is the motion of
        # the sensor between the two frames
        result: IcpResult = icp_register(down[k + 1], down[k], init=init, params=icp_params)
        inc = result.pose
        if mode == "kinematic":
            inc = _project_to_prior(inc, wheel_increments[k])
        increments.append(inc)
        fitness.append(result.fitness)
        poses.append(compose(poses[-1], inc))
        prev_inc = inc
    return OdometryTrace(poses=poses, increments=increments, fitness=np.array(fitness))

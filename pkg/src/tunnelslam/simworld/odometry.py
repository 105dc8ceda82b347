"""Odometry degradation models.

Ground-truth relative motions between consecutive trajectory samples are
corrupted per model:

* ``ideal``           exact increments.
* ``drift_axial``     deterministic scale bias along the direction of
                      travel plus white translation noise; emulates an
                      unconstrained estimator sliding along the tunnel
                      axis. Bias is meters per meter traveled; noise
                      sigma is per sqrt(meter), so it integrates to a
                      random walk.
* ``wheel_constrained`` planar wheel odometry: yaw-only rotation, zero
                      lateral/vertical translation in the body frame,
                      longitudinal distance from ground truth with slip
                      noise (sigma per sqrt(meter)). Bias-free, so its
                      accumulated error stays bounded by the slip walk.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidSpec
from ..geom import Pose3, compose, quat_to_rotvec, relative, rotvec_to_quat
from .trajectory import Trajectory

KINDS = ("ideal", "drift_axial", "wheel_constrained")


@dataclass
class OdometryModel:
    kind: str = "ideal"
    bias_per_meter: float = 0.0  # drift_axial
    noise_sigma: float = 0.0  # drift_axial, m / sqrt(m)
    slip_sigma: float = 0.0  # wheel_constrained, m / sqrt(m)

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown odometry model kind {self.kind!r}")
        if min(self.noise_sigma, self.slip_sigma) < 0:
            raise InvalidSpec("odometry noise sigmas must be >= 0")


def degrade_odometry(traj: Trajectory, model: OdometryModel, rng: np.random.Generator):
    """Per-step relative poses (body frame), corrupted per the model."""
    model.validate()
    increments = []
    for i in range(len(traj) - 1):
        inc = relative(traj.poses[i], traj.poses[i + 1])
        ds = float(np.linalg.norm(inc.t))
        if model.kind == "ideal":
            increments.append(inc)
            continue
        if model.kind == "drift_axial":
            t = inc.t.copy()
            if ds > 1e-12:
                t += (inc.t / ds) * (model.bias_per_meter * ds)
            t += rng.normal(0.0, 1.0, size=3) * (model.noise_sigma * np.sqrt(max(ds, 0.0)))
            increments.append(Pose3(inc.q, t))
            continue
        # wheel_constrained: keep yaw only, measure longitudinal travel
        yaw = quat_to_rotvec(inc.q)[2]
        forward = float(inc.t[0])
        slip = rng.normal(0.0, 1.0) * (model.slip_sigma * np.sqrt(max(ds, 0.0)))
        increments.append(
            Pose3(rotvec_to_quat([0.0, 0.0, yaw]), [forward + slip, 0.0, 0.0])
        )
    return increments


def integrate_increments(start: Pose3, increments) -> list:
    """Chain relative poses onto a start pose; returns len(increments)+1 poses."""
    poses = [start]
    for inc in increments:
        poses.append(compose(poses[-1], inc))
    return poses

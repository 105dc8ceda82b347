"""Scripted robot trajectories along tunnel centerlines."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidSpec, StreamLengthMismatch
from ..geom import Pose3, matrix_to_quat
from .world import TunnelWorld


@dataclass
class Trajectory:
    """Time-stamped pose sequence of one robot."""

    robot: int
    stamps: np.ndarray
    poses: list

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float).reshape(-1)
        if len(self.stamps) != len(self.poses):
            raise StreamLengthMismatch(
                f"{len(self.stamps)} stamps vs {len(self.poses)} poses"
            )
        if len(self.stamps) >= 2 and np.any(np.diff(self.stamps) <= 0):
            raise InvalidSpec("stamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def positions(self):
        return np.array([p.t for p in self.poses])

    def path_length(self) -> float:
        pos = self.positions()
        if len(pos) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum())

    def duration(self) -> float:
        return float(self.stamps[-1] - self.stamps[0]) if len(self) >= 2 else 0.0

    def average_speed(self) -> float:
        d = self.duration()
        return self.path_length() / d if d > 0 else 0.0

    def sample_period(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.median(np.diff(self.stamps)))


@dataclass
class RobotSpec:
    """Scripted route: waypoints walked at constant speed, sampled at the
    scan rate, optionally shifted sideways off the centerline."""

    robot: int
    waypoints: list
    speed: float = 1.5
    rate_hz: float = 2.0
    lateral_offset: float = 0.0
    start_time: float = 0.0

    def validate(self):
        if self.speed <= 0 or self.rate_hz <= 0:
            raise InvalidSpec(f"robot {self.robot}: speed and rate_hz must be > 0")
        if len(self.waypoints) < 2:
            raise InvalidSpec(f"robot {self.robot}: need at least 2 waypoints")


def _heading_quat(tangent):
    """Yaw/pitch orientation with +x along the tangent and no roll."""
    t = tangent / np.linalg.norm(tangent)
    yaw = np.arctan2(t[1], t[0])
    pitch = -np.arcsin(np.clip(t[2], -1.0, 1.0))
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1.0]])
    Ry = np.array([[cp, 0, sp], [0, 1.0, 0], [-sp, 0, cp]])
    return matrix_to_quat(Rz @ Ry)


def _resample_polyline(waypoints, step):
    """Points spaced `step` apart by arc length, plus endpoint tangents."""
    wp = np.asarray(waypoints, dtype=float)
    deltas = np.diff(wp, axis=0)
    seg_len = np.linalg.norm(deltas, axis=1)
    if np.any(seg_len < 1e-9):
        raise InvalidSpec("consecutive waypoints coincide")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    arcs = np.arange(0.0, total + 1e-9, step)
    if arcs[-1] < total - 1e-9:
        arcs = np.append(arcs, total)
    idx = np.clip(np.searchsorted(cum, arcs, side="right") - 1, 0, len(seg_len) - 1)
    frac = (arcs - cum[idx]) / seg_len[idx]
    pts = wp[idx] + deltas[idx] * frac[:, None]
    return pts, arcs


def script_trajectories(world: TunnelWorld, specs) -> list:
    """Sample each robot's scripted route and validate it stays in-world.

    Positions follow the waypoint polyline at constant speed; orientation
    points +x along the local tangent (central differences), so corners
    turn smoothly at the sample scale. Consecutive samples are spaced one
    speed/rate step apart or less.
    """
    ids = [s.robot for s in specs]
    if len(set(ids)) != len(ids):
        raise InvalidSpec(f"duplicate robot ids in trajectory spec: {ids}")
    out = []
    for spec in specs:
        spec.validate()
        step = spec.speed / spec.rate_hz
        pts, arcs = _resample_polyline(spec.waypoints, step)
        if len(pts) < 2:
            raise InvalidSpec(f"robot {spec.robot}: route shorter than one sample step")
        tangents = np.gradient(pts, axis=0)
        if spec.lateral_offset != 0.0:
            up = np.array([0.0, 0.0, 1.0])
            side = np.cross(up, tangents)
            norm = np.linalg.norm(side, axis=1, keepdims=True)
            side = np.divide(side, norm, out=np.zeros_like(side), where=norm > 1e-9)
            pts = pts + spec.lateral_offset * side
            tangents = np.gradient(pts, axis=0)

        inside = world.contains(pts)
        if not np.all(inside):
            bad = int(np.nonzero(~inside)[0][0])
            raise InvalidSpec(
                f"robot {spec.robot}: sample {bad} at {pts[bad].round(3).tolist()} "
                "leaves the tunnel volume"
            )
        stamps = spec.start_time + arcs / spec.speed
        poses = [Pose3(_heading_quat(tangents[i]), pts[i]) for i in range(len(pts))]
        out.append(Trajectory(spec.robot, stamps, poses))
    return out

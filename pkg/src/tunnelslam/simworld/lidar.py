"""Spinning LiDAR model and analytic raycasting.

Scans are instantaneous (already de-skewed): every ray is cast from the
same sensor pose. A ray starting inside the union of tunnel volumes exits
the union exactly once; that exit is the wall hit. Ranges get Gaussian
noise combining sensor range noise and world surface roughness, and rays
can drop out independently.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import SensorOutsideWorld
from ..geom import PointCloud, Pose3
from .world import TunnelWorld


@dataclass
class LidarModel:
    channels: int = 16
    steps: int = 180  # azimuth samples per revolution
    vfov_min_deg: float = -22.5
    vfov_max_deg: float = 22.5
    max_range: float = 40.0
    range_noise_sigma: float = 0.01
    dropout_prob: float = 0.0

    def directions(self):
        """Unit ray directions in the sensor frame, (channels*steps, 3)."""
        el = np.deg2rad(np.linspace(self.vfov_min_deg, self.vfov_max_deg, self.channels))
        az = 2.0 * np.pi * np.arange(self.steps) / self.steps
        el_g, az_g = np.meshgrid(el, az, indexing="ij")
        ce = np.cos(el_g).ravel()
        return np.stack(
            [ce * np.cos(az_g.ravel()), ce * np.sin(az_g.ravel()), np.sin(el_g).ravel()], axis=1
        )


def union_exit(world: TunnelWorld, origin, dirs):
    """Parameter at which each ray leaves the union of volumes.

    The origin must be inside the union. Per-segment entry/exit intervals
    are merged and the exit of the component containing t = 0 is returned.
    """
    n = len(dirs)
    k = len(world.segments)
    los = np.empty((n, k))
    his = np.empty((n, k))
    for idx, seg in enumerate(world.segments):
        lo, hi = seg.ray_interval(origin, dirs)
        los[:, idx], his[:, idx] = lo, hi
    empty = ~(his > los)
    los[empty] = np.inf
    his[empty] = np.inf
    order = np.argsort(los, axis=1, kind="stable")
    rows = np.arange(n)[:, None]
    los, his = los[rows, order], his[rows, order]

    eps = 1e-9
    exit_t = np.full(n, np.nan)
    cur_lo, cur_hi = los[:, 0], his[:, 0]
    for idx in range(1, k):
        a, b = los[:, idx], his[:, idx]
        extends = a <= cur_hi + eps
        close = ~extends & np.isnan(exit_t) & (cur_lo <= eps) & (cur_hi >= -eps)
        exit_t[close] = cur_hi[close]
        cur_hi = np.where(extends, np.maximum(cur_hi, b), b)
        cur_lo = np.where(extends, cur_lo, a)
    close = np.isnan(exit_t) & (cur_lo <= eps) & (cur_hi >= -eps) & np.isfinite(cur_hi)
    exit_t[close] = cur_hi[close]
    return exit_t


def _hit_normals(world: TunnelWorld, pts):
    """Outward surface normal at union-boundary points, via the gradient
    of the nearest segment's signed distance."""
    dists = np.stack([np.abs(seg.signed_distance(pts)) for seg in world.segments])
    nearest = np.argmin(dists, axis=0)
    normals = np.zeros_like(pts)
    h = 1e-5
    for idx, seg in enumerate(world.segments):
        mask = nearest == idx
        if not np.any(mask):
            continue
        p = pts[mask]
        grad = np.empty_like(p)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            grad[:, axis] = (seg.signed_distance(p + step) - seg.signed_distance(p - step)) / (
                2 * h
            )
        norm = np.linalg.norm(grad, axis=1, keepdims=True)
        normals[mask] = grad / np.maximum(norm, 1e-12)
    return normals


def raycast_scan(
    world: TunnelWorld, sensor_pose: Pose3, lidar: LidarModel, rng: np.random.Generator
) -> PointCloud:
    """Simulate one scan; returns the cloud in the sensor frame.

    Intensity encodes the cosine of the incidence angle at the wall.
    Raises SensorOutsideWorld when the sensor sits outside every volume.
    """
    origin = sensor_pose.t
    if not world.contains(origin[None])[0]:
        raise SensorOutsideWorld(f"sensor at {origin.round(3).tolist()} is outside the world")
    dirs_sensor = lidar.directions()
    dirs_world = dirs_sensor @ sensor_pose.rotation_matrix().T

    ranges = union_exit(world, origin, dirs_world)
    keep = np.isfinite(ranges) & (ranges > 1e-6)

    sigma = float(np.hypot(lidar.range_noise_sigma, world.surface_noise_sigma))
    noise = rng.normal(0.0, 1.0, size=len(ranges)) * sigma
    drop = rng.uniform(size=len(ranges)) < lidar.dropout_prob
    noisy = ranges + noise
    keep &= ~drop & (noisy <= lidar.max_range) & (noisy > 1e-6)

    hit_world = origin + dirs_world[keep] * ranges[keep, None]
    normals = _hit_normals(world, hit_world)
    incidence = np.abs(np.sum(dirs_world[keep] * normals, axis=1))

    points_sensor = dirs_sensor[keep] * noisy[keep, None]
    return PointCloud(points_sensor, intensity=np.clip(incidence, 0.0, 1.0))

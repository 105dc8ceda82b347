"""Point-to-point ICP with voxel downsampling."""

from dataclasses import dataclass

import numpy as np

from ..errors import NoCorrespondences
from ..geom import PointCloud, Pose3, compose, umeyama_align
from .nn import HashGrid


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """One centroid per occupied voxel; intensity averaged alongside.

    Output order follows sorted voxel coordinates, so the result is a pure
    function of the point set.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be > 0")
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)), intensity=np.empty(0))
    coords = np.floor(cloud.points / voxel_size).astype(np.int64)
    origin = coords.min(axis=0)
    span = coords.max(axis=0) - origin + 1
    keys = ((coords[:, 0] - origin[0]) * span[1] + (coords[:, 1] - origin[1])) * span[2] + (
        coords[:, 2] - origin[2]
    )
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, cloud.points)
    pts = sums / counts[:, None]
    intensity = None
    if cloud.intensity is not None:
        acc = np.zeros(len(uniq))
        np.add.at(acc, inverse, cloud.intensity)
        intensity = acc / counts
    return PointCloud(pts, intensity=intensity)


@dataclass
class IcpParams:
    max_correspondence_dist: float = 1.0
    max_iterations: int = 30
    tolerance: float = 1e-6  # convergence threshold on mean-error change
    # keep only this fraction of correspondences, best-first by distance;
    # 1.0 disables trimming. Occlusion frontiers (points visible in one
    # scan only) produce the largest residuals and bias the solve, so
    # trimming them matters when scans overlap partially.
    trim_fraction: float = 1.0


@dataclass
class IcpResult:
    pose: Pose3  # maps source points into the target frame
    fitness: float  # fraction of source points with an inlier match
    rmse: float  # over inlier correspondences
    iterations: int
    converged: bool


def icp_register(
    source: PointCloud, target: PointCloud, init: Pose3 = None, params: IcpParams = None
) -> IcpResult:
    """Classic point-to-point ICP.

    Correspondences come from a spatial hash at the correspondence radius;
    each iteration solves the closed-form rigid alignment on the matched
    pairs. Iteration stops when the mean correspondence error changes less
    than the tolerance. Raises NoCorrespondences when fewer than 3 source
    points find matches.
    """
    init = init or Pose3.identity()
    params = params or IcpParams()
    if len(source) == 0 or len(target) == 0:
        raise NoCorrespondences("empty cloud in ICP")
    grid = HashGrid(target.points, params.max_correspondence_dist)
    pose = init
    prev_err = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        moved = pose.transform_points(source.points)
        idx, dist = grid.nearest(moved, params.max_correspondence_dist)
        keep = idx >= 0
        if keep.sum() < 3:
            raise NoCorrespondences(
                f"only {int(keep.sum())} source points matched within "
                f"{params.max_correspondence_dist} m"
            )
        if params.trim_fraction < 1.0:
            matched = np.flatnonzero(keep)
            n_keep = max(3, int(np.floor(params.trim_fraction * len(matched))))
            if n_keep < len(matched):
                order = np.argsort(dist[matched], kind="stable")
                keep = np.zeros_like(keep)
                keep[matched[order[:n_keep]]] = True
        err = float(np.mean(dist[keep] ** 2))
        if abs(prev_err - err) < params.tolerance:
            converged = True
            break
        prev_err = err
        correction = umeyama_align(moved[keep], target.points[idx[keep]])
        pose = compose(correction, pose)

    moved = pose.transform_points(source.points)
    idx, dist = grid.nearest(moved, params.max_correspondence_dist)
    keep = idx >= 0
    fitness = float(keep.mean())
    rmse = float(np.sqrt(np.mean(dist[keep] ** 2))) if keep.any() else float("inf")
    return IcpResult(pose=pose, fitness=fitness, rmse=rmse, iterations=iterations,
                     converged=converged)

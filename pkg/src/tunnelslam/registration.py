"""Initialization-free registration of candidate keyframe pairs.

Descriptor matching proposes which keyframes might show the same place;
this module estimates the relative pose between their clouds without an
initial guess. Plain ICP cannot do that here: started from identity (or
from a descriptor yaw), it locks onto the repeating wall lattice a meter
or two off and still reports high fitness, which is exactly the wrong-PCR
failure the evaluation tracks. The pipeline instead matches FPFH features,
keeps the largest subset of correspondences whose pairwise distances are
preserved (a maximum clique of the length-consistency graph), aligns that
subset in closed form, and only then lets ICP polish the result.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NoCorrespondences, TooFewPoints
from .frontend.icp import IcpParams, IcpResult, icp_register, voxel_downsample
from .frontend.nn import HashGrid
from .geom import PointCloud, Pose3, umeyama_align
from .robustsel import ConsistencyGraph, max_clique

_BINS = 11  # per angular feature; three features concatenated


@dataclass
class FpfhFeature:
    """L1-normalized 33-bin histogram anchored at one cloud point."""

    histogram: np.ndarray
    index: int


@dataclass
class RegistrationParams:
    voxel_size: float = 0.3
    normal_radius: float = 0.6
    feature_radius: float = 1.5
    # correspondences (p,q),(p',q') are consistent iff the source and
    # target spacings agree within this bound
    distance_consistency_eps: float = 0.3
    max_correspondences: int = 200
    # Lowe-style ratio gate on feature matches; 0 disables it, the clique
    # already prunes aggressively
    ratio_test: float = 0.0
    min_inliers: int = 5
    min_fitness: float = 0.3
    min_cloud_points: int = 50
    # Corridor worlds admit two large self-consistent match sets, the true
    # alignment and its 180-degree lattice ghost, and which one forms the
    # bigger clique is sampling noise. Refining the few largest disjoint
    # cliques and keeping the best refined fitness separates them reliably,
    # since only the true rotation also aligns the junction structure.
    hypothesis_count: int = 6
    hypothesis_min_ratio: float = 0.25
    refine: IcpParams = field(
        default_factory=lambda: IcpParams(max_correspondence_dist=0.6)
    )

    def __post_init__(self):
        if self.voxel_size <= 0 or self.normal_radius <= 0 or self.feature_radius <= 0:
            raise ValueError("radii and voxel size must be > 0")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be >= 3 to define a pose")
        if self.max_correspondences < self.min_inliers:
            raise ValueError("max_correspondences must cover min_inliers")
        if self.hypothesis_count < 1:
            raise ValueError("hypothesis_count must be >= 1")
        if not 0.0 < self.hypothesis_min_ratio <= 1.0:
            raise ValueError("hypothesis_min_ratio must be in (0, 1]")


@dataclass
class RegistrationResult:
    pose: Pose3  # maps source points into the target frame
    inlier_correspondences: int  # clique size
    fitness: float  # ICP inlier fraction after refinement
    converged: bool


def estimate_normals(cloud: PointCloud, radius: float, viewpoint=(0.0, 0.0, 0.0)):
    """Per-point surface normals from neighborhood PCA.

    Each normal is the smallest-variance direction of the points within
    radius, flipped to face the viewpoint (the sensor origin for keyframe
    clouds, which live in the sensor frame). Points with fewer than three
    neighbors, or with a degenerate neighborhood, get an all-zero row as
    the invalid marker.
    """
    if radius <= 0:
        raise ValueError("radius must be > 0")
    pts = cloud.points
    n = len(pts)
    normals = np.zeros((n, 3))
    if n == 0:
        return normals
    grid = HashGrid(pts, radius)
    qi, ti, _ = grid.pairs_within(pts, radius)
    counts = np.bincount(qi, minlength=n)
    sums = np.zeros((n, 3))
    np.add.at(sums, qi, pts[ti])
    outer = np.zeros((n, 3, 3))
    np.add.at(outer, qi, pts[ti, :, None] * pts[ti, None, :])
    valid = counts >= 3
    if not valid.any():
        return normals
    mean = sums[valid] / counts[valid, None]
    cov = outer[valid] / counts[valid, None, None] - mean[:, :, None] * mean[:, None, :]
    eigvals, eigvecs = np.linalg.eigh(cov)
    normal = eigvecs[:, :, 0]
    # rank-deficient neighborhoods (collinear points) have no plane
    degenerate = eigvals[:, 1] < 1e-12
    normal[degenerate] = 0.0
    to_view = np.asarray(viewpoint, dtype=float) - pts[valid]
    flip = np.sum(normal * to_view, axis=1) < 0
    normal[flip] *= -1.0
    normals[valid] = normal
    return normals


def _pair_features(p_src, n_src, p_tgt, n_tgt):
    """Darboux-frame angles (f1, f2, f3) for point pairs, vectorized.

    The point whose normal is better aligned with the connecting line acts
    as the frame origin; returns a validity mask alongside the features
    (pairs with coincident points or a normal parallel to the line are
    dropped, matching the usual implementation).
    """
    delta = p_tgt - p_src
    dist = np.linalg.norm(delta, axis=1)
    ok = dist > 1e-12
    dist = np.where(ok, dist, 1.0)
    delta = delta / dist[:, None]
    a1 = np.sum(n_src * delta, axis=1)
    a2 = np.sum(n_tgt * delta, axis=1)
    swap = np.abs(a1) < np.abs(a2)
    u = np.where(swap[:, None], n_tgt, n_src)
    other = np.where(swap[:, None], n_src, n_tgt)
    delta = np.where(swap[:, None], -delta, delta)
    f3 = np.where(swap, -a2, a1)
    v = np.cross(delta, u)
    v_norm = np.linalg.norm(v, axis=1)
    ok &= v_norm > 1e-12
    v = v / np.where(ok, v_norm, 1.0)[:, None]
    w = np.cross(u, v)
    f2 = np.sum(v * other, axis=1)
    f1 = np.arctan2(np.sum(w * other, axis=1), np.sum(u * other, axis=1))
    return f1, f2, f3, ok


def _bin_indices(values, lo, hi):
    idx = np.floor((values - lo) / (hi - lo) * _BINS).astype(np.int64)
    return np.clip(idx, 0, _BINS - 1)


def fpfh(cloud: PointCloud, normals, radius: float):
    """Fast point feature histograms, one per point.

    Two passes: a simplified histogram per point over its radius neighbors,
    then each point's final feature adds the distance-weighted mean of its
    neighbors' simplified histograms. Points with an invalid normal (or no
    valid-normal neighbors) keep an all-zero histogram and take no part in
    anyone else's.
    """
    if radius <= 0:
        raise ValueError("radius must be > 0")
    pts = cloud.points
    normals = np.asarray(normals, dtype=float)
    n = len(pts)
    valid = np.linalg.norm(normals, axis=1) > 0.5
    spfh = np.zeros((n, 3 * _BINS))
    if n and valid.any():
        grid = HashGrid(pts, radius)
        qi, ti, dist = grid.pairs_within(pts, radius)
        keep = (qi != ti) & valid[qi] & valid[ti]
        qi, ti, dist = qi[keep], ti[keep], dist[keep]
        f1, f2, f3, ok = _pair_features(pts[qi], normals[qi], pts[ti], normals[ti])
        qi, dist = qi[ok], dist[ok]
        cols = np.concatenate([
            _bin_indices(f1[ok], -np.pi, np.pi),
            _BINS + _bin_indices(f2[ok], -1.0, 1.0),
            2 * _BINS + _bin_indices(f3[ok], -1.0, 1.0),
        ])
        rows = np.concatenate([qi, qi, qi])
        np.add.at(spfh, (rows, cols), 1.0)
        pair_counts = np.bincount(qi, minlength=n)
        nz = pair_counts > 0
        spfh[nz] /= pair_counts[nz, None]

        final = spfh.copy()
        weighted = np.zeros_like(spfh)
        w = 1.0 / np.maximum(dist, 1e-12)
        np.add.at(weighted, qi, w[:, None] * spfh[ti])
        neighbor_counts = np.bincount(qi, minlength=n)
        has = neighbor_counts > 0
        final[has] += weighted[has] / neighbor_counts[has, None]
        final[~valid] = 0.0
        totals = final.sum(axis=1)
        scale = totals > 0
        final[scale] /= totals[scale, None]
    else:
        final = spfh
    return [FpfhFeature(final[i], i) for i in range(n)]


def _feature_matrix(features):
    return np.stack([f.histogram for f in features]) if features else np.empty((0, 3 * _BINS))


def _mutual_matches(fa, fb, ratio):
    """Mutual nearest neighbors in feature space as (ia, ib, distance)."""
    a_ok = np.flatnonzero(fa.sum(axis=1) > 0)
    b_ok = np.flatnonzero(fb.sum(axis=1) > 0)
    if len(a_ok) == 0 or len(b_ok) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    a, b = fa[a_ok], fb[b_ok]
    d2 = (
        np.sum(a**2, axis=1)[:, None]
        + np.sum(b**2, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(d2, 0.0, out=d2)
    fwd = np.argmin(d2, axis=1)
    bwd = np.argmin(d2, axis=0)
    ia = np.flatnonzero(bwd[fwd] == np.arange(len(a)))
    ib = fwd[ia]
    dist = np.sqrt(d2[ia, ib])
    if ratio > 0 and d2.shape[1] >= 2:
        part = np.partition(d2[ia], 1, axis=1)
        second = np.sqrt(part[:, 1])
        keep = dist <= ratio * np.maximum(second, 1e-12)
        ia, ib, dist = ia[keep], ib[keep], dist[keep]
    return a_ok[ia], b_ok[ib], dist


def _maximum_cliques(masks, size, cap=64, budget=50000):
    """Cliques of the given size in ascending vertex order.

    Best-effort: stops after cap cliques or budget expansions, since dense
    consistency graphs can hold astronomically many equal-size cliques and
    the caller only needs a handful of distinct alignment hypotheses.
    """
    n = len(masks)
    out = []
    spent = [0]

    def extend(prefix, cand, need):
        if need == 0:
            out.append(prefix)
            return
        while cand and len(out) < cap and spent[0] < budget:
            if cand.bit_count() < need:
                return
            spent[0] += 1
            v = (cand & -cand).bit_length() - 1
            cand &= cand - 1
            extend(prefix + [v], cand & masks[v], need - 1)

    full = (1 << n) - 1
    extend([], full, size)
    return out


def _pose_rmse(src, tgt, pose):
    moved = pose.transform_points(src)
    return float(np.sqrt(np.mean(np.sum((moved - tgt) ** 2, axis=1))))


def _best_clique(src_pts, tgt_pts, adjacency):
    """Maximum clique of the consistency graph; among equally large cliques
    the one whose closed-form alignment has the lowest RMSE."""
    m = len(src_pts)
    graph = ConsistencyGraph(list(range(m)), adjacency, gamma=0.0)
    first = max_clique(graph)
    if len(first) < 3:
        return first, None
    masks = [0] * m
    for i in range(m):
        row = 0
        for j in np.flatnonzero(adjacency[i]):
            row |= 1 << int(j)
        masks[i] = row
    candidates = _maximum_cliques(masks, len(first))
    if first not in candidates:
        candidates.append(first)
    best = None
    best_rmse = np.inf
    for clique in candidates:
        pose = umeyama_align(src_pts[clique], tgt_pts[clique])
        rmse = _pose_rmse(src_pts[clique], tgt_pts[clique], pose)
        if rmse < best_rmse - 1e-15:
            best, best_rmse = (clique, pose), rmse
    return best


def _dump_correspondences(path, src_pts, tgt_pts, dist, clique):
    inlier = np.zeros(len(src_pts), dtype=bool)
    inlier[clique] = True
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sx,sy,sz,tx,ty,tz,feature_dist,in_clique\n")
        for k in range(len(src_pts)):
            fh.write(
                "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6g,%d\n"
                % (*src_pts[k], *tgt_pts[k], dist[k], int(inlier[k]))
            )


def global_register(
    source: PointCloud,
    target: PointCloud,
    params: RegistrationParams = None,
    debug_csv=None,
) -> RegistrationResult:
    """Estimate the source-to-target rigid transform with no initial guess.

    Both clouds are voxel-downsampled, described with FPFH, and matched
    mutually in feature space. The largest subsets of matches that preserve
    pairwise point spacing (within distance_consistency_eps) each propose
    an alignment; every proposal is refined with ICP and the refinement
    with the best fitness wins. The result converges only when the winning
    subset reaches min_inliers and its refined overlap reaches min_fitness;
    anything else comes back converged=False rather than raising, since
    descriptor candidates are expected to fail here routinely.

    Raises TooFewPoints when either downsampled cloud has fewer than
    min_cloud_points points.
    """
    params = params or RegistrationParams()
    src = voxel_downsample(source, params.voxel_size)
    tgt = voxel_downsample(target, params.voxel_size)
    if len(src) < params.min_cloud_points or len(tgt) < params.min_cloud_points:
        raise TooFewPoints(
            f"{len(src)} source / {len(tgt)} target points after downsampling, "
            f"need {params.min_cloud_points}"
        )
    fa = _feature_matrix(fpfh(src, estimate_normals(src, params.normal_radius), params.feature_radius))
    fb = _feature_matrix(fpfh(tgt, estimate_normals(tgt, params.normal_radius), params.feature_radius))
    ia, ib, dist = _mutual_matches(fa, fb, params.ratio_test)
    if len(ia) > params.max_correspondences:
        order = np.argsort(dist, kind="stable")[: params.max_correspondences]
        order.sort()
        ia, ib, dist = ia[order], ib[order], dist[order]

    src_pts, tgt_pts = src.points[ia], tgt.points[ib]
    m = len(ia)
    if m == 0:
        return RegistrationResult(Pose3.identity(), 0, 0.0, False)
    d_src = np.linalg.norm(src_pts[:, None] - src_pts[None, :], axis=2)
    d_tgt = np.linalg.norm(tgt_pts[:, None] - tgt_pts[None, :], axis=2)
    adjacency = np.abs(d_src - d_tgt) <= params.distance_consistency_eps
    np.fill_diagonal(adjacency, False)

    # peel disjoint cliques largest-first; each is one alignment hypothesis
    best = None
    work = adjacency.copy()
    first_size = None
    for attempt in range(params.hypothesis_count):
        clique, pose = _best_clique(src_pts, tgt_pts, work)
        if pose is None:
            if best is None:
                if debug_csv is not None:
                    _dump_correspondences(debug_csv, src_pts, tgt_pts, dist, clique)
                return RegistrationResult(Pose3.identity(), len(clique), 0.0, False)
            break
        if first_size is None:
            first_size = len(clique)
        elif len(clique) < max(3, int(np.ceil(params.hypothesis_min_ratio * first_size))):
            break
        try:
            refined = icp_register(src, tgt, init=pose, params=params.refine)
            key = (refined.fitness, len(clique), -attempt)
            cand = (key, clique, refined.pose, refined.fitness)
        except NoCorrespondences:
            cand = ((0.0, len(clique), -attempt), clique, pose, 0.0)
        if best is None or cand[0] > best[0]:
            best = cand
        gone = np.ones(m, dtype=bool)
        gone[clique] = False
        work = work & gone[:, None] & gone[None, :]

    _, clique, pose, fitness = best
    if debug_csv is not None:
        _dump_correspondences(debug_csv, src_pts, tgt_pts, dist, clique)
    converged = len(clique) >= params.min_inliers and fitness >= params.min_fitness
    return RegistrationResult(pose, len(clique), fitness, converged)

"""Rotation-invariant polar occupancy descriptors for place recognition.

A descriptor bins a keyframe cloud into range rings and azimuth sectors,
keeping the maximum height per bin. Comparing two descriptors over all
circular sector shifts makes the match invariant to the yaw at which a
place was revisited, which is what allows two robots to recognize shared
tunnel sections without a common frame.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloud, ShapeMismatch
from .geom import PointCloud

DEFAULT_RINGS = 20
DEFAULT_SECTORS = 60
DEFAULT_MAX_RANGE = 80.0

# occupied bins must stay distinguishable from the 0 that encodes empty,
# even when a point sits exactly at minus the height offset
_OCCUPIED_FLOOR = 1e-6


@dataclass
class ScanContext:
    matrix: np.ndarray  # rings x sectors, max height per bin, 0 = empty
    rings: int
    sectors: int
    max_range: float
    ring_key: np.ndarray  # per-ring fraction of occupied sectors

    def is_empty(self) -> bool:
        return not self.matrix.any()


@dataclass
class LoopCandidate:
    kf_a: tuple  # (robot, index)
    kf_b: tuple
    similarity: float
    sector_shift: int


def scan_context(
    cloud: PointCloud,
    rings: int = DEFAULT_RINGS,
    sectors: int = DEFAULT_SECTORS,
    max_range: float = DEFAULT_MAX_RANGE,
    height_offset: float = 0.0,
) -> ScanContext:
    """Polar max-height descriptor of a sensor-frame cloud.

    height_offset is added to z before binning so that points below the
    sensor still encode as positive heights; it should exceed the sensor's
    mount height above the lowest visible surface. A cloud whose points all
    lie beyond max_range yields an all-empty descriptor rather than an
    error; only a zero-point cloud raises.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot describe an empty cloud")
    pts = cloud.points
    radius = np.hypot(pts[:, 0], pts[:, 1])
    inside = radius <= max_range
    matrix = np.zeros((rings, sectors))
    if inside.any():
        pts = pts[inside]
        radius = radius[inside]
        ring = np.minimum((radius / max_range * rings).astype(int), rings - 1)
        azimuth = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * np.pi)
        sector = np.minimum((azimuth / (2.0 * np.pi) * sectors).astype(int), sectors - 1)
        height = pts[:, 2] + height_offset
        np.maximum.at(matrix, (ring, sector), np.maximum(height, _OCCUPIED_FLOOR))
    ring_key = (matrix > 0).mean(axis=1)
    return ScanContext(matrix, rings, sectors, max_range, ring_key)


def _shift_table(sectors: int) -> np.ndarray:
    j = np.arange(sectors)
    return (j[None, :] + j[:, None]) % sectors  # [shift, column]


def sc_distance(a: ScanContext, b: ScanContext) -> tuple:
    """(distance, shift): minimum mean column cosine distance over shifts.

    shift is the number of sectors b must be rotated (columns moved toward
    lower indices) to best align with a. Columns empty in both descriptors
    are excluded from the mean; a column empty in exactly one contributes
    the maximum distance 1. Two descriptors with no comparable columns are
    maximally distant.
    """
    if (a.rings, a.sectors) != (b.rings, b.sectors):
        raise ShapeMismatch(
            f"descriptor grids differ: {a.rings}x{a.sectors} vs {b.rings}x{b.sectors}"
        )
    n = a.sectors
    occ_a = a.matrix.any(axis=0)
    occ_b = b.matrix.any(axis=0)
    norm_a = np.linalg.norm(a.matrix, axis=0)
    norm_b = np.linalg.norm(b.matrix, axis=0)
    cross = a.matrix.T @ b.matrix  # [col of a, col of b]

    table = _shift_table(n)  # b column matched to a column j at each shift
    dots = cross[np.arange(n)[None, :], table]
    occ_b_s = occ_b[table]
    both = occ_a[None, :] & occ_b_s
    one = occ_a[None, :] ^ occ_b_s
    denom = norm_a[None, :] * norm_b[table]
    cos_dist = np.zeros_like(dots)
    np.divide(dots, denom, out=cos_dist, where=both)
    per_col = np.where(both, 1.0 - cos_dist, 0.0) + np.where(one, 1.0, 0.0)
    counts = (both | one).sum(axis=1)
    means = np.full(n, 1.0)
    valid = counts > 0
    means[valid] = per_col[valid].sum(axis=1) / counts[valid]
    shift = int(np.argmin(means))
    return float(np.clip(means[shift], 0.0, 1.0)), shift


def attach_descriptors(
    keyframes,
    rings: int = DEFAULT_RINGS,
    sectors: int = DEFAULT_SECTORS,
    max_range: float = DEFAULT_MAX_RANGE,
    height_offset: float = 5.0,
):
    """Compute and store a descriptor on each keyframe, in place."""
    for kf in keyframes:
        kf.descriptor = scan_context(kf.cloud, rings, sectors, max_range, height_offset)
    return keyframes


def _pool(keyframes, use_filter: bool):
    return [
        (i, kf)
        for i, kf in enumerate(keyframes)
        if kf.descriptor is not None and (kf.informative or not use_filter)
    ]


def _best_match(query, pool, prefilter):
    """(distance, shift, pool position) of the closest descriptor."""
    if not pool:
        return None
    keys = np.stack([kf.descriptor.ring_key for _, kf in pool])
    key_dist = np.linalg.norm(keys - query.descriptor.ring_key, axis=1)
    if prefilter and prefilter < len(pool):
        order = np.lexsort((np.arange(len(pool)), key_dist))[:prefilter]
    else:
        order = np.arange(len(pool))
    best = None
    for pos in sorted(order.tolist()):
        dist, shift = sc_distance(query.descriptor, pool[pos][1].descriptor)
        if best is None or dist < best[0]:
            best = (dist, shift, pos)
    return best


def match_keyframes(
    kfs_a,
    kfs_b,
    threshold: float = 0.7,
    use_filter: bool = False,
    prefilter: int = 10,
    mutual: bool = False,
) -> list:
    """Best cross-robot descriptor match per keyframe of the first robot.

    Each retained A-keyframe contributes at most one candidate: its closest
    B-descriptor, kept when similarity = 1 - distance reaches threshold.
    prefilter narrows the search to the keyframes with the nearest ring
    keys before the full shifted comparison (0 disables). mutual
    additionally requires the A-keyframe to be its match's best A-side
    answer.
    """
    robots_a = {kf.robot for kf in kfs_a}
    robots_b = {kf.robot for kf in kfs_b}
    if robots_a & robots_b:
        raise ValueError(f"keyframe lists share robot ids {sorted(robots_a & robots_b)}")
    pool_a = _pool(kfs_a, use_filter)
    pool_b = _pool(kfs_b, use_filter)
    out = []
    for _, kf in pool_a:
        found = _best_match(kf, pool_b, prefilter)
        if found is None:
            continue
        dist, shift, pos = found
        if 1.0 - dist < threshold:
            continue
        peer = pool_b[pos][1]
        if mutual:
            back = _best_match(peer, pool_a, prefilter)
            if back is None or pool_a[back[2]][1] is not kf:
                continue
        out.append(
            LoopCandidate(
                kf_a=(kf.robot, kf.index),
                kf_b=(peer.robot, peer.index),
                similarity=1.0 - dist,
                sector_shift=shift,
            )
        )
    return out


def write_descriptor_csv(path, sc: ScanContext):
    """Debug dump: one CSV row per ring, sectors columns."""
    with open(path, "w") as f:
        for row in sc.matrix:
            f.write(",".join(f"{v:.12g}" for v in row) + "\n")

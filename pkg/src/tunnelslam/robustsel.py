"""Pairwise consistency filtering of inter-robot loop closures.

Two loop closures between the same robot pair are mutually consistent
when chaining the first loop, one robot's odometry, the second loop, and
the other robot's odometry back to the start lands near the identity
under the composed covariance. Keeping the maximum clique of the
consistency graph retains the largest mutually-consistent subset; gross
mismatches rarely agree with each other, so they fall outside it.

The clique solver is exact branch-and-bound with a greedy-coloring bound
and is shared with the global registration stage.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .errors import MissingOdometrySpan, SizeLimit
from .geom import Pose3, compose, inverse, log_map
from .graphcore import Edge

DEFAULT_GAMMA = float(scipy.stats.chi2.ppf(0.99, df=6))
MAX_VERTICES = 500


class OdometryChain:
    """Relative poses with covariance between keyframe indices of one robot.

    Built from that robot's odometry edges; spans compose consecutive
    measurements and sum the edge covariances in the local frame (a
    first-order approximation, no adjoint transport).
    """

    def __init__(self, edges):
        if not edges:
            raise ValueError("odometry chain needs at least one edge")
        robots = {e.from_key[0] for e in edges} | {e.to_key[0] for e in edges}
        if len(robots) != 1:
            raise ValueError(f"odometry chain mixes robots {sorted(robots)}")
        self.robot = robots.pop()
        self._next = {}
        for e in edges:
            if e.kind != "odometry":
                raise ValueError("odometry chain got a non-odometry edge")
            if e.from_key[1] in self._next:
                raise ValueError(f"odometry chain branches at index {e.from_key[1]}")
            self._next[e.from_key[1]] = e

    def span(self, start: int, stop: int):
        """(relative pose, covariance) from keyframe start to stop."""
        if start == stop:
            return Pose3(), np.zeros((6, 6))
        lo, hi = min(start, stop), max(start, stop)
        pose = Pose3()
        cov = np.zeros((6, 6))
        idx = lo
        while idx < hi:
            edge = self._next.get(idx)
            if edge is None or edge.to_key[1] > hi:
                raise MissingOdometrySpan(
                    f"robot {self.robot}: no odometry span {lo} -> {hi}"
                )
            pose = compose(pose, edge.measurement)
            cov = cov + np.linalg.inv(edge.information)
            idx = edge.to_key[1]
        if start > stop:
            pose = inverse(pose)
        return pose, cov


@dataclass
class ConsistencyGraph:
    vertices: list
    adjacency: np.ndarray  # symmetric boolean, false diagonal
    gamma: float
    values: np.ndarray = None  # pairwise consistency scores, if recorded

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=bool)
        n = len(self.vertices)
        if self.adjacency.shape != (n, n):
            raise ValueError(
                f"adjacency shape {self.adjacency.shape} does not match "
                f"{n} vertices"
            )
        if not np.array_equal(self.adjacency, self.adjacency.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(self.adjacency)):
            raise ValueError("adjacency diagonal must be false")


def pairwise_consistency(z_ik: Edge, z_jl: Edge, odom_a: OdometryChain,
                         odom_b: OdometryChain) -> float:
    """Squared Mahalanobis norm of the loop-odometry-loop-odometry cycle.

    Lower is more consistent; 0 means the two loops agree exactly with
    both odometry chains. Symmetric in the loop arguments.
    """
    # evaluate in a canonical order so the score is exactly symmetric
    # (covariances are composed in local frames, which is order-sensitive
    # at second order)
    if (z_jl.from_key, z_jl.to_key) < (z_ik.from_key, z_ik.to_key):
        z_ik, z_jl = z_jl, z_ik
    for z in (z_ik, z_jl):
        if z.from_key[0] != odom_a.robot or z.to_key[0] != odom_b.robot:
            raise ValueError(
                f"loop {z.from_key}->{z.to_key} does not connect robot "
                f"{odom_a.robot} to robot {odom_b.robot}"
            )
    i, k = z_ik.from_key[1], z_ik.to_key[1]
    j, l = z_jl.from_key[1], z_jl.to_key[1]
    pose_a, cov_a = odom_a.span(i, j)
    pose_b, cov_b = odom_b.span(l, k)
    cycle = compose(
        inverse(z_ik.measurement),
        compose(pose_a, compose(z_jl.measurement, pose_b)),
    )
    e = log_map(cycle)
    sigma = (
        cov_a
        + cov_b
        + np.linalg.inv(z_ik.information)
        + np.linalg.inv(z_jl.information)
    )
    return float(e @ np.linalg.solve(sigma, e))


def _greedy_coloring(masks, cand):
    """Vertices of cand ordered by color class; color = clique-size bound."""
    order = []
    bounds = []
    color = 0
    remaining = cand
    while remaining:
        color += 1
        avail = remaining
        while avail:
            v = (avail & -avail).bit_length() - 1
            order.append(v)
            bounds.append(color)
            avail &= ~masks[v]
            avail &= ~(1 << v)
            remaining &= ~(1 << v)
    return order, bounds


def _clique_size(masks, cand, stop_at=None) -> int:
    """Exact maximum clique size within the cand bitmask."""
    best = 0

    def expand(size, cand):
        nonlocal best
        if not cand:
            best = max(best, size)
            return
        order, bounds = _greedy_coloring(masks, cand)
        for pos in range(len(order) - 1, -1, -1):
            if stop_at is not None and best >= stop_at:
                return
            v = order[pos]
            if size + bounds[pos] <= best:
                return
            expand(size + 1, cand & masks[v])
            cand &= ~(1 << v)

    expand(0, cand)
    return best


def max_clique(graph: ConsistencyGraph, limit: int = MAX_VERTICES) -> list:
    """Exact maximum clique, returned as vertex ids in input order.

    Among all maximum cliques the lexicographically smallest position set
    is returned, so results are deterministic.
    """
    n = len(graph.vertices)
    if n > limit:
        raise SizeLimit(f"consistency graph has {n} vertices, cap is {limit}")
    if n == 0:
        return []
    masks = []
    for row in graph.adjacency:
        m = 0
        for idx in np.flatnonzero(row):
            m |= 1 << int(idx)
        masks.append(m)
    full = (1 << n) - 1
    target = _clique_size(masks, full)
    chosen = []
    cand = full
    for v in range(n):
        if not (cand >> v) & 1:
            continue
        rest = cand & masks[v]
        need = target - len(chosen) - 1
        if _clique_size(masks, rest, stop_at=need) >= need:
            chosen.append(v)
            cand = rest
            if len(chosen) == target:
                break
    return [graph.vertices[v] for v in chosen]


def consistency_graph(loops, odom_a: OdometryChain, odom_b: OdometryChain,
                      gamma: float = DEFAULT_GAMMA) -> ConsistencyGraph:
    """Pairwise-consistency graph over inter-robot loops, scores recorded."""
    n = len(loops)
    values = np.zeros((n, n))
    adjacency = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            values[i, j] = values[j, i] = pairwise_consistency(
                loops[i], loops[j], odom_a, odom_b
            )
            adjacency[i, j] = adjacency[j, i] = values[i, j] <= gamma
    return ConsistencyGraph(list(range(n)), adjacency, gamma, values=values)


def pcm_filter(loops, odom_a: OdometryChain, odom_b: OdometryChain,
               gamma: float = DEFAULT_GAMMA) -> list:
    """Largest mutually-consistent subset of loops, input order preserved."""
    loops = list(loops)
    if not loops:
        return []
    pairs = {(z.from_key[0], z.to_key[0]) for z in loops}
    if len(pairs) != 1:
        raise ValueError(f"loops span multiple robot pairs: {sorted(pairs)}")
    graph = consistency_graph(loops, odom_a, odom_b, gamma)
    keep = sorted(max_clique(graph))
    return [loops[i] for i in keep]

"""Levenberg-Marquardt pose-graph optimization with an optional GNC-TLS
robust wrapper.

The robust wrapper follows the graduated scheme: start from a control
parameter that makes the truncated-least-squares surrogate nearly convex,
alternate weighted solves with closed-form weight updates, and anneal the
parameter until the weights stabilize. Odometry edges can be pinned to
weight 1 so only inter-robot loops are subject to rejection.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.stats

from ..errors import Disconnected, MissingNode, NotPositiveDefinite
from ..geom import Pose3, adjoint, compose, exp_map, inverse, log_map, se3_right_jacobian_inv
from .types import Edge, PoseGraph

DEFAULT_BARC2 = float(scipy.stats.chi2.ppf(0.997, df=6))


@dataclass
class OptimizeConfig:
    robust: str = "none"  # none | gnc_tls
    barc2: float = DEFAULT_BARC2
    mu_update: float = 1.4
    max_outer: int = 50
    pin_odometry: bool = True
    max_inner: int = 50
    lm_lambda0: float = 1e-6
    convergence_eps: float = 1e-10

    def __post_init__(self):
        if self.robust not in ("none", "gnc_tls"):
            raise ValueError(f"unknown robust mode {self.robust!r}")
        if self.mu_update <= 1.0:
            raise ValueError("mu_update must be > 1")
        if self.barc2 <= 0.0:
            raise ValueError("barc2 must be positive")


@dataclass
class OptimizeResult:
    poses: dict  # (robot, index) -> Pose3
    final_chi2: float
    edge_weights: np.ndarray  # aligned with graph.edges
    chi2_history: list  # weighted chi2 after each outer iteration
    inner_iterations: int


def residual(edge: Edge, poses: dict) -> np.ndarray:
    """log of the discrepancy between the measured and current relative pose."""
    try:
        x_from = poses[edge.from_key]
        x_to = poses[edge.to_key]
    except KeyError as exc:
        raise MissingNode(f"edge endpoint {exc.args[0]} has no pose")
    return log_map(compose(inverse(edge.measurement), compose(inverse(x_from), x_to)))


def residual_jacobians(edge: Edge, poses: dict):
    """(r, J_from, J_to) for right-multiplied increments x <- x exp(delta)."""
    x_from = poses[edge.from_key]
    x_to = poses[edge.to_key]
    r = residual(edge, poses)
    j_inv = se3_right_jacobian_inv(r)
    j_to = j_inv
    j_from = -j_inv @ adjoint(compose(inverse(x_to), x_from))
    return r, j_from, j_to


def _chi2(graph, poses, weights) -> float:
    total = 0.0
    for e, w in zip(graph.edges, weights):
        if w == 0.0:
            continue
        r = residual(e, poses)
        total += w * float(r @ e.information @ r)
    return total


def _solve_normal_equations(h, b, lam):
    try:
        factor = scipy.linalg.cho_factor(h + lam * np.eye(len(h)), lower=True)
        return scipy.linalg.cho_solve(factor, -b)
    except scipy.linalg.LinAlgError:
        return None


def _lm(graph, poses, weights, cfg, anchor):
    """Weighted LM from the given poses; returns (poses, chi2, iterations)."""
    free = [key for key in graph.nodes if key != anchor]
    slot = {key: i for i, key in enumerate(free)}
    n = len(free)
    poses = dict(poses)
    if n == 0:
        return poses, _chi2(graph, poses, weights), 0

    lam = cfg.lm_lambda0
    chi2 = _chi2(graph, poses, weights)
    iterations = 0
    for _ in range(cfg.max_inner):
        h = np.zeros((6 * n, 6 * n))
        b = np.zeros(6 * n)
        for e, w in zip(graph.edges, weights):
            if w == 0.0:
                continue
            r, j_from, j_to = residual_jacobians(e, poses)
            omega = w * e.information
            sf = slot.get(e.from_key)
            st = slot.get(e.to_key)
            if sf is not None:
                b[6 * sf : 6 * sf + 6] += j_from.T @ omega @ r
                h[6 * sf : 6 * sf + 6, 6 * sf : 6 * sf + 6] += j_from.T @ omega @ j_from
            if st is not None:
                b[6 * st : 6 * st + 6] += j_to.T @ omega @ r
                h[6 * st : 6 * st + 6, 6 * st : 6 * st + 6] += j_to.T @ omega @ j_to
            if sf is not None and st is not None:
                block = j_from.T @ omega @ j_to
                h[6 * sf : 6 * sf + 6, 6 * st : 6 * st + 6] += block
                h[6 * st : 6 * st + 6, 6 * sf : 6 * sf + 6] += block.T

        accepted = False
        for _ in range(12):
            delta = _solve_normal_equations(h, b, lam)
            if delta is None:
                lam = max(lam, 1e-9) * 10.0
                continue
            candidate = dict(poses)
            for key, i in slot.items():
                candidate[key] = compose(poses[key], exp_map(delta[6 * i : 6 * i + 6]))
            new_chi2 = _chi2(graph, candidate, weights)
            if new_chi2 <= chi2:
                poses = candidate
                improvement = chi2 - new_chi2
                chi2 = new_chi2
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 4.0
            if lam > 1e14:
                break
        iterations += 1
        if not accepted:
            if _solve_normal_equations(h, b, lam) is None:
                raise NotPositiveDefinite("normal equations not positive definite")
            break  # no improving step exists at any damping: converged
        if improvement <= cfg.convergence_eps * max(1.0, chi2):
            break
    return poses, chi2, iterations


def _tls_weight(r2: float, mu: float, barc2: float) -> float:
    lo = mu / (mu + 1.0) * barc2
    hi = (mu + 1.0) / mu * barc2
    if r2 <= lo:
        return 1.0
    if r2 >= hi:
        return 0.0
    return float(np.sqrt(barc2 * mu * (mu + 1.0) / r2) - mu)


def optimize(graph: PoseGraph, cfg: OptimizeConfig = None, anchor=None) -> OptimizeResult:
    """Minimize the weighted graph error from the stored node poses.

    The anchor node (lowest (robot, index) by default) is the gauge fix
    and keeps its initial pose. Edge gnc_weight fields are updated in
    place.
    """
    cfg = cfg or OptimizeConfig()
    if not graph.connected():
        raise Disconnected("pose graph is not weakly connected")
    graph.validate()
    if anchor is None:
        anchor = graph.anchor_key()
    elif anchor not in graph.nodes:
        raise MissingNode(f"anchor {anchor} is not a node")
    poses = dict(graph.nodes)
    m = len(graph.edges)
    weights = np.ones(m)
    history = []
    total_inner = 0

    if cfg.robust == "none" or m == 0:
        poses, chi2, total_inner = _lm(graph, poses, weights, cfg, anchor)
        history.append(chi2)
    else:
        pinned = np.array(
            [cfg.pin_odometry and e.kind == "odometry" for e in graph.edges]
        )
        r2 = np.array([residual(e, poses) @ e.information @ residual(e, poses)
                       for e in graph.edges])
        r2_max = float(r2[~pinned].max()) if (~pinned).any() else 0.0
        if 2.0 * r2_max <= cfg.barc2:
            # already within the inlier band everywhere: plain solve
            poses, chi2, total_inner = _lm(graph, poses, weights, cfg, anchor)
            history.append(chi2)
        else:
            mu = cfg.barc2 / (2.0 * r2_max - cfg.barc2)
            for _ in range(cfg.max_outer):
                poses, chi2, inner = _lm(graph, poses, weights, cfg, anchor)
                total_inner += inner
                history.append(chi2)
                new_weights = weights.copy()
                for i, e in enumerate(graph.edges):
                    if pinned[i]:
                        continue
                    r = residual(e, poses)
                    new_weights[i] = _tls_weight(float(r @ e.information @ r), mu, cfg.barc2)
                # a crushed outlier's weight still creeps ~sqrt(mu) per anneal
                # until it exits the transition band, so the tolerance must be
                # tight or the loop stops with residual leakage
                stable = np.abs(new_weights - weights).max() < 1e-6
                weights = new_weights
                if stable and len(history) > 1:
                    break
                mu *= cfg.mu_update
            chi2 = _chi2(graph, poses, weights)

    for e, w in zip(graph.edges, weights):
        e.gnc_weight = float(w)
    return OptimizeResult(
        poses=poses,
        final_chi2=float(chi2),
        edge_weights=weights,
        chi2_history=history,
        inner_iterations=total_inner,
    )

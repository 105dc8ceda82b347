"""Pose-graph data model.

Nodes are keyed by (robot, index) where index is the keyframe index, so a
graph built from filtered keyframes keeps its original numbering with
gaps. Odometry edges link successive retained keyframes of one robot;
inter-robot edges come from verified cross-robot registrations.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import MissingNode, NotPositiveDefinite
from ..geom import Pose3

KINDS = ("odometry", "inter_robot")
CATEGORIES = ("correct", "wrong_pr", "wrong_pcr", "unknown")

# rotation-first internal ordering: rad^-2 then m^-2
DEFAULT_ODOMETRY_INFO = np.diag([400.0, 400.0, 400.0, 100.0, 100.0, 100.0])


def check_information(info) -> np.ndarray:
    info = np.asarray(info, dtype=float)
    if info.shape != (6, 6):
        raise NotPositiveDefinite(f"information must be 6x6, got {info.shape}")
    if not np.allclose(info, info.T, atol=1e-9):
        raise NotPositiveDefinite("information matrix not symmetric")
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("information matrix not positive definite")
    return 0.5 * (info + info.T)


@dataclass
class Edge:
    from_key: tuple  # (robot, index)
    to_key: tuple
    measurement: Pose3  # relative pose, from -> to
    information: np.ndarray  # 6x6, rotation-first block ordering
    kind: str = "odometry"
    category: str = "unknown"
    gnc_weight: float = 1.0

    def __post_init__(self):
        self.from_key = (int(self.from_key[0]), int(self.from_key[1]))
        self.to_key = (int(self.to_key[0]), int(self.to_key[1]))
        if self.kind not in KINDS:
            raise ValueError(f"unknown edge kind {self.kind!r}")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown edge category {self.category!r}")
        self.information = check_information(self.information)
        if self.kind == "odometry":
            ra, ia = self.from_key
            rb, ib = self.to_key
            if ra != rb:
                raise ValueError(f"odometry edge crosses robots {ra} and {rb}")
            if ib <= ia:
                raise ValueError(f"odometry edge must go forward: {ia} -> {ib}")
            if self.category == "unknown":
                self.category = "correct"
        elif self.from_key[0] == self.to_key[0]:
            raise ValueError("inter_robot edge endpoints share a robot")


class PoseGraph:
    def __init__(self):
        self.nodes: dict = {}  # (robot, index) -> Pose3
        self.edges: list = []

    def add_node(self, key: tuple, pose: Pose3):
        key = (int(key[0]), int(key[1]))
        self.nodes[key] = pose
        return key

    def add_edge(self, edge: Edge):
        for key in (edge.from_key, edge.to_key):
            if key not in self.nodes:
                raise MissingNode(f"edge endpoint {key} not in graph")
        self.edges.append(edge)
        return edge

    def robots(self) -> list:
        return sorted({robot for robot, _ in self.nodes})

    def odometry_edges(self) -> list:
        return [e for e in self.edges if e.kind == "odometry"]

    def inter_robot_edges(self) -> list:
        return [e for e in self.edges if e.kind == "inter_robot"]

    def validate(self):
        """Check the chain structure of the odometry subgraph."""
        outgoing: dict = {}
        incoming: dict = {}
        for e in self.odometry_edges():
            if e.from_key in outgoing:
                raise ValueError(f"odometry chain branches at {e.from_key}")
            if e.to_key in incoming:
                raise ValueError(f"odometry chain merges at {e.to_key}")
            outgoing[e.from_key] = e.to_key
            incoming[e.to_key] = e.from_key
        return self

    def anchor_key(self) -> tuple:
        if not self.nodes:
            raise MissingNode("empty graph has no anchor")
        return min(self.nodes)

    def connected(self) -> bool:
        """Weak connectivity over all edges."""
        if not self.nodes:
            return True
        adjacency: dict = {key: [] for key in self.nodes}
        for e in self.edges:
            adjacency[e.from_key].append(e.to_key)
            adjacency[e.to_key].append(e.from_key)
        seen = set()
        stack = [next(iter(self.nodes))]
        while stack:
            key = stack.pop()
            if key in seen:
                continue
            seen.add(key)
            stack.extend(adjacency[key])
        return len(seen) == len(self.nodes)

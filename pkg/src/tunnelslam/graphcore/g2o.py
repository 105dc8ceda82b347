"""g2o text-format reading and writing.

Grammar:
  VERTEX_SE3:QUAT id x y z qx qy qz qw
  EDGE_SE3:QUAT id1 id2 x y z qx qy qz qw i11 i12 ... i66
with the 21 upper-triangular information entries row-major and floats at 12
significant digits. Node ids pack (robot, index) as robot*1000000 + index.

g2o orders the information blocks translation-first while this package is
rotation-first internally, so both directions permute the 6x6. Edge kind,
category, and GNC weight ride in a sidecar CSV next to the graph file.
"""

import os

import numpy as np

from ..errors import ParseError
from ..geom import Pose3, quat_normalize
from .types import CATEGORIES, KINDS, Edge, PoseGraph

ID_STRIDE = 1000000
# maps internal (rotation, translation) ordering to g2o (translation, rotation)
_PERM = np.array([3, 4, 5, 0, 1, 2])
_TRIU = np.triu_indices(6)


def pack_id(key: tuple) -> int:
    robot, index = key
    if not 0 <= index < ID_STRIDE:
        raise ValueError(f"node index {index} out of range for id packing")
    return robot * ID_STRIDE + index


def unpack_id(node_id: int) -> tuple:
    return divmod(node_id, ID_STRIDE)


def sidecar_path(path) -> str:
    path = os.fspath(path)
    stem = path[: -len(".g2o")] if path.endswith(".g2o") else path
    return stem + ".edges.csv"


def _fmt(values) -> str:
    return " ".join(f"{v:.12g}" for v in values)


def _info_to_g2o(info: np.ndarray) -> np.ndarray:
    return info[np.ix_(_PERM, _PERM)][_TRIU]


def _info_from_g2o(upper: np.ndarray) -> np.ndarray:
    m = np.zeros((6, 6))
    m[_TRIU] = upper
    m = m + np.triu(m, 1).T
    inv = np.argsort(_PERM)
    return m[np.ix_(inv, inv)]


def write_g2o(graph: PoseGraph, path, sidecar: bool = True):
    """Write nodes then edges, insertion-ordered; optionally the sidecar."""
    lines = []
    for key, pose in graph.nodes.items():
        q = quat_normalize(pose.q)
        lines.append(
            f"VERTEX_SE3:QUAT {pack_id(key)} "
            f"{_fmt([*pose.t, q[1], q[2], q[3], q[0]])}"
        )
    for e in graph.edges:
        q = quat_normalize(e.measurement.q)
        lines.append(
            f"EDGE_SE3:QUAT {pack_id(e.from_key)} {pack_id(e.to_key)} "
            f"{_fmt([*e.measurement.t, q[1], q[2], q[3], q[0]])} "
            f"{_fmt(_info_to_g2o(e.information))}"
        )
    with open(path, "w") as f:
        f.write("".join(line + "\n" for line in lines))
    if sidecar:
        with open(sidecar_path(path), "w") as f:
            f.write("id1,id2,kind,category,gnc_weight\n")
            for e in graph.edges:
                f.write(
                    f"{pack_id(e.from_key)},{pack_id(e.to_key)},"
                    f"{e.kind},{e.category},{e.gnc_weight:.12g}\n"
                )


def _read_sidecar(path) -> dict:
    table = {}
    with open(path) as f:
        header = f.readline().strip()
        if header != "id1,id2,kind,category,gnc_weight":
            raise ParseError(f"{path}: unexpected sidecar header {header!r}")
        for ln, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ParseError(f"{path}: bad sidecar column count", line=ln)
            id1, id2, kind, category, weight = parts
            if kind not in KINDS or category not in CATEGORIES:
                raise ParseError(f"{path}: bad kind/category {kind!r}/{category!r}", line=ln)
            table[(int(id1), int(id2))] = (kind, category, float(weight))
    return table


def read_g2o(path, sidecar: bool = True) -> PoseGraph:
    """Parse a graph; the sidecar is applied when present.

    Without sidecar metadata, same-robot edges are odometry and cross-robot
    edges are inter_robot with category unknown.
    """
    side = {}
    if sidecar and os.path.exists(sidecar_path(path)):
        side = _read_sidecar(sidecar_path(path))
    graph = PoseGraph()
    pending = []
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "VERTEX_SE3:QUAT":
                    if len(parts) != 9:
                        raise ValueError(f"expected 9 fields, got {len(parts)}")
                    node_id = int(parts[1])
                    x, y, z, qx, qy, qz, qw = map(float, parts[2:9])
                    graph.add_node(unpack_id(node_id), Pose3([qw, qx, qy, qz], [x, y, z]))
                elif tag == "EDGE_SE3:QUAT":
                    if len(parts) != 31:
                        raise ValueError(f"expected 31 fields, got {len(parts)}")
                    id1, id2 = int(parts[1]), int(parts[2])
                    x, y, z, qx, qy, qz, qw = map(float, parts[3:10])
                    info = _info_from_g2o(np.array([float(v) for v in parts[10:31]]))
                    pending.append((ln, id1, id2, Pose3([qw, qx, qy, qz], [x, y, z]), info))
                else:
                    raise ValueError(f"unknown record {tag!r}")
            except ParseError:
                raise
            except Exception as exc:
                raise ParseError(f"{path}: {exc}", line=ln)
    for ln, id1, id2, measurement, info in pending:
        key1, key2 = unpack_id(id1), unpack_id(id2)
        kind, category, weight = side.get(
            (id1, id2),
            ("odometry" if key1[0] == key2[0] else "inter_robot", "unknown", 1.0),
        )
        try:
            graph.add_edge(
                Edge(key1, key2, measurement, info, kind=kind,
                     category=category, gnc_weight=weight)
            )
        except Exception as exc:
            raise ParseError(f"{path}: {exc}", line=ln)
    return graph

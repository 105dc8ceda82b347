"""Dataset serialization: PLY scans and CSV trajectories/increments.

Scans are binary little-endian PLY with float32 x, y, z, intensity.
Trajectory rows are ``stamp,robot,x,y,z,qw,qx,qy,qz``; wheel odometry rows
are ``stamp,dx,dy,dz,dqw,dqx,dqy,dqz`` (increment reaching that stamp).
"""

import numpy as np

from ..errors import ParseError
from ..geom import PointCloud, Pose3
from .trajectory import Trajectory

_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {count}
property float x
property float y
property float z
property float intensity
end_header
"""


def write_ply(path, cloud: PointCloud):
    data = np.zeros((len(cloud), 4), dtype="<f4")
    data[:, :3] = cloud.points
    if cloud.intensity is not None:
        data[:, 3] = cloud.intensity
    with open(path, "wb") as f:
        f.write(_PLY_HEADER.format(count=len(cloud)).encode("ascii"))
        f.write(data.tobytes())


def read_ply(path) -> PointCloud:
    with open(path, "rb") as f:
        blob = f.read()
    marker = b"end_header\n"
    pos = blob.find(marker)
    if pos < 0:
        raise ParseError(f"{path}: missing PLY header terminator")
    header = blob[:pos].decode("ascii", errors="replace")
    count = None
    for line in header.splitlines():
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
    if count is None:
        raise ParseError(f"{path}: missing vertex element")
    data = np.frombuffer(blob[pos + len(marker) :], dtype="<f4", count=count * 4)
    data = data.reshape(count, 4).astype(float)
    return PointCloud(data[:, :3], intensity=data[:, 3])


def write_trajectory_csv(path, trajectories):
    """One file for any number of robots; rows grouped by robot id."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    with open(path, "w") as f:
        f.write("stamp,robot,x,y,z,qw,qx,qy,qz\n")
        for traj in trajectories:
            for stamp, pose in zip(traj.stamps, traj.poses):
                vals = [stamp, *pose.t, *pose.q]
                f.write(
                    f"{vals[0]:.17g},{traj.robot},"
                    + ",".join(f"{v:.17g}" for v in vals[1:])
                    + "\n"
                )


def read_trajectory_csv(path) -> list:
    """All trajectories in the file, one per robot id, stamp-ordered."""
    rows = {}
    with open(path) as f:
        header = f.readline().strip()
        if header != "stamp,robot,x,y,z,qw,qx,qy,qz":
            raise ParseError(f"{path}: unexpected trajectory header {header!r}")
        for ln, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 9:
                raise ParseError(f"{path}: bad column count", line=ln)
            stamp = float(parts[0])
            robot = int(parts[1])
            x, y, z, qw, qx, qy, qz = map(float, parts[2:])
            rows.setdefault(robot, []).append((stamp, Pose3([qw, qx, qy, qz], [x, y, z])))
    out = []
    for robot in sorted(rows):
        entries = sorted(rows[robot], key=lambda e: e[0])
        out.append(Trajectory(robot, [e[0] for e in entries], [e[1] for e in entries]))
    return out


def write_increments_csv(path, stamps, increments):
    """stamps has one entry per increment: the stamp it arrives at."""
    with open(path, "w") as f:
        f.write("stamp,dx,dy,dz,dqw,dqx,dqy,dqz\n")
        for stamp, inc in zip(stamps, increments):
            vals = [stamp, *inc.t, *inc.q]
            f.write(",".join(f"{v:.17g}" for v in vals) + "\n")


def read_increments_csv(path):
    stamps, increments = [], []
    with open(path) as f:
        header = f.readline().strip()
        if header != "stamp,dx,dy,dz,dqw,dqx,dqy,dqz":
            raise ParseError(f"{path}: unexpected increments header {header!r}")
        for ln, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 8:
                raise ParseError(f"{path}: bad column count", line=ln)
            stamps.append(float(parts[0]))
            dx, dy, dz, dqw, dqx, dqy, dqz = map(float, parts[1:])
            increments.append(Pose3([dqw, dqx, dqy, dqz], [dx, dy, dz]))
    return np.array(stamps), increments

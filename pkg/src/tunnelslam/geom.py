"""Rigid-body geometry: poses, twists, point clouds, alignment.

Conventions used throughout the package:

* Quaternions are stored as (w, x, y, z), unit norm, with w >= 0 so each
  rotation has a single representative of the double cover.
* Twists are 6-vectors (wx, wy, wz, tx, ty, tz): rotation first.
* ``compose`` follows transform semantics: if a maps frame B into frame A
  and b maps frame C into frame B, ``compose(a, b)`` maps C into A.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, EmptyCloud, ShapeMismatch

_EPS = 1e-10


# ---------------------------------------------------------------------------
# quaternion helpers


def quat_normalize(q):
    """Normalize to unit length and pick the w >= 0 representative."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < _EPS:
        raise DegenerateInput("cannot normalize a near-zero quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v):
    """Rotate one 3-vector or an (N, 3) array by quaternion q."""
    R = quat_to_matrix(q)
    v = np.asarray(v, dtype=float)
    return v @ R.T


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Shepperd's method; numerically safe for all proper rotations."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def rotvec_to_quat(r):
    r = np.asarray(r, dtype=float)
    angle = np.linalg.norm(r)
    if angle < 1e-8:
        # sin(a/2)/a ~ 1/2 - a^2/48
        scale = 0.5 - angle * angle / 48.0
        return quat_normalize(np.concatenate([[1.0 - angle * angle / 8.0], r * scale]))
    axis = r / angle
    half = 0.5 * angle
    return quat_normalize(np.concatenate([[np.cos(half)], axis * np.sin(half)]))


def quat_to_rotvec(q):
    """Rotation vector with angle in [0, pi].

    At exactly pi the axis sign is inherited from the stored vector part,
    which the w >= 0 convention leaves free; this is the documented branch.
    """
    w, v = q[0], np.asarray(q[1:], dtype=float)
    s = np.linalg.norm(v)
    if s < 1e-8:
        # atan2(s, w)/s ~ (1/w)(1 - s^2/(3 w^2)) for small s
        return v * (2.0 / w) * (1.0 - s * s / (3.0 * w * w))
    angle = 2.0 * np.arctan2(s, w)
    return v * (angle / s)


# ---------------------------------------------------------------------------
# pose and cloud types


@dataclass
class Pose3:
    """Rigid transform: unit quaternion (w, x, y, z) plus translation."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q = quat_normalize(np.asarray(self.q, dtype=float))
        self.t = np.asarray(self.t, dtype=float).reshape(3).copy()

    @staticmethod
    def identity():
        return Pose3()

    @staticmethod
    def from_matrix(T):
        T = np.asarray(T, dtype=float)
        return Pose3(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @staticmethod
    def from_rotvec_trans(r, t):
        return Pose3(rotvec_to_quat(r), t)

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.q)
        T[:3, 3] = self.t
        return T

    def rotation_matrix(self):
        return quat_to_matrix(self.q)

    def transform_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts @ quat_to_matrix(self.q).T + self.t

    def __repr__(self):
        q = np.round(self.q, 6)
        t = np.round(self.t, 6)
        return f"Pose3(q={q.tolist()}, t={t.tolist()})"


def compose(a: Pose3, b: Pose3) -> Pose3:
    return Pose3(quat_mul(a.q, b.q), quat_rotate(a.q, b.t) + a.t)


def inverse(p: Pose3) -> Pose3:
    qc = quat_conj(p.q)
    return Pose3(qc, -quat_rotate(qc, p.t))


def relative(a: Pose3, b: Pose3) -> Pose3:
    """Pose of b expressed in the frame of a: a^-1 * b."""
    return compose(inverse(a), b)


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_left_jacobian(w):
    """Left Jacobian of SO(3); also the V matrix mapping twist translation."""
    w = np.asarray(w, dtype=float)
    angle = np.linalg.norm(w)
    W = skew(w)
    if angle < 1e-6:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    a2 = angle * angle
    c1 = (1.0 - np.cos(angle)) / a2
    c2 = (angle - np.sin(angle)) / (a2 * angle)
    return np.eye(3) + c1 * W + c2 * (W @ W)


def so3_left_jacobian_inv(w):
    w = np.asarray(w, dtype=float)
    angle = np.linalg.norm(w)
    W = skew(w)
    if angle < 1e-6:
        return np.eye(3) - 0.5 * W + W @ W / 12.0
    # beta = (1 - angle / (2 tan(angle/2))) / angle^2, stable through pi
    half = 0.5 * angle
    beta = (1.0 - half / np.tan(half)) / (angle * angle)
    return np.eye(3) - 0.5 * W + beta * (W @ W)


def exp_map(xi) -> Pose3:
    """Exponential of a twist (wx, wy, wz, tx, ty, tz)."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    return Pose3(rotvec_to_quat(w), so3_left_jacobian(w) @ v)


def log_map(p: Pose3):
    """Twist whose exponential is p; rotation angle in [0, pi]."""
    w = quat_to_rotvec(p.q)
    v = so3_left_jacobian_inv(w) @ p.t
    return np.concatenate([w, v])


def adjoint(p: Pose3):
    """6x6 adjoint in (rotation, translation) block order."""
    R = quat_to_matrix(p.q)
    A = np.zeros((6, 6))
    A[:3, :3] = R
    A[3:, 3:] = R
    A[3:, :3] = skew(p.t) @ R
    return A


def _se3_q_block(w, v):
    """Coupling block of the SE(3) left Jacobian.

    Closed form of the double integral over exp((s-u)W) V exp(uW), written
    on the product basis W^i V W^j; the adjoint power series
    sum_{n>=1} ad^n/(n+1)! is the oracle in the tests.
    """
    W = skew(w)
    V = skew(v)
    angle = np.linalg.norm(w)
    a2 = angle * angle
    if angle < 0.1:
        a4 = a2 * a2
        ca = 1.0 / 6.0 - a2 / 120.0 + a4 / 5040.0
        cb = 1.0 / 24.0 - a2 / 720.0 + a4 / 40320.0
        ce = 1.0 / 24.0 - a2 / 360.0 + a4 / 13440.0
        cf = 1.0 / 120.0 - a2 / 2520.0 + a4 / 120960.0
        cg = 1.0 / 720.0 - a2 / 20160.0 + a4 / 1209600.0
    else:
        sin_a, cos_a = np.sin(angle), np.cos(angle)
        a3, a4 = a2 * angle, a2 * a2
        ca = (angle - sin_a) / a3
        cb = (0.5 * a2 + cos_a - 1.0) / a4
        ce = (1.0 - cos_a - 0.5 * angle * sin_a) / a4
        cf = (angle * (cos_a + 2.0) - 3.0 * sin_a) / (2.0 * a4 * angle)
        cg = (a2 + angle * sin_a + 4.0 * cos_a - 4.0) / (2.0 * a4 * a2)
    WV, VW, WW = W @ V, V @ W, W @ W
    return (
        0.5 * V
        + ca * (WV + VW)
        + cb * (WW @ V + V @ WW)
        + ce * (WV @ W)
        + cf * (WV @ WW + WW @ VW)
        + cg * (WW @ V @ WW)
    )


def se3_left_jacobian(xi):
    xi = np.asarray(xi, dtype=float).reshape(6)
    J3 = so3_left_jacobian(xi[:3])
    J = np.zeros((6, 6))
    J[:3, :3] = J3
    J[3:, 3:] = J3
    J[3:, :3] = _se3_q_block(xi[:3], xi[3:])
    return J


def se3_right_jacobian_inv(xi):
    """Inverse right Jacobian of SE(3); right Jacobian is J_left(-xi)."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    J3i = so3_left_jacobian_inv(-xi[:3])
    Q = _se3_q_block(-xi[:3], -xi[3:])
    Ji = np.zeros((6, 6))
    Ji[:3, :3] = J3i
    Ji[3:, 3:] = J3i
    Ji[3:, :3] = -J3i @ Q @ J3i
    return Ji


# ---------------------------------------------------------------------------
# point clouds


@dataclass
class PointCloud:
    """Nx3 float64 positions with optional per-point intensity."""

    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ShapeMismatch("point cloud contains non-finite coordinates")
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
            if len(self.intensity) != len(self.points):
                raise ShapeMismatch(
                    f"intensity length {len(self.intensity)} != point count {len(self.points)}"
                )

    def __len__(self):
        return self.points.shape[0]

    def transform(self, pose: Pose3) -> "PointCloud":
        return PointCloud(pose.transform_points(self.points), self.intensity)


@dataclass
class ObbSummary:
    """Principal-axis bounding box: center, orthonormal axes, extents."""

    center: np.ndarray
    axes: np.ndarray  # rows are axis directions, ordered by descending extent
    extents: np.ndarray  # full side lengths, descending


def oriented_bbox(cloud: PointCloud) -> ObbSummary:
    """Principal-component bounding box of a cloud.

    Axes come from the eigenvectors of the covariance of the mean-centered
    positions (intensity ignored), are re-ordered by descending projected
    extent, and each axis is sign-fixed so its first nonzero component is
    positive. Fewer than 3 points is degenerate; a cloud of identical
    points yields zero extents with identity axes.
    """
    pts = cloud.points
    if len(pts) < 3:
        raise DegenerateInput(f"oriented bounding box needs >= 3 points, got {len(pts)}")
    center = pts.mean(axis=0)
    centered = pts - center
    cov = centered.T @ centered / len(pts)
    if np.allclose(cov, 0.0, atol=1e-24):
        return ObbSummary(center, np.eye(3), np.zeros(3))
    _, vecs = np.linalg.eigh(cov)
    proj = centered @ vecs  # columns are candidate axes
    extents = proj.max(axis=0) - proj.min(axis=0)
    order = np.argsort(-extents, kind="stable")
    axes = vecs.T[order]
    for i in range(3):
        nz = np.nonzero(np.abs(axes[i]) > 1e-12)[0]
        if len(nz) and axes[i, nz[0]] < 0:
            axes[i] = -axes[i]
    return ObbSummary(center, axes, extents[order])


def umeyama_align(source, target) -> Pose3:
    """Least-squares rigid transform mapping source points onto target points.

    Closed-form SVD solution without scale estimation; the reflection case
    is repaired by negating the last singular direction. Raises
    DegenerateInput for fewer than 3 pairs or collinear sources.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    tgt = np.asarray(target, dtype=float).reshape(-1, 3)
    if src.shape != tgt.shape:
        raise ShapeMismatch(f"point sets differ in shape: {src.shape} vs {tgt.shape}")
    if len(src) < 3:
        raise DegenerateInput(f"rigid alignment needs >= 3 point pairs, got {len(src)}")
    mu_s, mu_t = src.mean(axis=0), tgt.mean(axis=0)
    H = (src - mu_s).T @ (tgt - mu_t)
    U, S, Vt = np.linalg.svd(H)
    if S[1] < 1e-9 * max(S[0], 1e-300) or S[0] < 1e-12:
        raise DegenerateInput("source points are collinear or coincident")
    D = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        D[2, 2] = -1.0
    R = Vt.T @ D @ U.T
    return Pose3(matrix_to_quat(R), mu_t - R @ mu_s)


def rotation_angle(p: Pose3) -> float:
    """Geodesic rotation angle of a pose, in radians."""
    return float(np.linalg.norm(quat_to_rotvec(p.q)))


def pose_error(a: Pose3, b: Pose3):
    """(translation distance, rotation angle) between two poses."""
    d = relative(a, b)
    return float(np.linalg.norm(d.t)), rotation_angle(d)

"""Geometry core: oracles are plain 4x4 matrix algebra and series/finite
differences, independent of the quaternion code under test."""

import numpy as np
import pytest

from tunnelslam import geom
from tunnelslam.errors import DegenerateInput, ShapeMismatch
from tunnelslam.geom import (
    ObbSummary,
    PointCloud,
    Pose3,
    adjoint,
    compose,
    exp_map,
    inverse,
    log_map,
    oriented_bbox,
    se3_left_jacobian,
    se3_right_jacobian_inv,
    skew,
    umeyama_align,
)


def random_pose(rng, max_angle=np.pi * 0.95, max_trans=10.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    t = rng.uniform(-max_trans, max_trans, size=3)
    return Pose3(geom.rotvec_to_quat(axis * angle), t)


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# ---------------------------------------------------------------------------
# compose / inverse against the homogeneous-matrix oracle


def test_compose_matches_matrix_oracle_example():
    # 90 degree yaw plus unit x step, applied twice
    a = Pose3(geom.matrix_to_quat(rot_z(np.pi / 2)), [1.0, 0.0, 0.0])
    c = compose(a, a)
    expected = a.matrix() @ a.matrix()
    np.testing.assert_allclose(c.matrix(), expected, atol=1e-12)
    np.testing.assert_allclose(c.t, [1.0, 1.0, 0.0], atol=1e-12)
    assert abs(geom.rotation_angle(c) - np.pi) < 1e-12


def test_compose_random_matches_matrix_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        np.testing.assert_allclose(
            compose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-9
        )


def test_inverse_matches_matrix_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = random_pose(rng)
        np.testing.assert_allclose(inverse(p).matrix(), np.linalg.inv(p.matrix()), atol=1e-9)
        round_trip = compose(p, inverse(p))
        np.testing.assert_allclose(round_trip.matrix(), np.eye(4), atol=1e-9)


def test_quaternion_canonical_sign():
    p = Pose3([-1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    assert p.q[0] >= 0.0
    rng = np.random.default_rng(2)
    for _ in range(50):
        q = rng.normal(size=4)
        assert geom.quat_normalize(q)[0] >= 0.0
        assert abs(np.linalg.norm(geom.quat_normalize(q)) - 1.0) < 1e-12


def test_matrix_quat_round_trip_near_pi():
    for axis in np.eye(3):
        R = geom.quat_to_matrix(geom.rotvec_to_quat(axis * np.pi))
        np.testing.assert_allclose(geom.quat_to_matrix(geom.matrix_to_quat(R)), R, atol=1e-12)


# ---------------------------------------------------------------------------
# exp / log


def test_exp_map_pure_yaw():
    p = exp_map([0.0, 0.0, np.pi / 2, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(p.rotation_matrix(), rot_z(np.pi / 2), atol=1e-12)
    np.testing.assert_allclose(p.t, 0.0, atol=1e-12)


def test_exp_log_round_trip_sweep():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(300):
        p = random_pose(rng)
        p2 = exp_map(log_map(p))
        worst = max(worst, np.abs(p2.matrix() - p.matrix()).max())
    assert worst < 1e-9


def test_log_exp_identity_on_twists_below_pi():
    rng = np.random.default_rng(4)
    for _ in range(200):
        w = rng.normal(size=3)
        w *= rng.uniform(0.0, np.pi * 0.999) / np.linalg.norm(w)
        xi = np.concatenate([w, rng.uniform(-5, 5, size=3)])
        np.testing.assert_allclose(log_map(exp_map(xi)), xi, atol=1e-9)


def test_log_map_near_pi_branch():
    # at pi the two antipodal axes describe the same rotation; the round
    # trip must still reproduce the pose
    for axis in [np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([1.0, 1.0, 0]) / np.sqrt(2)]:
        p = Pose3(geom.rotvec_to_quat(axis * np.pi), [1.0, -2.0, 3.0])
        xi = log_map(p)
        assert abs(np.linalg.norm(xi[:3]) - np.pi) < 1e-9
        np.testing.assert_allclose(exp_map(xi).matrix(), p.matrix(), atol=1e-9)


def test_exp_log_tiny_angles():
    rng = np.random.default_rng(5)
    for scale in [1e-12, 1e-9, 1e-7, 1e-4]:
        xi = rng.normal(size=6)
        xi[:3] *= scale / np.linalg.norm(xi[:3])
        np.testing.assert_allclose(log_map(exp_map(xi)), xi, atol=1e-12)


# ---------------------------------------------------------------------------
# jacobians against the adjoint power series and finite differences


def se3_left_jacobian_series(xi, terms=30):
    W = skew(xi[:3])
    V = skew(xi[3:])
    ad = np.zeros((6, 6))
    ad[:3, :3] = W
    ad[3:, 3:] = W
    ad[3:, :3] = V
    J = np.zeros((6, 6))
    term = np.eye(6)
    k = 1.0
    for n in range(terms):
        J += term / k
        term = term @ ad
        k *= n + 2
    return J


def test_se3_left_jacobian_matches_series():
    rng = np.random.default_rng(6)
    for _ in range(200):
        xi = rng.normal(size=6)
        xi[:3] *= rng.uniform(0.0, 3.0) / np.linalg.norm(xi[:3])
        xi[3:] *= 4.0
        np.testing.assert_allclose(
            se3_left_jacobian(xi), se3_left_jacobian_series(xi), atol=1e-9
        )


def test_se3_left_jacobian_small_angle_branch():
    rng = np.random.default_rng(7)
    for scale in [1e-8, 1e-5, 5e-3, 2e-2]:
        xi = rng.normal(size=6)
        xi[:3] *= scale / np.linalg.norm(xi[:3])
        np.testing.assert_allclose(
            se3_left_jacobian(xi), se3_left_jacobian_series(xi), atol=1e-10
        )


def test_right_jacobian_inverse_definition():
    # J_r maps additive twist changes to right-multiplied increments:
    # log(exp(xi) exp(d)) ~ xi + Jr^-1(xi) d  (checked by finite differences)
    rng = np.random.default_rng(8)
    h = 1e-6
    for _ in range(50):
        xi = rng.normal(size=6)
        xi[:3] *= rng.uniform(0.1, 2.5) / np.linalg.norm(xi[:3])
        Jri = se3_right_jacobian_inv(xi)
        base = exp_map(xi)
        num = np.zeros((6, 6))
        for k in range(6):
            d = np.zeros(6)
            d[k] = h
            plus = log_map(compose(base, exp_map(d)))
            minus = log_map(compose(base, exp_map(-d)))
            num[:, k] = (plus - minus) / (2 * h)
        np.testing.assert_allclose(Jri, num, atol=1e-5)


def test_adjoint_conjugation_identity():
    rng = np.random.default_rng(9)
    for _ in range(50):
        p = random_pose(rng, max_angle=2.5)
        xi = rng.normal(size=6) * 0.3
        lhs = compose(compose(p, exp_map(xi)), inverse(p))
        rhs = exp_map(adjoint(p) @ xi)
        np.testing.assert_allclose(lhs.matrix(), rhs.matrix(), atol=1e-9)


# ---------------------------------------------------------------------------
# rigid alignment


def test_umeyama_exact_recovery():
    rng = np.random.default_rng(10)
    for _ in range(50):
        pts = rng.uniform(-5, 5, size=(30, 3))
        true = random_pose(rng)
        est = umeyama_align(pts, true.transform_points(pts))
        np.testing.assert_allclose(est.matrix(), true.matrix(), atol=1e-9)


def test_umeyama_minimum_three_points():
    tri = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
    true = Pose3(geom.rotvec_to_quat([0.1, -0.2, 0.3]), [1.0, 2.0, 3.0])
    est = umeyama_align(tri, true.transform_points(tri))
    np.testing.assert_allclose(est.matrix(), true.matrix(), atol=1e-9)


def test_umeyama_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        umeyama_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.linspace(0, 1, 10), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateInput):
        umeyama_align(line, line + 1.0)
    with pytest.raises(ShapeMismatch):
        umeyama_align(np.zeros((4, 3)), np.zeros((5, 3)))


def test_umeyama_no_reflection():
    rng = np.random.default_rng(11)
    # nearly planar set invites the reflected solution; determinant must stay +1
    pts = rng.uniform(-5, 5, size=(40, 3))
    pts[:, 2] *= 1e-3
    true = random_pose(rng)
    est = umeyama_align(pts, true.transform_points(pts))
    assert np.linalg.det(est.rotation_matrix()) > 0.999


# ---------------------------------------------------------------------------
# oriented bounding box


def test_obb_axis_aligned_box():
    rng = np.random.default_rng(12)
    pts = rng.uniform(-1.0, 1.0, size=(4000, 3)) * np.array([10.0, 2.0, 1.0])
    box = oriented_bbox(PointCloud(pts))
    assert box.extents[0] >= box.extents[1] >= box.extents[2]
    np.testing.assert_allclose(box.extents, [20.0, 4.0, 2.0], rtol=0.01)
    np.testing.assert_allclose(np.abs(box.axes), np.eye(3), atol=1e-2)


def test_obb_rotation_recovery():
    # rotate a known box; recovered extents must match the originals
    rng = np.random.default_rng(13)
    pts = rng.uniform(-1.0, 1.0, size=(5000, 3)) * np.array([8.0, 3.0, 0.5])
    base = oriented_bbox(PointCloud(pts))
    for _ in range(10):
        p = random_pose(rng)
        rot = oriented_bbox(PointCloud(p.transform_points(pts)))
        np.testing.assert_allclose(rot.extents, base.extents, atol=1e-6)
        np.testing.assert_allclose(rot.center, p.transform_points(base.center[None])[0], atol=1e-6)


def test_obb_axes_orthonormal_and_sign_fixed():
    rng = np.random.default_rng(14)
    for _ in range(20):
        pts = rng.normal(size=(200, 3)) * np.array([5.0, 2.0, 1.0])
        box = oriented_bbox(PointCloud(pts))
        np.testing.assert_allclose(box.axes @ box.axes.T, np.eye(3), atol=1e-9)
        for axis in box.axes:
            first = axis[np.nonzero(np.abs(axis) > 1e-12)[0][0]]
            assert first > 0


def test_obb_degenerate_cases():
    with pytest.raises(DegenerateInput):
        oriented_bbox(PointCloud(np.zeros((2, 3))))
    same = oriented_bbox(PointCloud(np.ones((5, 3))))
    np.testing.assert_allclose(same.extents, 0.0, atol=1e-12)
    np.testing.assert_allclose(same.axes, np.eye(3), atol=1e-12)


def test_obb_intensity_ignored():
    rng = np.random.default_rng(15)
    pts = rng.normal(size=(100, 3))
    a = oriented_bbox(PointCloud(pts))
    b = oriented_bbox(PointCloud(pts, intensity=rng.uniform(size=100)))
    np.testing.assert_allclose(a.extents, b.extents, atol=0)


# ---------------------------------------------------------------------------
# point cloud container


def test_cloud_validation():
    with pytest.raises(ShapeMismatch):
        PointCloud(np.array([[np.nan, 0, 0]]))
    with pytest.raises(ShapeMismatch):
        PointCloud(np.zeros((3, 3)), intensity=np.zeros(2))


def test_cloud_transform_matches_matrix():
    rng = np.random.default_rng(16)
    pts = rng.normal(size=(50, 3))
    p = random_pose(rng)
    hom = np.hstack([pts, np.ones((50, 1))])
    expected = (p.matrix() @ hom.T).T[:, :3]
    np.testing.assert_allclose(PointCloud(pts).transform(p).points, expected, atol=1e-9)

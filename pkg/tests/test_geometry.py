"""Rigid-transform, camera, and vehicle-reference geometry checks.

Independent oracles: 4x4 homogeneous matrices built from scipy rotations,
scipy's Slerp, and OpenCV's two projectPoints implementations for the
distortion models.
"""

import dataclasses
import math

import cv2
import numpy as np
import pytest
from scipy.spatial.transform import Rotation, Slerp

from d123.errors import UnknownOrigin
from d123.geometry import (
    FORWARD_CAMERA_ROTATION,
    MIN_PROJECT_DEPTH,
    SE3,
    CameraModel,
    CameraProjection,
    PoseOrigin,
    VehicleParameters,
    micros_to_seconds,
    pose_at_reference,
    quat_slerp,
    rear_axle_to_center_from_length,
    seconds_to_micros,
)


def random_se3(rng: np.random.Generator) -> SE3:
    rot = Rotation.random(random_state=rng)
    x, y, z, w = rot.as_quat()
    return SE3(rng.normal(scale=10.0, size=3), np.array([w, x, y, z]))


def as_matrix(pose: SE3) -> np.ndarray:
    """4x4 homogeneous matrix via scipy, bypassing SE3.to_matrix."""
    m = np.eye(4)
    m[:3, :3] = Rotation.from_quat(pose.rotation[[1, 2, 3, 0]]).as_matrix()
    m[:3, 3] = pose.translation
    return m


def quat_close(qa: np.ndarray, qb: np.ndarray, tol: float) -> bool:
    """Component equality up to sign (acos would amplify noise near 0)."""
    return bool(
        np.abs(qa - qb).max() < tol or np.abs(qa + qb).max() < tol
    )


# -- time -------------------------------------------------------------------


def test_time_conversions_are_exact_integers():
    assert seconds_to_micros(1.5) == 1_500_000
    assert isinstance(seconds_to_micros(1.5), int)
    assert micros_to_seconds(2_500_000) == 2.5
    ts = np.array([0, 1_000_000, 1_500_000], dtype=np.int64)
    np.testing.assert_array_equal(micros_to_seconds(ts), [0.0, 1.0, 1.5])


# -- SE3 construction ---------------------------------------------------------


def test_quaternion_normalized_on_construction():
    rng = np.random.default_rng(1)
    for _ in range(50):
        q = rng.normal(size=4)
        q = q / np.linalg.norm(q) * (1.0 + rng.uniform(-9e-4, 9e-4))
        pose = SE3(np.zeros(3), q)
        assert abs(np.linalg.norm(pose.rotation) - 1.0) < 1e-9


def test_quaternion_norm_far_from_one_rejected():
    with pytest.raises(ValueError):
        SE3(np.zeros(3), np.array([1.01, 0.0, 0.0, 0.0]) * 1.01)
    with pytest.raises(ValueError):
        SE3(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        SE3(np.array([np.nan, 0, 0]), np.array([1.0, 0, 0, 0]))


def test_exactly_unit_quaternion_keeps_its_bits():
    # renormalizing an already-unit quaternion must not perturb stored bits
    rng = np.random.default_rng(2)
    for _ in range(100):
        x, y, z, w = Rotation.random(random_state=rng).as_quat()
        q = np.array([w, x, y, z])
        assert SE3(np.zeros(3), q).rotation.tobytes() == q.tobytes()


def test_se3_is_immutable_and_hashable():
    pose = SE3.from_yaw(0.3, (1, 2, 3))
    with pytest.raises(ValueError):
        pose.translation[0] = 99.0
    assert pose == SE3(pose.translation, pose.rotation)
    assert hash(pose) == hash(SE3(pose.translation, pose.rotation))


# -- compose / inverse / transform -------------------------------------------


def test_compose_identity_and_inverse():
    ident = SE3.identity()
    assert (ident @ ident).almost_equal(ident, tol=0.0)
    rng = np.random.default_rng(3)
    for _ in range(100):
        a = random_se3(rng)
        assert (a @ a.inverse()).almost_equal(SE3.identity(), 1e-9)
        assert a.inverse().inverse().almost_equal(a, 1e-9)


def test_compose_matches_matrix_oracle():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a, b = random_se3(rng), random_se3(rng)
        np.testing.assert_allclose(
            (a @ b).to_matrix(), as_matrix(a) @ as_matrix(b), atol=1e-9
        )


def test_compose_is_associative():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a, b, c = (random_se3(rng) for _ in range(3))
        assert ((a @ b) @ c).almost_equal(a @ (b @ c), 1e-9)


def test_compose_translation_after_rotation_example():
    move = SE3.from_translation(1.0)
    turn = SE3.from_yaw(math.pi / 2)
    point = np.array([[1.0, 0.0, 0.0]])
    np.testing.assert_allclose(
        (move @ turn).transform_points(point), [[1.0, 1.0, 0.0]], atol=1e-12
    )


def test_transform_points_fixed_cases():
    np.testing.assert_array_equal(
        SE3.identity().transform_points(np.array([[3.0, 4.0, 5.0]])), [[3.0, 4.0, 5.0]]
    )
    np.testing.assert_allclose(
        SE3.from_yaw(math.pi).transform_points(np.array([[1.0, 0.0, 0.0]])),
        [[-1.0, 0.0, 0.0]],
        atol=1e-12,
    )


def test_transform_points_matches_matrix_oracle_and_preserves_distances():
    rng = np.random.default_rng(6)
    pose = random_se3(rng)
    pts = rng.normal(scale=20.0, size=(100, 3))
    expect = (as_matrix(pose)[:3, :3] @ pts.T).T + pose.translation
    got = pose.transform_points(pts)
    np.testing.assert_allclose(got, expect, atol=1e-9)
    d_before = np.linalg.norm(pts[1:] - pts[:-1], axis=1)
    d_after = np.linalg.norm(got[1:] - got[:-1], axis=1)
    np.testing.assert_allclose(d_after, d_before, rtol=1e-9)


def test_matrix_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(100):
        pose = random_se3(rng)
        back = SE3.from_matrix(pose.to_matrix())
        assert back.almost_equal(pose, 1e-9)
        assert quat_close(back.rotation, pose.rotation, 1e-9)


def test_yaw_extraction_round_trip():
    for yaw in np.linspace(-math.pi + 1e-6, math.pi - 1e-6, 25):
        assert abs(SE3.from_yaw(yaw).yaw - yaw) < 1e-12


# -- slerp --------------------------------------------------------------------


def test_slerp_endpoints_and_scipy_oracle():
    rng = np.random.default_rng(8)
    for _ in range(50):
        r = Rotation.random(2, random_state=rng)
        (x0, y0, z0, w0), (x1, y1, z1, w1) = r.as_quat()
        q0 = np.array([w0, x0, y0, z0])
        q1 = np.array([w1, x1, y1, z1])
        assert quat_close(quat_slerp(q0, q1, 0.0), q0, 1e-12)
        assert quat_close(quat_slerp(q0, q1, 1.0), q1, 1e-12)
        oracle = Slerp([0.0, 1.0], r)
        for u in (0.25, 0.5, 0.75):
            got = quat_slerp(q0, q1, u)
            want = oracle(u).as_quat()  # x, y, z, w
            assert quat_close(got, want[[3, 0, 1, 2]], 1e-9)


def test_slerp_nearly_parallel_is_stable():
    q0 = np.array([1.0, 0.0, 0.0, 0.0])
    tiny = Rotation.from_euler("z", 1e-9).as_quat()
    q1 = np.array([tiny[3], tiny[0], tiny[1], tiny[2]])
    mid = quat_slerp(q0, q1, 0.5)
    assert abs(np.linalg.norm(mid) - 1.0) < 1e-12


# -- camera convention --------------------------------------------------------


def forward_camera(offset=(0.0, 0.0, 0.0)) -> CameraModel:
    extrinsic = SE3.from_yaw(0.0, offset) @ FORWARD_CAMERA_ROTATION
    return CameraModel(
        model=CameraProjection.PINHOLE,
        fx=1000.0, fy=1000.0, cx=960.0, cy=540.0,
        width=1920, height=1080, extrinsic=extrinsic,
    )


def test_body_axes_map_to_optical_axes():
    cam = forward_camera()
    # ahead of the vehicle -> straight down the optical axis
    np.testing.assert_allclose(
        cam.body_to_camera(np.array([[10.0, 0.0, 0.0]])), [[0.0, 0.0, 10.0]], atol=1e-12
    )
    # left of the vehicle -> negative optical x (image left)
    np.testing.assert_allclose(
        cam.body_to_camera(np.array([[0.0, 1.0, 0.0]])), [[-1.0, 0.0, 0.0]], atol=1e-12
    )
    # above the vehicle -> negative optical y (image up)
    np.testing.assert_allclose(
        cam.body_to_camera(np.array([[0.0, 0.0, 1.0]])), [[0.0, -1.0, 0.0]], atol=1e-12
    )


def test_offset_camera_matches_matrix_oracle():
    cam = forward_camera(offset=(1.0, 0.0, 1.5))
    np.testing.assert_allclose(
        cam.body_to_camera(np.array([[11.0, 0.0, 1.5]])), [[0.0, 0.0, 10.0]], atol=1e-12
    )
    rng = np.random.default_rng(9)
    pts = rng.normal(scale=5.0, size=(50, 3))
    oracle = (np.linalg.inv(as_matrix(cam.extrinsic)) @ np.c_[pts, np.ones(50)].T).T[:, :3]
    np.testing.assert_allclose(cam.body_to_camera(pts), oracle, atol=1e-9)


# -- projection ---------------------------------------------------------------


def test_pinhole_projection_fixed_points():
    cam = forward_camera()
    px, valid = cam.project(np.array([[0.0, 0.0, 10.0], [1.0, 0.0, 10.0]]))
    assert valid.all()
    np.testing.assert_allclose(px, [[960.0, 540.0], [1060.0, 540.0]], atol=1e-12)


def test_projection_depth_mask():
    cam = forward_camera()
    pts = np.array([[0, 0, 1.0], [0, 0, MIN_PROJECT_DEPTH], [0, 0, 0.0], [0, 0, -5.0]])
    _, valid = cam.project(pts)
    np.testing.assert_array_equal(valid, [True, False, False, False])


def test_brown_conrady_single_term_example():
    cam = dataclasses.replace(
        forward_camera(),
        model=CameraProjection.PINHOLE_BROWN_CONRADY,
        distortion=(0.1, 0.0, 0.0, 0.0, 0.0),
    )
    px, valid = cam.project(np.array([[1.0, 0.0, 10.0]]))
    assert valid.all()
    # r^2 = 0.01 so the radial factor is exactly 1.001
    np.testing.assert_allclose(px, [[1060.1, 540.0]], atol=1e-9)


def test_brown_conrady_zero_coefficients_bitwise_equals_pinhole():
    pin = forward_camera()
    bc = dataclasses.replace(
        pin, model=CameraProjection.PINHOLE_BROWN_CONRADY, distortion=(0.0,) * 5
    )
    rng = np.random.default_rng(10)
    pts = rng.normal(scale=4.0, size=(500, 3))
    pts[:, 2] = np.abs(pts[:, 2]) + 0.5
    px_pin, v_pin = pin.project(pts)
    px_bc, v_bc = bc.project(pts)
    assert px_pin.tobytes() == px_bc.tobytes()
    np.testing.assert_array_equal(v_pin, v_bc)


def test_brown_conrady_matches_opencv():
    dist = (0.08, -0.03, 0.002, -0.001, 0.005)
    cam = dataclasses.replace(
        forward_camera(), model=CameraProjection.PINHOLE_BROWN_CONRADY, distortion=dist
    )
    rng = np.random.default_rng(11)
    pts = rng.normal(scale=2.0, size=(200, 3))
    pts[:, 2] = np.abs(pts[:, 2]) + 1.0
    k = np.array([[cam.fx, 0, cam.cx], [0, cam.fy, cam.cy], [0, 0, 1.0]])
    oracle, _ = cv2.projectPoints(pts, np.zeros(3), np.zeros(3), k, np.array(dist))
    px, valid = cam.project(pts)
    assert valid.all()
    np.testing.assert_allclose(px, oracle.reshape(-1, 2), atol=1e-8)


def test_fisheye_matches_opencv():
    dist = (0.03, -0.01, 0.004, -0.002)
    cam = dataclasses.replace(
        forward_camera(), model=CameraProjection.FISHEYE_EQUIDISTANT, distortion=dist
    )
    rng = np.random.default_rng(12)
    pts = rng.normal(scale=2.0, size=(200, 3))
    pts[:, 2] = np.abs(pts[:, 2]) + 1.0
    k = np.array([[cam.fx, 0, cam.cx], [0, cam.fy, cam.cy], [0, 0, 1.0]])
    oracle, _ = cv2.fisheye.projectPoints(
        pts.reshape(-1, 1, 3), np.zeros(3), np.zeros(3), k, np.array(dist)
    )
    px, valid = cam.project(pts)
    assert valid.all()
    np.testing.assert_allclose(px, oracle.reshape(-1, 2), atol=1e-8)


def test_unproject_round_trips_within_a_microdegree():
    cam = forward_camera()
    rng = np.random.default_rng(13)
    px_in = np.c_[rng.uniform(0, cam.width, 300), rng.uniform(0, cam.height, 300)]
    depth = rng.uniform(0.5, 80.0, 300)
    pts = cam.unproject(px_in, depth)
    px_out, valid = cam.project(pts)
    assert valid.all()
    np.testing.assert_allclose(px_out, px_in, atol=1e-6)
    np.testing.assert_allclose(pts[:, 2], depth, atol=1e-12)


def test_unproject_requires_pinhole():
    cam = dataclasses.replace(
        forward_camera(), model=CameraProjection.FISHEYE_EQUIDISTANT, distortion=(0.0,) * 4
    )
    with pytest.raises(ValueError):
        cam.unproject(np.array([[0.0, 0.0]]), np.array([1.0]))


def test_project_body_points_is_the_composition():
    cam = forward_camera(offset=(1.0, -0.3, 1.2))
    rng = np.random.default_rng(14)
    pts = rng.normal(scale=10.0, size=(50, 3))
    px_a, v_a = cam.project_body_points(pts)
    px_b, v_b = cam.project(cam.body_to_camera(pts))
    np.testing.assert_array_equal(px_a, px_b)
    np.testing.assert_array_equal(v_a, v_b)


def test_in_image_bounds():
    cam = forward_camera()
    px = np.array([[0, 0], [1919.99, 1079.99], [1920, 540], [-0.01, 540], [960, 1080]])
    np.testing.assert_array_equal(cam.in_image(px), [True, True, False, False, False])


def test_camera_model_validation():
    good = forward_camera()
    with pytest.raises(ValueError):
        dataclasses.replace(good, fx=0.0)
    with pytest.raises(ValueError):
        dataclasses.replace(good, width=0)
    with pytest.raises(ValueError):
        dataclasses.replace(good, distortion=(0.1,))  # pinhole takes none
    with pytest.raises(ValueError):
        dataclasses.replace(
            good, model=CameraProjection.PINHOLE_BROWN_CONRADY, distortion=(0.1, 0.2)
        )
    with pytest.raises(ValueError):
        dataclasses.replace(
            good, model=CameraProjection.FISHEYE_EQUIDISTANT, distortion=(0.1,) * 5
        )


# -- vehicle reference points --------------------------------------------------


def params(origin=PoseOrigin.REAR_AXLE, imu=None) -> VehicleParameters:
    return VehicleParameters(
        length=4.7, width=1.9, height=1.6, wheelbase=2.8,
        rear_axle_to_center=1.4, pose_origin=origin, imu_from_center=imu,
    )


def test_vehicle_parameter_validation():
    with pytest.raises(ValueError):
        dataclasses.replace(params(), length=0.0)
    with pytest.raises(ValueError):
        dataclasses.replace(params(), rear_axle_to_center=4.7)


def test_rear_axle_to_center_inference():
    assert rear_axle_to_center_from_length(4.7) == pytest.approx(4.7 / 2 - 1.1)
    assert rear_axle_to_center_from_length(5.0, rear_overhang=1.0) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        rear_axle_to_center_from_length(-1.0)
    with pytest.raises(ValueError):
        rear_axle_to_center_from_length(2.0)  # overhang eats the half-length


def test_pose_at_reference_fixed_cases():
    pose = SE3.from_yaw(0.0, (5.0, 2.0, 0.3))
    assert pose_at_reference(pose, params(), PoseOrigin.REAR_AXLE) is pose
    shifted = pose_at_reference(pose, params(), PoseOrigin.CENTER)
    np.testing.assert_allclose(shifted.translation, [6.4, 2.0, 0.3], atol=1e-12)
    np.testing.assert_array_equal(shifted.rotation, pose.rotation)

    turned = SE3.from_yaw(math.pi / 2, (0.0, 0.0, 0.0))
    world = pose_at_reference(turned, params(), "center")
    np.testing.assert_allclose(world.translation, [0.0, 1.4, 0.0], atol=1e-12)


def test_pose_at_reference_matches_matrix_oracle():
    rng = np.random.default_rng(15)
    for _ in range(50):
        pose = random_se3(rng)
        got = pose_at_reference(pose, params(), PoseOrigin.CENTER)
        oracle = as_matrix(pose) @ np.r_[np.c_[np.eye(3), [[1.4], [0], [0]]], [[0, 0, 0, 1]]]
        np.testing.assert_allclose(got.to_matrix(), oracle, atol=1e-9)


def test_reference_round_trip_is_identity_to_1e12():
    rng = np.random.default_rng(16)
    for _ in range(50):
        pose = random_se3(rng)
        center = pose_at_reference(pose, params(PoseOrigin.REAR_AXLE), PoseOrigin.CENTER)
        back = pose_at_reference(center, params(PoseOrigin.CENTER), PoseOrigin.REAR_AXLE)
        assert np.all(np.abs(back.translation - pose.translation) < 1e-12)
        assert quat_close(back.rotation, pose.rotation, 1e-12)


def test_imu_origin_requires_calibration():
    pose = SE3.identity()
    with pytest.raises(UnknownOrigin):
        pose_at_reference(pose, params(PoseOrigin.IMU), PoseOrigin.CENTER)
    eq = params(PoseOrigin.IMU, imu=(0.4, 0.1, 0.3))
    out = pose_at_reference(pose, eq, PoseOrigin.CENTER)
    np.testing.assert_allclose(out.translation, [-0.4, -0.1, -0.3], atol=1e-12)
    back = pose_at_reference(out, dataclasses.replace(eq, pose_origin=PoseOrigin.CENTER), "imu")
    np.testing.assert_allclose(back.translation, np.zeros(3), atol=1e-12)


def test_ground_plane_shares_center_xy():
    pose = SE3.from_yaw(0.7, (3.0, -2.0, 0.5))
    a = pose_at_reference(pose, params(PoseOrigin.GROUND_PLANE), PoseOrigin.CENTER)
    np.testing.assert_array_equal(a.translation, pose.translation)

"""Rigid transforms, time units, camera projection and vehicle reference points.

Conventions, used consistently everywhere in this package:

* Body frame: ISO 8855. x forward, y left, z up, origin configurable per
  vehicle (rear-axle center at ground height is the canonical choice).
* Camera frame: OpenCV optical. x right, y down, z forward (optical axis).
* Global frame: an arbitrary fixed East/North/Up-like frame per log; poses
  are expressed in it.
* Time: integer microseconds since the Unix epoch. Nothing stores float
  seconds; conversion happens only at API edges.
* Quaternions: scalar-first ``(w, x, y, z)``, unit norm. Construction
  renormalizes and rejects inputs whose norm deviates from 1 by more than
  1e-3 (anything larger indicates corrupt data, not rounding).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownOrigin

MICROS_PER_SECOND = 1_000_000

# Alias documenting intent: integer microseconds since the epoch.
TimePoint = int


def seconds_to_micros(seconds: float) -> int:
    """Convert seconds to integer microseconds, rounding to nearest."""
    return int(round(seconds * MICROS_PER_SECOND))


def micros_to_seconds(micros: int | np.ndarray) -> float | np.ndarray:
    """Convert integer microseconds to float seconds."""
    if isinstance(micros, np.ndarray):
        return micros / float(MICROS_PER_SECOND)
    return micros / MICROS_PER_SECOND


_QUAT_NORM_TOLERANCE = 1e-3


def _quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
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


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_to_quat(m: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal combination for stability.
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    if q[0] < 0:  # canonical sign: non-negative scalar part
        q = -q
    return q / np.linalg.norm(q)


def quat_slerp(q0: np.ndarray, q1: np.ndarray, u: float) -> np.ndarray:
    """Spherical interpolation between two unit quaternions, u in [0, 1]."""
    a = np.asarray(q0, dtype=np.float64)
    b = np.asarray(q1, dtype=np.float64)
    dot = float(np.dot(a, b))
    if dot < 0.0:  # take the short arc
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-10:
        out = a + u * (b - a)
        return out / np.linalg.norm(out)
    theta = math.acos(min(dot, 1.0))
    s = math.sin(theta)
    out = (math.sin((1.0 - u) * theta) / s) * a + (math.sin(u * theta) / s) * b
    return out / np.linalg.norm(out)


@dataclass(frozen=True, eq=False)
class SE3:
    """Rigid transform: unit quaternion rotation plus translation.

    ``a.compose(b)`` applies ``b`` first, then ``a``. ``transform_points``
    maps points from the transform's source frame into its target frame.
    Instances are immutable; the stored arrays are read-only float64.
    Equality is exact (bitwise on the stored values); use ``almost_equal``
    for tolerant comparison.
    """

    translation: np.ndarray
    rotation: np.ndarray  # (w, x, y, z)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SE3):
            return NotImplemented
        return np.array_equal(self.translation, other.translation) and np.array_equal(
            self.rotation, other.rotation
        )

    def __hash__(self) -> int:
        return hash((self.translation.tobytes(), self.rotation.tobytes()))

    def __post_init__(self) -> None:
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        q = np.array(self.rotation, dtype=np.float64).reshape(4)
        norm = float(np.linalg.norm(q))
        if not math.isfinite(norm) or abs(norm - 1.0) > _QUAT_NORM_TOLERANCE:
            raise ValueError(
                f"quaternion norm {norm!r} deviates from 1 beyond {_QUAT_NORM_TOLERANCE}"
            )
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        # Skip division inside rounding noise so storage round-trips keep the
        # component bits (repeated renormalization is not bit-idempotent).
        if abs(norm - 1.0) > 1e-12:
            q = q / norm
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    # -- constructors --------------------------------------------------

    @classmethod
    def identity(cls) -> "SE3":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_translation(cls, x: float, y: float = 0.0, z: float = 0.0) -> "SE3":
        return cls(np.array([x, y, z]), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "SE3":
        """Rotation about body z (up), positive counter-clockwise."""
        return cls(
            np.asarray(translation, dtype=np.float64),
            np.array([math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)]),
        )

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "SE3":
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return cls(m[:3, 3].copy(), _matrix_to_quat(m[:3, :3]))

    # -- views ----------------------------------------------------------

    def rotation_matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.rotation)

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    @property
    def yaw(self) -> float:
        """Heading about global z extracted from the rotation."""
        w, x, y, z = self.rotation
        return math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))

    # -- algebra ----------------------------------------------------------

    def compose(self, other: "SE3") -> "SE3":
        q = _quat_multiply(self.rotation, other.rotation)
        t = self.translation + self.rotation_matrix() @ other.translation
        return SE3(t, q / np.linalg.norm(q))

    def __matmul__(self, other: "SE3") -> "SE3":
        return self.compose(other)

    def inverse(self) -> "SE3":
        r_inv = self.rotation_matrix().T
        q_inv = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return SE3(-(r_inv @ self.translation), q_inv)

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        """Apply the transform to one point (3,) or a batch (N, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        out = pts.reshape(-1, 3) @ self.rotation_matrix().T + self.translation
        return out[0] if single else out

    def almost_equal(self, other: "SE3", tol: float = 1e-9) -> bool:
        dq = min(
            float(np.abs(self.rotation - other.rotation).max()),
            float(np.abs(self.rotation + other.rotation).max()),
        )
        return bool(np.abs(self.translation - other.translation).max() <= tol and dq <= tol)


# Rotation of a forward-looking, untilted camera's optical frame within the
# body frame: optical z (viewing direction) along body x, optical x along
# body -y, optical y along body -z.
_FORWARD_CAMERA_MATRIX = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)
FORWARD_CAMERA_ROTATION = SE3(np.zeros(3), _matrix_to_quat(_FORWARD_CAMERA_MATRIX))


class CameraProjection(str, enum.Enum):
    PINHOLE = "pinhole"
    PINHOLE_BROWN_CONRADY = "pinhole_brown_conrady"
    FISHEYE_EQUIDISTANT = "fisheye_equidistant"


# Points closer to the image plane than this along optical z are not projectable.
MIN_PROJECT_DEPTH = 1e-6

_DISTORTION_LEN = {
    CameraProjection.PINHOLE: 0,
    CameraProjection.PINHOLE_BROWN_CONRADY: 5,  # k1, k2, p1, p2, k3
    CameraProjection.FISHEYE_EQUIDISTANT: 4,  # k1..k4 on theta
}


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics, distortion and mounting pose of one camera.

    ``extrinsic`` is the camera-to-body transform: it maps points from the
    optical frame into the body frame (its translation is the optical center
    in body coordinates).
    """

    model: CameraProjection
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: SE3
    distortion: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        model = CameraProjection(self.model)
        object.__setattr__(self, "model", model)
        dist = tuple(float(d) for d in self.distortion)
        expected = _DISTORTION_LEN[model]
        if model is CameraProjection.PINHOLE:
            if any(d != 0.0 for d in dist):
                raise ValueError("pinhole model takes no distortion coefficients")
            dist = ()
        elif len(dist) != expected:
            raise ValueError(f"{model.value} expects {expected} distortion coefficients")
        object.__setattr__(self, "distortion", dist)

    # -- projection ------------------------------------------------------

    def project(self, points_camera: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project optical-frame points to pixels.

        Returns ``(pixels (N, 2), valid (N,))``. Points with optical z at or
        below ``MIN_PROJECT_DEPTH`` are masked invalid, never clamped; their
        pixel values are meaningless.
        """
        pts = np.asarray(points_camera, dtype=np.float64).reshape(-1, 3)
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        valid = z > MIN_PROJECT_DEPTH
        safe_z = np.where(valid, z, 1.0)
        xn = x / safe_z
        yn = y / safe_z

        if self.model is CameraProjection.PINHOLE:
            xd, yd = xn, yn
        elif self.model is CameraProjection.PINHOLE_BROWN_CONRADY:
            k1, k2, p1, p2, k3 = self.distortion
            r2 = xn * xn + yn * yn
            radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
            xd = xn * radial + 2.0 * p1 * xn * yn + p2 * (r2 + 2.0 * xn * xn)
            yd = yn * radial + p1 * (r2 + 2.0 * yn * yn) + 2.0 * p2 * xn * yn
        else:  # fisheye, equidistant theta-model
            k1, k2, k3, k4 = self.distortion
            r = np.sqrt(xn * xn + yn * yn)
            theta = np.arctan(r)
            t2 = theta * theta
            theta_d = theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))
            scale = np.where(r > 1e-12, theta_d / np.where(r > 1e-12, r, 1.0), 1.0)
            xd = xn * scale
            yd = yn * scale

        u = self.fx * xd + self.cx
        v = self.fy * yd + self.cy
        return np.stack([u, v], axis=1), valid

    def unproject(self, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
        """Invert the pinhole projection at given optical-frame depths."""
        if self.model is not CameraProjection.PINHOLE:
            raise ValueError("unproject is only defined for the pinhole model")
        px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        z = np.asarray(depths, dtype=np.float64).reshape(-1)
        x = (px[:, 0] - self.cx) / self.fx * z
        y = (px[:, 1] - self.cy) / self.fy * z
        return np.stack([x, y, z], axis=1)

    def body_to_camera(self, points_body: np.ndarray) -> np.ndarray:
        """Map body-frame points into this camera's optical frame."""
        return self.extrinsic.inverse().transform_points(points_body)

    def project_body_points(self, points_body: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.project(self.body_to_camera(points_body))

    def in_image(self, pixels: np.ndarray) -> np.ndarray:
        px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        return (
            (px[:, 0] >= 0)
            & (px[:, 0] < self.width)
            & (px[:, 1] >= 0)
            & (px[:, 1] < self.height)
        )


class PoseOrigin(str, enum.Enum):
    """Which point of the vehicle a stored ego pose refers to."""

    REAR_AXLE = "rear_axle"
    CENTER = "center"
    GROUND_PLANE = "ground_plane"  # center projected to ground; equals center in xy
    IMU = "imu"


# Typical passenger-car rear overhang, used only when a source provides the
# vehicle length but no axle position.
DEFAULT_REAR_OVERHANG = 1.1


def rear_axle_to_center_from_length(length: float, rear_overhang: float = DEFAULT_REAR_OVERHANG) -> float:
    """Infer the rear-axle-to-center distance from overall length.

    The rear axle sits ``rear_overhang`` ahead of the rear bumper, the
    geometric center at ``length / 2``.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    value = length / 2.0 - rear_overhang
    if value <= 0:
        raise ValueError("rear overhang leaves no axle-to-center distance")
    return value


@dataclass(frozen=True)
class VehicleParameters:
    """Static ego-vehicle geometry and the origin its poses are stored in."""

    length: float
    width: float
    height: float
    wheelbase: float
    rear_axle_to_center: float  # along body x, positive forward
    pose_origin: PoseOrigin = PoseOrigin.REAR_AXLE
    # Calibration offset of the imu from the geometric center (body frame).
    # Required for pose_origin == IMU or when converting poses to/from it.
    imu_from_center: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        for name in ("length", "width", "height", "wheelbase", "rear_axle_to_center"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.rear_axle_to_center >= self.length:
            raise ValueError("rear_axle_to_center must be smaller than length")
        object.__setattr__(self, "pose_origin", PoseOrigin(self.pose_origin))
        if self.imu_from_center is not None:
            object.__setattr__(
                self, "imu_from_center", tuple(float(v) for v in self.imu_from_center)
            )


def _offset_from_center(params: VehicleParameters, origin: PoseOrigin) -> float:
    """Longitudinal body-x offset of an origin point relative to the center."""
    if origin is PoseOrigin.CENTER or origin is PoseOrigin.GROUND_PLANE:
        # ground_plane shares the center's xy; planar accessors treat them alike
        return 0.0
    if origin is PoseOrigin.REAR_AXLE:
        return -params.rear_axle_to_center
    if origin is PoseOrigin.IMU:
        if params.imu_from_center is None:
            raise UnknownOrigin("imu origin requires an imu_from_center calibration offset")
        return params.imu_from_center[0]
    raise UnknownOrigin(f"unknown pose origin {origin!r}")


def pose_at_reference(pose: SE3, params: VehicleParameters, target: PoseOrigin | str) -> SE3:
    """Re-express a stored ego pose at another reference point of the vehicle.

    Reference points differ only along body x (the imu additionally uses its
    calibrated lateral/vertical offset). Rotation is unchanged.
    """
    target = PoseOrigin(target)
    source = params.pose_origin
    if target is source:
        return pose
    dx = _offset_from_center(params, target) - _offset_from_center(params, source)
    shift = np.array([dx, 0.0, 0.0])
    if target is PoseOrigin.IMU or source is PoseOrigin.IMU:
        assert params.imu_from_center is not None  # _offset_from_center raised otherwise
        imu_yz = np.array([0.0, params.imu_from_center[1], params.imu_from_center[2]])
        if target is PoseOrigin.IMU:
            shift = shift + imu_yz
        if source is PoseOrigin.IMU:
            shift = shift - imu_yz
    return pose.compose(SE3(shift, np.array([1.0, 0.0, 0.0, 0.0])))

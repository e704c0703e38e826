"""Deterministic synthetic driving scenarios with closed-form ground truth.

Rig presets mirror the sensor counts and native rates of well-known driving
datasets so mixed-rate behavior can be exercised without any real data. The
generated world is analytically known: ego and agents follow line or circle
paths whose poses, velocities and accelerations have closed forms, which the
tests use as oracles. Everything is a pure function of the config (seeded
generators are keyed per use), so runs are byte-reproducible.
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    FORWARD_CAMERA_ROTATION,
    SE3,
    CameraModel,
    CameraProjection,
    PoseOrigin,
    VehicleParameters,
)
from .mapstore import MapObject, MapStore
from .records import (
    BOXES,
    EGO_STATE,
    TRAFFIC_LIGHTS,
    BoxRecord,
    CameraFrameRecord,
    Codec,
    EgoStateRecord,
    EventStream,
    LidarSweepRecord,
    LogMetadata,
    PayloadRef,
    TrafficLightRecord,
    TrafficLightState,
    camera_modality,
    lidar_modality,
)


@dataclass(frozen=True)
class RigPreset:
    """Sensor counts and native rates of one synthetic rig."""

    cameras: int
    camera_hz: float
    lidars: int
    lidar_hz: float
    box_hz: float
    traffic_light_hz: float | None = None
    ego_hz: float = 50.0


RIG_PRESETS: dict[str, RigPreset] = {
    "nuscenes": RigPreset(cameras=6, camera_hz=12.0, lidars=1, lidar_hz=20.0, box_hz=2.0),
    "wod_perception": RigPreset(cameras=5, camera_hz=10.0, lidars=5, lidar_hz=10.0, box_hz=10.0),
    "av2_sensor": RigPreset(cameras=9, camera_hz=20.0, lidars=2, lidar_hz=10.0, box_hz=10.0),
    "pandaset": RigPreset(cameras=6, camera_hz=10.0, lidars=2, lidar_hz=10.0, box_hz=10.0),
    "kitti360": RigPreset(cameras=4, camera_hz=10.0, lidars=1, lidar_hz=10.0, box_hz=10.0),
    "wod_motion": RigPreset(cameras=0, camera_hz=0.0, lidars=0, lidar_hz=0.0, box_hz=10.0, traffic_light_hz=10.0),
    "nuplan": RigPreset(cameras=8, camera_hz=10.0, lidars=5, lidar_hz=20.0, box_hz=20.0, traffic_light_hz=20.0),
    "pai_av": RigPreset(cameras=7, camera_hz=30.0, lidars=1, lidar_hz=10.0, box_hz=10.0),
    "l3ad": RigPreset(cameras=6, camera_hz=10.0, lidars=2, lidar_hz=10.0, box_hz=10.0, traffic_light_hz=10.0),
}

# (id, yaw rad, mount xyz); order fixed, rigs take the first N entries
_CAMERA_POOL = (
    ("cam_f0", 0.0, (1.7, 0.0, 1.5)),
    ("cam_l0", 0.96, (1.2, 0.5, 1.5)),
    ("cam_r0", -0.96, (1.2, -0.5, 1.5)),
    ("cam_b0", math.pi, (-1.5, 0.0, 1.5)),
    ("cam_l1", 1.92, (0.5, 0.6, 1.5)),
    ("cam_r1", -1.92, (0.5, -0.6, 1.5)),
    ("cam_l2", 2.8, (-0.5, 0.6, 1.5)),
    ("cam_r2", -2.8, (-0.5, -0.6, 1.5)),
    ("cam_f1", 0.0, (1.9, 0.0, 1.4)),
)

_LIDAR_POOL = (
    ("lidar_top", (0.0, 0.0, 2.0)),
    ("lidar_front", (2.0, 0.0, 0.8)),
    ("lidar_left", (0.0, 0.9, 1.0)),
    ("lidar_right", (0.0, -0.9, 1.0)),
    ("lidar_rear", (-2.0, 0.0, 0.9)),
)

LABEL_EXTENTS: dict[str, tuple[float, float, float]] = {
    "car": (4.5, 1.9, 1.6),
    "truck": (8.0, 2.5, 3.0),
    "bus": (11.0, 2.9, 3.2),
    "pedestrian": (0.6, 0.6, 1.7),
    "rider": (0.6, 0.6, 1.8),
    "bicycle": (1.8, 0.6, 1.4),
    "motorcycle": (2.1, 0.8, 1.3),
    "traffic_cone": (0.4, 0.4, 0.8),
    "barrier": (2.0, 0.5, 1.0),
    "sign": (0.6, 0.1, 0.9),
    "train": (20.0, 3.0, 4.0),
    "animal": (1.0, 0.4, 0.6),
}

_DEFAULT_LABEL_POOL = (
    "car",
    "pedestrian",
    "bicycle",
    "truck",
    "traffic_cone",
    "motorcycle",
    "bus",
    "barrier",
    "rider",
    "animal",
)


@dataclass(frozen=True)
class SyntheticScenarioConfig:
    seed: int = 0
    duration_s: float = 10.0
    rig: str = "nuscenes"
    log_id: str | None = None
    ego_path: str = "line"  # line | circle
    ego_speed: float = 10.0  # m/s
    circle_radius: float = 20.0  # m, shared by ego and circular agents
    ego_hz: float | None = None  # overrides the preset rate when set
    agent_count: int = 5
    agent_path: str = "line"  # line | circle
    agent_speeds: tuple[float, ...] | None = None  # cycled; seeded draw when None
    agent_labels: tuple[str, ...] | None = None  # cycled; default pool when None
    box_frame: str = "global"  # global | body | camera:<id>
    box_position_noise: float = 0.0  # per-frame jitter sigma, meters
    box_velocity_fields: bool = True
    points_per_sweep: int = 128
    lidar_codec: str = Codec.RAW_F32LE.value
    image_size: tuple[int, int] = (16, 12)
    map_template: str = "straight"  # straight | grid | none
    start_time_us: int = 1_600_000_000_000_000

    def __post_init__(self) -> None:
        if self.rig not in RIG_PRESETS:
            raise ValueError(f"unknown rig preset {self.rig!r}; choose from {sorted(RIG_PRESETS)}")
        if self.ego_path not in ("line", "circle") or self.agent_path not in ("line", "circle"):
            raise ValueError("paths must be 'line' or 'circle'")
        if self.map_template not in ("straight", "grid", "none"):
            raise ValueError("map_template must be straight|grid|none")
        if self.duration_s <= 0 or self.ego_speed <= 0 or self.circle_radius <= 0:
            raise ValueError("duration, speed and radius must be positive")
        if self.box_frame != "global" and not (
            self.box_frame == "body" or self.box_frame.startswith("camera:")
        ):
            raise ValueError("box_frame must be global, body or camera:<id>")

    @property
    def preset(self) -> RigPreset:
        return RIG_PRESETS[self.rig]

    @property
    def resolved_log_id(self) -> str:
        return self.log_id or f"{self.rig}_{self.seed:04d}"

    @property
    def resolved_ego_hz(self) -> float:
        return self.ego_hz if self.ego_hz is not None else self.preset.ego_hz


def period_us(hz: float) -> int:
    return int(round(1_000_000 / hz))


def event_times(config: SyntheticScenarioConfig, hz: float, offset_us: int = 0) -> np.ndarray:
    """Event grid: round(duration*hz) events from the start time."""
    count = int(round(config.duration_s * hz))
    step = period_us(hz)
    return config.start_time_us + offset_us + np.arange(count, dtype=np.int64) * step


# -- closed-form kinematics -----------------------------------------------------


def ego_pose_at(config: SyntheticScenarioConfig, t_us: int) -> SE3:
    """Ground-truth ego pose (rear-axle origin, global frame) at any time."""
    t = (int(t_us) - config.start_time_us) / 1_000_000.0
    v = config.ego_speed
    if config.ego_path == "line":
        return SE3.from_yaw(0.0, (v * t, 0.0, 0.0))
    r = config.circle_radius
    omega = v / r
    theta = omega * t
    # start at origin heading +x, turning left around (0, r)
    return SE3.from_yaw(theta, (r * math.sin(theta), r * (1.0 - math.cos(theta)), 0.0))


def ego_state_at(config: SyntheticScenarioConfig, t_us: int) -> EgoStateRecord:
    v = config.ego_speed
    if config.ego_path == "line":
        accel = (0.0, 0.0, 0.0)
        wz = 0.0
    else:
        omega = v / config.circle_radius
        accel = (0.0, v * omega, 0.0)  # centripetal, to the left
        wz = omega
    return EgoStateRecord(
        timestamp=int(t_us),
        pose=ego_pose_at(config, t_us),
        velocity_body=(v, 0.0, 0.0),
        acceleration_body=accel,
        angular_velocity_z=wz,
    )


@dataclass(frozen=True)
class AgentSpec:
    track_id: str
    label: str
    extent: tuple[float, float, float]
    speed: float
    # line path
    start: tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0
    # circle path
    radius: float = 0.0
    theta0: float = 0.0
    has_velocity: bool = True


def agent_specs(config: SyntheticScenarioConfig) -> list[AgentSpec]:
    """Deterministic agent population; the single seeded draw in the world."""
    rng = np.random.default_rng([config.seed, 11])
    labels = config.agent_labels or _DEFAULT_LABEL_POOL
    specs: list[AgentSpec] = []
    for k in range(config.agent_count):
        label = labels[k % len(labels)]
        if config.agent_speeds is not None:
            speed = float(config.agent_speeds[k % len(config.agent_speeds)])
        else:
            speed = float(rng.uniform(0.0, 15.0))
        if config.agent_path == "line":
            start = (
                float(rng.uniform(5.0, 60.0)),
                float(rng.uniform(-8.0, 8.0)),
            )
            heading = float(rng.choice([0.0, math.pi])) if label != "pedestrian" else float(
                rng.uniform(-math.pi, math.pi)
            )
            spec = AgentSpec(
                track_id=f"agent_{k:03d}",
                label=label,
                extent=LABEL_EXTENTS[label],
                speed=speed,
                start=start,
                heading=heading,
                has_velocity=config.box_velocity_fields and k % 2 == 0,
            )
        else:
            radius = config.circle_radius + 3.5 * k
            spec = AgentSpec(
                track_id=f"agent_{k:03d}",
                label=label,
                extent=LABEL_EXTENTS[label],
                speed=speed,
                radius=radius,
                theta0=float(rng.uniform(0.0, 2 * math.pi)) if config.agent_speeds is None else 0.0,
                has_velocity=config.box_velocity_fields and k % 2 == 0,
            )
        specs.append(spec)
    return specs


def agent_pose_at(config: SyntheticScenarioConfig, spec: AgentSpec, t_us: int) -> SE3:
    """Ground-truth agent box-center pose at any time (global frame)."""
    t = (int(t_us) - config.start_time_us) / 1_000_000.0
    if config.agent_path == "line":
        ca, sa = math.cos(spec.heading), math.sin(spec.heading)
        x = spec.start[0] + spec.speed * t * ca
        y = spec.start[1] + spec.speed * t * sa
        return SE3.from_yaw(spec.heading, (x, y, spec.extent[2] / 2.0))
    omega = spec.speed / spec.radius
    theta = spec.theta0 + omega * t
    x = spec.radius * math.cos(theta)
    y = spec.radius * math.sin(theta)
    return SE3.from_yaw(theta + math.pi / 2.0, (x, y, spec.extent[2] / 2.0))


def agent_velocity_at(config: SyntheticScenarioConfig, spec: AgentSpec, t_us: int) -> tuple[float, float, float]:
    t = (int(t_us) - config.start_time_us) / 1_000_000.0
    if config.agent_path == "line":
        return (
            spec.speed * math.cos(spec.heading),
            spec.speed * math.sin(spec.heading),
            0.0,
        )
    omega = spec.speed / spec.radius
    theta = spec.theta0 + omega * t
    return (-spec.speed * math.sin(theta), spec.speed * math.cos(theta), 0.0)


# -- payload generators -----------------------------------------------------------


def tiny_png(width: int, height: int, key: int) -> bytes:
    """Minimal deterministic grayscale PNG (no image library involved)."""

    def chunk(tag: bytes, data: bytes) -> bytes:
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", width, height, 8, 0, 0, 0, 0)
    rows = b"".join(
        b"\x00" + bytes((key + x + 7 * y) % 251 for x in range(width)) for y in range(height)
    )
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(rows, 6))
        + chunk(b"IEND", b"")
    )


def lidar_points(config: SyntheticScenarioConfig, lidar_index: int, sweep_index: int) -> np.ndarray:
    """Deterministic per-sweep point cloud (body frame, N×4 float32)."""
    rng = np.random.default_rng([config.seed, 23, lidar_index, sweep_index])
    n = config.points_per_sweep
    pts = np.empty((n, 4), dtype=np.float32)
    pts[:, 0] = rng.uniform(-50.0, 50.0, n)
    pts[:, 1] = rng.uniform(-50.0, 50.0, n)
    pts[:, 2] = rng.uniform(-2.0, 6.0, n)
    pts[:, 3] = rng.uniform(0.0, 1.0, n)
    return pts


# -- sensors & metadata -----------------------------------------------------------


def camera_models(config: SyntheticScenarioConfig) -> dict[str, CameraModel]:
    out: dict[str, CameraModel] = {}
    width, height = config.image_size
    for i in range(config.preset.cameras):
        cam_id, yaw, xyz = _CAMERA_POOL[i]
        extrinsic = SE3.from_yaw(yaw, xyz).compose(FORWARD_CAMERA_ROTATION)
        if i == 2:
            model = CameraProjection.PINHOLE_BROWN_CONRADY
            distortion = (-0.05, 0.01, 0.0005, -0.0003, 0.001)
        elif i == 5:
            model = CameraProjection.FISHEYE_EQUIDISTANT
            distortion = (0.02, -0.004, 0.001, -0.0002)
        else:
            model = CameraProjection.PINHOLE
            distortion = ()
        out[cam_id] = CameraModel(
            model=model,
            fx=500.0,
            fy=500.0,
            cx=width * 10.0,
            cy=height * 10.0,
            width=width * 20,
            height=height * 20,
            extrinsic=extrinsic,
            distortion=distortion,
        )
    return out


def lidar_extrinsics(config: SyntheticScenarioConfig) -> dict[str, SE3]:
    return {
        _LIDAR_POOL[i][0]: SE3.from_translation(*_LIDAR_POOL[i][1])
        for i in range(config.preset.lidars)
    }


def log_metadata(config: SyntheticScenarioConfig, map_ref: str | None) -> LogMetadata:
    vehicle = VehicleParameters(
        length=4.7,
        width=1.9,
        height=1.6,
        wheelbase=2.8,
        rear_axle_to_center=1.35,
        pose_origin=PoseOrigin.REAR_AXLE,
        imu_from_center=(0.4, 0.0, 0.3),
    )
    return LogMetadata(
        log_id=config.resolved_log_id,
        dataset=config.rig,
        vehicle=vehicle,
        cameras=camera_models(config),
        lidars=lidar_extrinsics(config),
        map_ref=map_ref,
        label_space="synthetic",
    )


# -- record streams ----------------------------------------------------------------


def ego_records(config: SyntheticScenarioConfig) -> list[EgoStateRecord]:
    return [ego_state_at(config, int(t)) for t in event_times(config, config.resolved_ego_hz)]


def box_event_times(config: SyntheticScenarioConfig) -> list[tuple[int, int]]:
    """(timestamp, agent index) pairs, strictly increasing in time.

    In global mode concurrent annotations are staggered by +k µs per agent.
    In body/camera modes every event must coincide exactly with an ego tick,
    so agents spread across consecutive ego ticks instead.
    """
    keyframes = event_times(config, config.preset.box_hz)
    n = config.agent_count
    out: list[tuple[int, int]] = []
    if config.box_frame == "global":
        for t in keyframes:
            for k in range(n):
                out.append((int(t) + k, k))
        return out
    ego_ts = event_times(config, config.resolved_ego_hz)
    ticks_per_key = max(int(round(config.resolved_ego_hz / config.preset.box_hz)), 1)
    if n > ticks_per_key:
        raise ValueError(
            f"box_frame={config.box_frame!r} needs agent_count <= ego_hz/box_hz = {ticks_per_key}"
        )
    for j in range(len(keyframes)):
        base = j * ticks_per_key
        for k in range(n):
            if base + k < len(ego_ts):
                out.append((int(ego_ts[base + k]), k))
    return out


def box_records(config: SyntheticScenarioConfig) -> list[BoxRecord]:
    """Ground-truth (global frame) box stream, including optional jitter."""
    specs = agent_specs(config)
    noise_rng = np.random.default_rng([config.seed, 37])
    records: list[BoxRecord] = []
    for t, k in box_event_times(config):
        spec = specs[k]
        pose = agent_pose_at(config, spec, t)
        if config.box_position_noise > 0.0:
            jitter = noise_rng.normal(0.0, config.box_position_noise, 2)
            translation = pose.translation.copy()
            translation[0] += jitter[0]
            translation[1] += jitter[1]
            pose = SE3(translation, pose.rotation)
        records.append(
            BoxRecord(
                timestamp=t,
                track_id=spec.track_id,
                raw_label=spec.label,
                pose=pose,
                extent=spec.extent,
                velocity=agent_velocity_at(config, spec, t) if spec.has_velocity else None,
            )
        )
    return records


_TL_CYCLE = (
    TrafficLightState.GREEN,
    TrafficLightState.GREEN,
    TrafficLightState.YELLOW,
    TrafficLightState.RED,
    TrafficLightState.RED,
    TrafficLightState.RED,
)


def traffic_light_records(config: SyntheticScenarioConfig, lane_ids: list[str]) -> list[TrafficLightRecord]:
    hz = config.preset.traffic_light_hz
    if hz is None:
        return []
    refs = lane_ids[:2] if lane_ids else ["lane_unmapped_0"]
    records: list[TrafficLightRecord] = []
    for j, t in enumerate(event_times(config, hz)):
        for i, ref in enumerate(refs):
            records.append(
                TrafficLightRecord(
                    timestamp=int(t) + i,  # stagger, one event per instant
                    lane_ref=ref,
                    state=_TL_CYCLE[(j + i) % len(_TL_CYCLE)],
                )
            )
    return records


def camera_frame_records(config: SyntheticScenarioConfig) -> dict[str, list[CameraFrameRecord]]:
    """Per-camera streams with deterministic inline PNG payloads."""
    out: dict[str, list[CameraFrameRecord]] = {}
    width, height = config.image_size
    for i in range(config.preset.cameras):
        cam_id = _CAMERA_POOL[i][0]
        frames: list[CameraFrameRecord] = []
        for j, t in enumerate(event_times(config, config.preset.camera_hz, offset_us=1200 * i)):
            payload = PayloadRef(
                codec=Codec.PNG.value,
                inline=tiny_png(width, height, key=config.seed * 131 + i * 17 + j),
            )
            frames.append(CameraFrameRecord(timestamp=int(t), camera_id=cam_id, payload=payload))
        out[cam_id] = frames
    return out


def lidar_sweep_records(config: SyntheticScenarioConfig) -> dict[str, list[LidarSweepRecord]]:
    from .logio import encode_points

    out: dict[str, list[LidarSweepRecord]] = {}
    if config.preset.lidars == 0:
        return out
    step = period_us(config.preset.lidar_hz)
    for i in range(config.preset.lidars):
        lidar_id = _LIDAR_POOL[i][0]
        sweeps: list[LidarSweepRecord] = []
        for j, t in enumerate(event_times(config, config.preset.lidar_hz, offset_us=700 * i)):
            points = lidar_points(config, i, j)
            payload = PayloadRef(
                codec=config.lidar_codec, inline=encode_points(points, config.lidar_codec)
            )
            sweeps.append(
                LidarSweepRecord(
                    timestamp_start=int(t),
                    timestamp_end=int(t) + step,
                    lidar_id=lidar_id,
                    payload=payload,
                )
            )
        out[lidar_id] = sweeps
    return out


# -- map templates -----------------------------------------------------------------


def _rect(x0: float, y0: float, x1: float, y1: float, z: float = 0.0) -> list[list[float]]:
    return [[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z], [x0, y0, z]]


def _straight_map(x_min: float, x_max: float, prefix: str = "s") -> list[MapObject]:
    """Two co-directional lanes split into 3 segments, with full layer coverage."""
    objects: list[MapObject] = []
    cuts = np.linspace(x_min, x_max, 4)
    lane_y = {0: 1.75, 1: -1.75}  # lane_0 left of lane_1 (ISO y grows leftward)

    for s in range(3):
        x0, x1 = float(cuts[s]), float(cuts[s + 1])
        for k in (0, 1):
            y = lane_y[k]
            lane_id = f"lane_{prefix}{k}_{s}"
            attrs = {
                "centerline": [[x0, y, 0.0], [x1, y, 0.0]],
                "left_boundary": f"road_edge_{prefix}L_{s}" if k == 0 else f"road_line_{prefix}C_{s}",
                "right_boundary": f"road_line_{prefix}C_{s}" if k == 0 else f"road_edge_{prefix}R_{s}",
                "speed_limit": 13.9,
                "predecessors": [f"lane_{prefix}{k}_{s-1}"] if s > 0 else [],
                "successors": [f"lane_{prefix}{k}_{s+1}"] if s < 2 else [],
                "left_neighbor": f"lane_{prefix}0_{s}" if k == 1 else None,
                "right_neighbor": f"lane_{prefix}1_{s}" if k == 0 else None,
            }
            geometry = wkb_polygon(_rect(x0, y - 1.75, x1, y + 1.75))
            objects.append(MapObject(lane_id, "lane", geometry, attrs))
        objects.append(
            MapObject(
                f"lane_group_{prefix}{s}",
                "lane_group",
                wkb_polygon(_rect(x0, -3.5, x1, 3.5)),
                {"lane_ids": [f"lane_{prefix}0_{s}", f"lane_{prefix}1_{s}"]},
            )
        )
        objects.append(
            MapObject(
                f"road_line_{prefix}C_{s}",
                "road_line",
                wkb_line([[x0, 0.0, 0.0], [x1, 0.0, 0.0]]),
                {"marking": "dashed_white"},
            )
        )
        for side, y_edge in (("L", 3.5), ("R", -3.5)):
            objects.append(
                MapObject(
                    f"road_edge_{prefix}{side}_{s}",
                    "road_edge",
                    wkb_line([[x0, y_edge, 0.0], [x1, y_edge, 0.0]]),
                    {"drivable": False},
                )
            )

    mid = float((x_min + x_max) / 2.0)
    objects.append(
        MapObject(
            f"crosswalk_{prefix}0",
            "crosswalk",
            wkb_polygon(_rect(mid - 2.0, -3.5, mid + 2.0, 3.5)),
            {},
        )
    )
    objects.append(
        MapObject(
            f"stop_zone_{prefix}0",
            "stop_zone",
            wkb_polygon(_rect(mid - 6.0, -3.5, mid - 2.5, 3.5)),
            {"kind": "crosswalk_approach"},
        )
    )
    objects.append(
        MapObject(
            f"speed_bump_{prefix}0",
            "speed_bump",
            wkb_polygon(_rect(mid + 10.0, -3.5, mid + 11.0, 3.5)),
            {"height_m": 0.08},
        )
    )
    objects.append(
        MapObject(
            f"walkway_{prefix}0",
            "walkway",
            wkb_polygon(_rect(x_min, 3.5, x_max, 6.0)),
            {},
        )
    )
    objects.append(
        MapObject(
            f"carpark_{prefix}0",
            "carpark",
            wkb_polygon(_rect(mid + 15.0, -9.0, mid + 30.0, -4.0)),
            {},
        )
    )
    objects.append(
        MapObject(
            f"generic_drivable_{prefix}0",
            "generic_drivable",
            wkb_polygon(_rect(x_min, -3.5, x_max, 3.5)),
            {},
        )
    )
    objects.append(
        MapObject(
            f"intersection_{prefix}0",
            "intersection",
            wkb_polygon(_rect(x_max, -3.5, x_max + 7.0, 3.5)),
            {"lane_group_ids": [f"lane_group_{prefix}2"]},
        )
    )
    return objects


def _grid_map(extent: float) -> list[MapObject]:
    """Straight roads along x at several y offsets plus crossing crosswalks."""
    objects: list[MapObject] = []
    offsets = (-50.0, 0.0, 50.0)
    for row, y_off in enumerate(offsets):
        road = _straight_map(-extent, extent, prefix=f"g{row}_")
        for obj in road:
            geometry = _translate_geometry(obj.geometry, 0.0, y_off)
            attrs = dict(obj.attributes)
            if "centerline" in attrs:
                attrs["centerline"] = [[c[0], c[1] + y_off, c[2]] for c in attrs["centerline"]]
            objects.append(MapObject(obj.id, obj.layer, geometry, attrs))
    for col, x_off in enumerate(np.arange(-extent + 25.0, extent, 50.0)):
        objects.append(
            MapObject(
                f"crosswalk_x{col}",
                "crosswalk",
                wkb_polygon(_rect(float(x_off) - 2.0, -55.0, float(x_off) + 2.0, 55.0)),
                {},
            )
        )
    return objects


def _translate_geometry(geometry, dx: float, dy: float):
    from .wkb import Geometry

    parts = []
    for part in geometry.parts:
        moved = part.copy()
        moved[:, 0] += dx
        moved[:, 1] += dy
        parts.append(moved)
    return Geometry(geometry.kind, tuple(parts))


def wkb_polygon(ring: list[list[float]]):
    from .wkb import Geometry

    return Geometry.polygon(np.asarray(ring, dtype=np.float64))


def wkb_line(coords: list[list[float]]):
    from .wkb import Geometry

    return Geometry.linestring(np.asarray(coords, dtype=np.float64))


def build_map(config: SyntheticScenarioConfig) -> MapStore | None:
    if config.map_template == "none":
        return None
    span = config.ego_speed * config.duration_s
    if config.map_template == "straight":
        objects = _straight_map(-20.0, max(span + 20.0, 80.0))
    else:
        objects = _grid_map(max(span + 40.0, 120.0))
    return MapStore.from_objects(objects, scope="per_log")


# -- assembled world ------------------------------------------------------------------


@dataclass
class SyntheticWorld:
    """Everything one synthetic log contains, in canonical conventions."""

    config: SyntheticScenarioConfig
    metadata: LogMetadata
    ego: list[EgoStateRecord]
    boxes: list[BoxRecord]
    traffic_lights: list[TrafficLightRecord]
    cameras: dict[str, list[CameraFrameRecord]]
    lidars: dict[str, list[LidarSweepRecord]]
    map_store: MapStore | None


def build_world(config: SyntheticScenarioConfig) -> SyntheticWorld:
    map_store = build_map(config)
    lane_ids = sorted(map_store.layer_ids("lane")) if map_store is not None else []
    metadata = log_metadata(config, map_ref="map.arrow" if map_store is not None else None)
    return SyntheticWorld(
        config=config,
        metadata=metadata,
        ego=ego_records(config),
        boxes=box_records(config),
        traffic_lights=traffic_light_records(config, lane_ids),
        cameras=camera_frame_records(config),
        lidars=lidar_sweep_records(config),
        map_store=map_store,
    )


def world_streams(world: SyntheticWorld) -> dict[str, list]:
    """Modality -> record list, in canonical (global frame) form."""
    streams: dict[str, list] = {EGO_STATE: world.ego}
    if world.boxes:
        streams[BOXES] = world.boxes
    if world.traffic_lights:
        streams[TRAFFIC_LIGHTS] = world.traffic_lights
    for cam_id, frames in world.cameras.items():
        streams[camera_modality(cam_id)] = frames
    for lidar_id, sweeps in world.lidars.items():
        streams[lidar_modality(lidar_id)] = sweeps
    return streams


def generate_source(config: SyntheticScenarioConfig, out_dir: Path) -> Path:
    """Materialize the scenario as a JSONL source directory.

    Byte-identical across runs with the same config; every third sensor
    payload is embedded as base64, the rest are files under ``payloads/``.
    """
    from .ingest import write_jsonl_source

    world = build_world(config)
    return write_jsonl_source(
        world.metadata,
        world_streams(world),
        Path(out_dir),
        map_store=world.map_store,
        box_frame=config.box_frame,
        inline_every=3,
    )


def build_streams(world: SyntheticWorld) -> list[EventStream]:
    """EventStreams (inline payloads) ready for the log writer."""
    streams = [EventStream.from_records(EGO_STATE, world.ego, world.metadata)]
    if world.boxes:
        streams.append(EventStream.from_records(BOXES, world.boxes, world.metadata))
    if world.traffic_lights:
        streams.append(
            EventStream.from_records(TRAFFIC_LIGHTS, world.traffic_lights, world.metadata)
        )
    for cam_id, frames in sorted(world.cameras.items()):
        streams.append(EventStream.from_records(camera_modality(cam_id), frames, world.metadata))
    for lidar_id, sweeps in sorted(world.lidars.items()):
        streams.append(EventStream.from_records(lidar_modality(lidar_id), sweeps, world.metadata))
    return streams

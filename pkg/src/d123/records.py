"""Per-modality record types, payload references, log metadata and stream schemas.

A log is a directory of independent event streams, one columnar file per
modality. Small vector fields live in records as plain tuples so record
equality is exact value equality; poses are :class:`~d123.geometry.SE3`.
"""
from __future__ import annotations

import enum
import json
import posixpath
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pyarrow as pa

from .errors import SchemaViolation, UnknownSensorId, UnsortedTimestamps
from .geometry import SE3, CameraModel, CameraProjection, PoseOrigin, VehicleParameters

# Fixed modality names; cameras and lidars get one stream per sensor id.
EGO_STATE = "ego_state"
BOXES = "boxes"
TRAFFIC_LIGHTS = "traffic_lights"
CAMERA_PREFIX = "camera_"
LIDAR_PREFIX = "lidar_"
SYNC_PREFIX = "sync_"

STREAM_SUFFIX = ".arrow"

# Arrow schema-metadata keys; the bit-level interop namespace.
METADATA_KEY = b"d123.metadata"
MODALITY_KEY = b"d123.modality"
FORMAT_VERSION_KEY = b"d123.format_version"
SYNC_CONFIG_KEY = b"d123.sync_config"
MAP_SCOPE_KEY = b"d123.map_scope"
FORMAT_VERSION = "1"


def camera_modality(camera_id: str) -> str:
    return CAMERA_PREFIX + camera_id


def lidar_modality(lidar_id: str) -> str:
    return LIDAR_PREFIX + lidar_id


def sensor_id_of(modality: str) -> str | None:
    """Sensor id for camera/lidar modalities, None for the fixed ones."""
    for prefix in (CAMERA_PREFIX, LIDAR_PREFIX):
        if modality.startswith(prefix):
            return modality[len(prefix):]
    return None


def timestamp_column(modality: str) -> str:
    return "timestamp_start" if modality.startswith(LIDAR_PREFIX) else "timestamp"


class Codec(str, enum.Enum):
    RAW_F32LE = "raw_f32le"
    RAW_DEFLATE = "raw_deflate"
    PNG = "png"
    JPEG = "jpeg"
    MP4 = "mp4"
    DRACO = "draco"
    LAZ = "laz"


# Codecs this library can decode to a point array; the rest pass through
# as opaque encoded bytes. Unknown codec strings also pass through.
DECODABLE_CODECS = (Codec.RAW_F32LE.value, Codec.RAW_DEFLATE.value)


@dataclass(frozen=True)
class PayloadRef:
    """Reference to sensor payload bytes, either inline or a relative path."""

    codec: str
    inline: bytes | None = None
    path: str | None = None

    def __post_init__(self) -> None:
        if (self.inline is None) == (self.path is None):
            raise SchemaViolation("payload must be exactly one of inline bytes or a path")
        if self.inline is not None and len(self.inline) == 0:
            raise SchemaViolation("inline payload bytes must be non-empty")
        if self.path is not None:
            p = self.path
            if posixpath.isabs(p) or any(part == ".." for part in p.split("/")):
                raise SchemaViolation(f"payload path must be relative without traversal: {p!r}")

    @property
    def is_inline(self) -> bool:
        return self.inline is not None


@dataclass(frozen=True)
class EgoStateRecord:
    timestamp: int
    pose: SE3  # global frame, at the vehicle's pose_origin
    velocity_body: tuple[float, float, float]
    acceleration_body: tuple[float, float, float]
    angular_velocity_z: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "velocity_body", tuple(float(v) for v in self.velocity_body))
        object.__setattr__(
            self, "acceleration_body", tuple(float(v) for v in self.acceleration_body)
        )
        values = (*self.velocity_body, *self.acceleration_body, self.angular_velocity_z)
        if not all(np.isfinite(values)):
            raise SchemaViolation("ego state fields must be finite")


@dataclass(frozen=True)
class BoxRecord:
    timestamp: int
    track_id: str
    raw_label: str  # source taxonomy string, preserved verbatim
    pose: SE3  # global frame, box center
    extent: tuple[float, float, float]  # length, width, height
    velocity: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        if not self.raw_label:
            raise SchemaViolation("raw_label must be non-empty")
        ext = tuple(float(v) for v in self.extent)
        if len(ext) != 3 or any(v <= 0 for v in ext):
            raise SchemaViolation(f"extent components must be positive: {self.extent!r}")
        object.__setattr__(self, "extent", ext)
        if self.velocity is not None:
            object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))


class TrafficLightState(str, enum.Enum):
    RED = "red"
    YELLOW = "yellow"
    GREEN = "green"
    OFF = "off"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class TrafficLightRecord:
    timestamp: int
    lane_ref: str  # map-object id, resolvable when a map is attached
    state: TrafficLightState

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", TrafficLightState(self.state))


@dataclass(frozen=True)
class CameraFrameRecord:
    timestamp: int
    camera_id: str
    payload: PayloadRef
    frame_index: int | None = None  # row within an mp4 container, when applicable


@dataclass(frozen=True)
class LidarSweepRecord:
    timestamp_start: int
    timestamp_end: int
    lidar_id: str
    payload: PayloadRef

    def __post_init__(self) -> None:
        if self.timestamp_end < self.timestamp_start:
            raise SchemaViolation("timestamp_end must be >= timestamp_start")


def record_timestamp(record) -> int:
    return record.timestamp_start if isinstance(record, LidarSweepRecord) else record.timestamp


# -- log metadata -----------------------------------------------------------


def _se3_to_obj(pose: SE3) -> dict:
    return {
        "translation": [float(v) for v in pose.translation],
        "rotation": [float(v) for v in pose.rotation],
    }


def _se3_from_obj(obj: Mapping) -> SE3:
    return SE3(np.array(obj["translation"], dtype=np.float64), np.array(obj["rotation"], dtype=np.float64))


def _camera_to_obj(cam: CameraModel) -> dict:
    return {
        "model": cam.model.value,
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "distortion": list(cam.distortion),
        "extrinsic": _se3_to_obj(cam.extrinsic),
    }


def _camera_from_obj(obj: Mapping) -> CameraModel:
    return CameraModel(
        model=CameraProjection(obj["model"]),
        fx=obj["fx"],
        fy=obj["fy"],
        cx=obj["cx"],
        cy=obj["cy"],
        width=obj["width"],
        height=obj["height"],
        distortion=tuple(obj["distortion"]),
        extrinsic=_se3_from_obj(obj["extrinsic"]),
    )


@dataclass(frozen=True)
class LogMetadata:
    """Static per-log context, embedded independently in every stream file."""

    log_id: str
    dataset: str
    vehicle: VehicleParameters
    cameras: Mapping[str, CameraModel] = field(default_factory=dict)
    lidars: Mapping[str, SE3] = field(default_factory=dict)
    map_ref: str | None = None  # path relative to the log directory, or absolute
    label_space: str = "unknown"

    def __post_init__(self) -> None:
        object.__setattr__(self, "cameras", dict(self.cameras))
        object.__setattr__(self, "lidars", dict(self.lidars))

    def to_json(self) -> str:
        obj = {
            "log_id": self.log_id,
            "dataset": self.dataset,
            "label_space": self.label_space,
            "map_ref": self.map_ref,
            "vehicle": {
                "length": self.vehicle.length,
                "width": self.vehicle.width,
                "height": self.vehicle.height,
                "wheelbase": self.vehicle.wheelbase,
                "rear_axle_to_center": self.vehicle.rear_axle_to_center,
                "pose_origin": self.vehicle.pose_origin.value,
                "imu_from_center": (
                    list(self.vehicle.imu_from_center)
                    if self.vehicle.imu_from_center is not None
                    else None
                ),
            },
            "cameras": {cid: _camera_to_obj(cam) for cid, cam in sorted(self.cameras.items())},
            "lidars": {lid: _se3_to_obj(pose) for lid, pose in sorted(self.lidars.items())},
        }
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "LogMetadata":
        obj = json.loads(text)
        veh = obj["vehicle"]
        imu = veh.get("imu_from_center")
        return cls(
            log_id=obj["log_id"],
            dataset=obj["dataset"],
            label_space=obj.get("label_space", "unknown"),
            map_ref=obj.get("map_ref"),
            vehicle=VehicleParameters(
                length=veh["length"],
                width=veh["width"],
                height=veh["height"],
                wheelbase=veh["wheelbase"],
                rear_axle_to_center=veh["rear_axle_to_center"],
                pose_origin=PoseOrigin(veh["pose_origin"]),
                imu_from_center=tuple(imu) if imu is not None else None,
            ),
            cameras={cid: _camera_from_obj(o) for cid, o in obj.get("cameras", {}).items()},
            lidars={lid: _se3_from_obj(o) for lid, o in obj.get("lidars", {}).items()},
        )


# -- columnar schemas --------------------------------------------------------

_POSE_FIELDS = [
    ("tx", pa.float64()),
    ("ty", pa.float64()),
    ("tz", pa.float64()),
    ("qw", pa.float64()),
    ("qx", pa.float64()),
    ("qy", pa.float64()),
    ("qz", pa.float64()),
]

_PAYLOAD_FIELDS = [
    ("codec", pa.string()),
    ("payload_inline", pa.binary()),
    ("payload_path", pa.string()),
]


def stream_schema(modality: str) -> pa.Schema:
    if modality == EGO_STATE:
        fields = (
            [("timestamp", pa.int64())]
            + _POSE_FIELDS
            + [
                ("vx", pa.float64()),
                ("vy", pa.float64()),
                ("vz", pa.float64()),
                ("ax", pa.float64()),
                ("ay", pa.float64()),
                ("az", pa.float64()),
                ("angular_velocity_z", pa.float64()),
            ]
        )
    elif modality == BOXES:
        fields = (
            [("timestamp", pa.int64()), ("track_id", pa.string()), ("raw_label", pa.string())]
            + _POSE_FIELDS
            + [
                ("length", pa.float64()),
                ("width", pa.float64()),
                ("height", pa.float64()),
                ("vx", pa.float64()),
                ("vy", pa.float64()),
                ("vz", pa.float64()),
            ]
        )
    elif modality == TRAFFIC_LIGHTS:
        fields = [("timestamp", pa.int64()), ("lane_ref", pa.string()), ("state", pa.string())]
    elif modality.startswith(CAMERA_PREFIX):
        fields = [
            ("timestamp", pa.int64()),
            ("camera_id", pa.string()),
            ("frame_index", pa.int64()),
        ] + _PAYLOAD_FIELDS
    elif modality.startswith(LIDAR_PREFIX):
        fields = [
            ("timestamp_start", pa.int64()),
            ("timestamp_end", pa.int64()),
            ("lidar_id", pa.string()),
        ] + _PAYLOAD_FIELDS
    else:
        raise SchemaViolation(f"unknown modality {modality!r}")
    return pa.schema(fields)


def _pose_columns(poses: Sequence[SE3]) -> dict[str, list[float]]:
    cols: dict[str, list[float]] = {name: [] for name, _ in _POSE_FIELDS}
    for pose in poses:
        tx, ty, tz = pose.translation
        qw, qx, qy, qz = pose.rotation
        for name, value in zip(
            ("tx", "ty", "tz", "qw", "qx", "qy", "qz"), (tx, ty, tz, qw, qx, qy, qz)
        ):
            cols[name].append(float(value))
    return cols


def _payload_columns(payloads: Sequence[PayloadRef]) -> dict[str, list]:
    return {
        "codec": [p.codec for p in payloads],
        "payload_inline": [p.inline for p in payloads],
        "payload_path": [p.path for p in payloads],
    }


def table_from_records(modality: str, records: Sequence) -> pa.Table:
    """Build the columnar table for one modality from record objects."""
    schema = stream_schema(modality)
    if modality == EGO_STATE:
        data = {
            "timestamp": [r.timestamp for r in records],
            **_pose_columns([r.pose for r in records]),
            "vx": [r.velocity_body[0] for r in records],
            "vy": [r.velocity_body[1] for r in records],
            "vz": [r.velocity_body[2] for r in records],
            "ax": [r.acceleration_body[0] for r in records],
            "ay": [r.acceleration_body[1] for r in records],
            "az": [r.acceleration_body[2] for r in records],
            "angular_velocity_z": [r.angular_velocity_z for r in records],
        }
    elif modality == BOXES:
        data = {
            "timestamp": [r.timestamp for r in records],
            "track_id": [r.track_id for r in records],
            "raw_label": [r.raw_label for r in records],
            **_pose_columns([r.pose for r in records]),
            "length": [r.extent[0] for r in records],
            "width": [r.extent[1] for r in records],
            "height": [r.extent[2] for r in records],
            "vx": [r.velocity[0] if r.velocity else None for r in records],
            "vy": [r.velocity[1] if r.velocity else None for r in records],
            "vz": [r.velocity[2] if r.velocity else None for r in records],
        }
    elif modality == TRAFFIC_LIGHTS:
        data = {
            "timestamp": [r.timestamp for r in records],
            "lane_ref": [r.lane_ref for r in records],
            "state": [r.state.value for r in records],
        }
    elif modality.startswith(CAMERA_PREFIX):
        data = {
            "timestamp": [r.timestamp for r in records],
            "camera_id": [r.camera_id for r in records],
            "frame_index": [r.frame_index for r in records],
            **_payload_columns([r.payload for r in records]),
        }
    elif modality.startswith(LIDAR_PREFIX):
        data = {
            "timestamp_start": [r.timestamp_start for r in records],
            "timestamp_end": [r.timestamp_end for r in records],
            "lidar_id": [r.lidar_id for r in records],
            **_payload_columns([r.payload for r in records]),
        }
    else:
        raise SchemaViolation(f"unknown modality {modality!r}")
    return pa.table(data, schema=schema)


def _row_pose(row: Mapping) -> SE3:
    return SE3(
        np.array([row["tx"], row["ty"], row["tz"]]),
        np.array([row["qw"], row["qx"], row["qy"], row["qz"]]),
    )


def _row_payload(row: Mapping) -> PayloadRef:
    return PayloadRef(codec=row["codec"], inline=row["payload_inline"], path=row["payload_path"])


def record_from_row(modality: str, row: Mapping):
    """Rebuild the record dataclass for one table row (a column→value mapping)."""
    if modality == EGO_STATE:
        return EgoStateRecord(
            timestamp=row["timestamp"],
            pose=_row_pose(row),
            velocity_body=(row["vx"], row["vy"], row["vz"]),
            acceleration_body=(row["ax"], row["ay"], row["az"]),
            angular_velocity_z=row["angular_velocity_z"],
        )
    if modality == BOXES:
        velocity = None
        if row["vx"] is not None:
            velocity = (row["vx"], row["vy"], row["vz"])
        return BoxRecord(
            timestamp=row["timestamp"],
            track_id=row["track_id"],
            raw_label=row["raw_label"],
            pose=_row_pose(row),
            extent=(row["length"], row["width"], row["height"]),
            velocity=velocity,
        )
    if modality == TRAFFIC_LIGHTS:
        return TrafficLightRecord(
            timestamp=row["timestamp"], lane_ref=row["lane_ref"], state=TrafficLightState(row["state"])
        )
    if modality.startswith(CAMERA_PREFIX):
        return CameraFrameRecord(
            timestamp=row["timestamp"],
            camera_id=row["camera_id"],
            payload=_row_payload(row),
            frame_index=row["frame_index"],
        )
    if modality.startswith(LIDAR_PREFIX):
        return LidarSweepRecord(
            timestamp_start=row["timestamp_start"],
            timestamp_end=row["timestamp_end"],
            lidar_id=row["lidar_id"],
            payload=_row_payload(row),
        )
    raise SchemaViolation(f"unknown modality {modality!r}")


@dataclass
class EventStream:
    """One modality's timestamped events as a columnar table plus context."""

    modality: str
    table: pa.Table
    metadata: LogMetadata

    @classmethod
    def from_records(cls, modality: str, records: Sequence, metadata: LogMetadata) -> "EventStream":
        if modality.startswith(CAMERA_PREFIX):
            sensor = sensor_id_of(modality)
            for r in records:
                if r.camera_id != sensor:
                    raise SchemaViolation(
                        f"record camera_id {r.camera_id!r} does not match stream {modality!r}"
                    )
            if records and sensor not in metadata.cameras:
                raise UnknownSensorId(f"camera {sensor!r} missing from log metadata")
        if modality.startswith(LIDAR_PREFIX):
            sensor = sensor_id_of(modality)
            for r in records:
                if r.lidar_id != sensor:
                    raise SchemaViolation(
                        f"record lidar_id {r.lidar_id!r} does not match stream {modality!r}"
                    )
            if records and sensor not in metadata.lidars:
                raise UnknownSensorId(f"lidar {sensor!r} missing from log metadata")
        stream = cls(modality=modality, table=table_from_records(modality, records), metadata=metadata)
        stream.validate_timestamps()
        return stream

    def validate_timestamps(self) -> None:
        ts = self.timestamps()
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise UnsortedTimestamps(f"{self.modality}: timestamps must be strictly increasing")

    def timestamps(self) -> np.ndarray:
        return self.table.column(timestamp_column(self.modality)).to_numpy()

    @property
    def num_rows(self) -> int:
        return self.table.num_rows

    def record(self, i: int):
        row = {name: self.table.column(name)[i].as_py() for name in self.table.column_names}
        return record_from_row(self.modality, row)

    def records(self) -> list:
        rows = self.table.to_pylist()
        return [record_from_row(self.modality, row) for row in rows]

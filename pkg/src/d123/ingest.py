"""JSONL interchange: parse reference sources, convert to logs, export back.

The reference source layout is a directory holding ``log.json`` (static
metadata), one ``<modality>.jsonl`` file per event stream, sensor payloads
under ``payloads/`` and an optional ``map/`` directory of per-layer GeoJSON.
Field names carry unit suffixes so a line is self-describing. Box poses may
be declared in ``global``, ``body`` or ``camera:<id>`` coordinates; parsing
always converts to the canonical global frame, which for non-global frames
requires an ego state at the exact same timestamp. See docs/source_format.md
for the line-by-line contract.
"""
from __future__ import annotations

import base64
import binascii
import dataclasses
import json
import shutil
import tempfile
import urllib.request
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    IoFailure,
    NonMonotonicTimestamps,
    SchemaViolation,
    UnknownFrameTag,
    UnknownSensorId,
)
from .geometry import SE3, quat_slerp
from .logio import write_log
from .mapstore import MapStore, export_geojson, import_geojson
from .records import (
    BOXES,
    EGO_STATE,
    TRAFFIC_LIGHTS,
    BoxRecord,
    CameraFrameRecord,
    EgoStateRecord,
    EventStream,
    LidarSweepRecord,
    LogMetadata,
    PayloadRef,
    TrafficLightRecord,
    TrafficLightState,
    record_timestamp,
    sensor_id_of,
    stream_schema,
)
from .sync import SyncConfig, build_sync_table, write_sync_table

SOURCE_FORMAT = "d123-jsonl-v1"
LOG_FILE = "log.json"
MAP_DIR = "map"
PAYLOAD_DIR = "payloads"

MAP_FILE = "map.arrow"


@dataclass
class ParsedLog:
    """A source directory parsed into canonical records (global frame)."""

    metadata: LogMetadata
    streams: dict[str, list]
    map_store: MapStore | None
    source_dir: Path


def _fail(path: Path, line_no: int, message: str) -> SchemaViolation:
    return SchemaViolation(f"{path.name}:{line_no}: {message}")


def _field(obj: dict, key: str, path: Path, line_no: int):
    if key not in obj:
        raise _fail(path, line_no, f"missing field {key!r}")
    return obj[key]


def _vec(obj: dict, key: str, n: int, path: Path, line_no: int) -> tuple[float, ...]:
    value = _field(obj, key, path, line_no)
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise _fail(path, line_no, f"{key} must be a list of {n} numbers")
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise _fail(path, line_no, f"{key} must be numeric") from None
    if not all(np.isfinite(out)):
        raise _fail(path, line_no, f"{key} must be finite")
    return out


def _pose(obj: dict, path: Path, line_no: int) -> SE3:
    t = _vec(obj, "position_m", 3, path, line_no)
    q = _vec(obj, "rotation_wxyz", 4, path, line_no)
    try:
        return SE3(np.array(t), np.array(q))
    except ValueError as exc:
        raise _fail(path, line_no, str(exc)) from None


def _payload(obj: dict, path: Path, line_no: int) -> PayloadRef:
    codec = _field(obj, "codec", path, line_no)
    has_file = "payload_file" in obj and obj["payload_file"] is not None
    has_b64 = "payload_b64" in obj and obj["payload_b64"] is not None
    if has_file == has_b64:
        raise _fail(path, line_no, "exactly one of payload_file / payload_b64 required")
    try:
        if has_b64:
            return PayloadRef(codec=codec, inline=base64.b64decode(obj["payload_b64"], validate=True))
        return PayloadRef(codec=codec, path=obj["payload_file"])
    except (binascii.Error, SchemaViolation) as exc:
        raise _fail(path, line_no, f"bad payload reference: {exc}") from None


def _iter_lines(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise _fail(path, line_no, f"invalid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise _fail(path, line_no, "each line must be a JSON object")
        yield line_no, obj


class _BoxFrameResolver:
    """Converts declared-frame box poses to the global frame.

    body and camera frames are relative to the ego at the same instant, so a
    non-global box line must coincide exactly with an ego state event.
    """

    def __init__(self, metadata: LogMetadata, ego: list[EgoStateRecord]):
        self._metadata = metadata
        self._ego_ts = np.array([r.timestamp for r in ego], dtype=np.int64)
        self._ego = ego

    def _ego_pose(self, timestamp: int, path: Path, line_no: int) -> SE3:
        i = int(np.searchsorted(self._ego_ts, timestamp))
        if i >= len(self._ego_ts) or self._ego_ts[i] != timestamp:
            raise _fail(path, line_no, f"no ego state at exact timestamp {timestamp}")
        return self._ego[i].pose

    def to_global(self, frame: str, pose: SE3, timestamp: int, path: Path, line_no: int) -> SE3:
        if frame == "global":
            return pose
        if frame == "body":
            return self._ego_pose(timestamp, path, line_no).compose(pose)
        if frame.startswith("camera:"):
            cam_id = frame.split(":", 1)[1]
            cam = self._metadata.cameras.get(cam_id)
            if cam is None:
                raise UnknownSensorId(f"{path.name}:{line_no}: frame references unknown camera {cam_id!r}")
            body_pose = cam.extrinsic.compose(pose)
            return self._ego_pose(timestamp, path, line_no).compose(body_pose)
        raise UnknownFrameTag(f"{path.name}:{line_no}: unknown frame {frame!r}")


def _parse_ego(path: Path) -> list[EgoStateRecord]:
    out = []
    for line_no, obj in _iter_lines(path):
        out.append(
            EgoStateRecord(
                timestamp=int(_field(obj, "timestamp_us", path, line_no)),
                pose=_pose(obj, path, line_no),
                velocity_body=_vec(obj, "velocity_body_mps", 3, path, line_no),
                acceleration_body=_vec(obj, "acceleration_body_mps2", 3, path, line_no),
                angular_velocity_z=float(_field(obj, "angular_velocity_z_radps", path, line_no)),
            )
        )
    return out


def _parse_boxes(path: Path, resolver: _BoxFrameResolver) -> list[BoxRecord]:
    out = []
    for line_no, obj in _iter_lines(path):
        timestamp = int(_field(obj, "timestamp_us", path, line_no))
        frame = obj.get("frame", "global")
        pose = resolver.to_global(frame, _pose(obj, path, line_no), timestamp, path, line_no)
        track_id = str(_field(obj, "track_id", path, line_no))
        label = str(_field(obj, "label", path, line_no))
        extent = _vec(obj, "extent_lwh_m", 3, path, line_no)
        velocity = obj.get("velocity_mps")
        try:
            record = BoxRecord(
                timestamp=timestamp,
                track_id=track_id,
                raw_label=label,
                pose=pose,
                extent=extent,
                velocity=tuple(velocity) if velocity is not None else None,
            )
        except SchemaViolation as exc:
            raise _fail(path, line_no, str(exc)) from None
        out.append(record)
    return out


def _parse_traffic_lights(path: Path) -> list[TrafficLightRecord]:
    out = []
    for line_no, obj in _iter_lines(path):
        state = _field(obj, "state", path, line_no)
        try:
            state = TrafficLightState(state)
        except ValueError:
            raise _fail(path, line_no, f"unknown traffic light state {state!r}") from None
        out.append(
            TrafficLightRecord(
                timestamp=int(_field(obj, "timestamp_us", path, line_no)),
                lane_ref=str(_field(obj, "lane_ref", path, line_no)),
                state=state,
            )
        )
    return out


def _parse_camera(path: Path, camera_id: str) -> list[CameraFrameRecord]:
    out = []
    for line_no, obj in _iter_lines(path):
        frame_index = obj.get("frame_index")
        out.append(
            CameraFrameRecord(
                timestamp=int(_field(obj, "timestamp_us", path, line_no)),
                camera_id=camera_id,
                payload=_payload(obj, path, line_no),
                frame_index=int(frame_index) if frame_index is not None else None,
            )
        )
    return out


def _parse_lidar(path: Path, lidar_id: str) -> list[LidarSweepRecord]:
    out = []
    for line_no, obj in _iter_lines(path):
        start = int(_field(obj, "timestamp_start_us", path, line_no))
        end = int(_field(obj, "timestamp_end_us", path, line_no))
        payload = _payload(obj, path, line_no)
        try:
            record = LidarSweepRecord(
                timestamp_start=start, timestamp_end=end, lidar_id=lidar_id, payload=payload
            )
        except SchemaViolation as exc:
            raise _fail(path, line_no, str(exc)) from None
        out.append(record)
    return out


def _check_monotonic(modality: str, records: list, path: Path) -> None:
    prev = None
    for n, record in enumerate(records, start=1):
        ts = record_timestamp(record)
        if prev is not None and ts <= prev:
            raise NonMonotonicTimestamps(
                f"{path.name}: event {n} at {ts} does not advance past {prev}"
            )
        prev = ts


def parse_jsonl_source(source_dir: Path) -> ParsedLog:
    """Parse a reference JSONL source directory into canonical records."""
    source_dir = Path(source_dir)
    log_path = source_dir / LOG_FILE
    if not log_path.is_file():
        raise IoFailure(f"source has no {LOG_FILE}: {source_dir}")
    try:
        header = json.loads(log_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{LOG_FILE}: invalid JSON: {exc}") from None
    if header.get("format") != SOURCE_FORMAT:
        raise SchemaViolation(f"{LOG_FILE}: format must be {SOURCE_FORMAT!r}")
    try:
        metadata = LogMetadata.from_json(json.dumps(header["metadata"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"{LOG_FILE}: bad metadata: {exc}") from None

    stems = sorted(p.stem for p in source_dir.glob("*.jsonl"))
    for stem in stems:
        try:
            stream_schema(stem)
        except SchemaViolation:
            raise SchemaViolation(f"unrecognized stream file {stem}.jsonl") from None

    streams: dict[str, list] = {}
    ego: list[EgoStateRecord] = []
    if EGO_STATE in stems:
        ego = _parse_ego(source_dir / f"{EGO_STATE}.jsonl")
        streams[EGO_STATE] = ego
    resolver = _BoxFrameResolver(metadata, ego)
    for stem in stems:
        path = source_dir / f"{stem}.jsonl"
        if stem == EGO_STATE:
            continue
        if stem == BOXES:
            streams[stem] = _parse_boxes(path, resolver)
        elif stem == TRAFFIC_LIGHTS:
            streams[stem] = _parse_traffic_lights(path)
        elif stem.startswith("camera_"):
            streams[stem] = _parse_camera(path, sensor_id_of(stem))
        elif stem.startswith("lidar_"):
            streams[stem] = _parse_lidar(path, sensor_id_of(stem))
    for stem, records in streams.items():
        _check_monotonic(stem, records, source_dir / f"{stem}.jsonl")

    map_dir = header.get("map_dir")
    map_store = None
    if map_dir is not None:
        map_store = import_geojson(source_dir / map_dir)
    return ParsedLog(metadata=metadata, streams=streams, map_store=map_store, source_dir=source_dir)


# -- box track interpolation ------------------------------------------------------


def interpolate_box_records(records: list[BoxRecord], target_hz: float) -> list[BoxRecord]:
    """Upsample box tracks onto per-track grids at ``target_hz``.

    Each track gets the grid t = t_first + k*period clipped to its own span;
    positions interpolate linearly, rotations by slerp, velocities linearly
    when both bracketing keyframes carry one. Output timestamps are nudged
    by +1µs on collision to keep the merged stream strictly increasing.
    """
    period = int(round(1_000_000 / target_hz))
    by_track: dict[str, list[BoxRecord]] = {}
    for record in records:
        by_track.setdefault(record.track_id, []).append(record)

    out: list[BoxRecord] = []
    for track_id in sorted(by_track):
        track = sorted(by_track[track_id], key=lambda r: r.timestamp)
        ts = np.array([r.timestamp for r in track], dtype=np.int64)
        if len(track) == 1:
            out.append(track[0])
            continue
        grid = ts[0] + np.arange((int(ts[-1]) - int(ts[0])) // period + 1, dtype=np.int64) * period
        hi = np.minimum(np.searchsorted(ts, grid, side="left"), len(ts) - 1)
        lo = np.where(ts[hi] == grid, hi, np.maximum(hi - 1, 0))
        for t, i0, i1 in zip(grid.tolist(), lo.tolist(), hi.tolist()):
            a, b = track[i0], track[i1]
            if i0 == i1:
                alpha = 0.0
            else:
                alpha = (t - a.timestamp) / (b.timestamp - a.timestamp)
            translation = (1 - alpha) * a.pose.translation + alpha * b.pose.translation
            rotation = quat_slerp(a.pose.rotation, b.pose.rotation, alpha)
            velocity = None
            if a.velocity is not None and b.velocity is not None:
                velocity = tuple(
                    (1 - alpha) * va + alpha * vb for va, vb in zip(a.velocity, b.velocity)
                )
            out.append(
                BoxRecord(
                    timestamp=int(t),
                    track_id=track_id,
                    raw_label=a.raw_label,
                    pose=SE3(translation, rotation),
                    extent=a.extent,
                    velocity=velocity,
                )
            )
    out.sort(key=lambda r: (r.timestamp, r.track_id))
    bumped: list[BoxRecord] = []
    prev = None
    for record in out:
        ts = record.timestamp
        if prev is not None and ts <= prev:
            ts = prev + 1
            record = dataclasses.replace(record, timestamp=ts)
        bumped.append(record)
        prev = ts
    return bumped


# -- conversion ----------------------------------------------------------------------


def default_sync_reference(modalities: list[str]) -> str:
    if BOXES in modalities:
        return BOXES
    if EGO_STATE in modalities:
        return EGO_STATE
    return sorted(modalities)[0]


def convert(
    source_dir: Path,
    out_dir: Path,
    mode: str = "external",
    interpolate_boxes_hz: float | None = None,
    build_sync: bool = True,
) -> Path:
    """Convert a JSONL source into a log directory; reruns are byte-identical.

    A keyframe sync table over the default reference is built and persisted
    alongside the streams. If conversion fails partway, a directory created
    by this call is removed.
    """
    parsed = parse_jsonl_source(source_dir)
    out_dir = Path(out_dir)
    created_fresh = not out_dir.exists()
    try:
        streams_records = dict(parsed.streams)
        if interpolate_boxes_hz is not None and BOXES in streams_records:
            streams_records[BOXES] = interpolate_box_records(
                streams_records[BOXES], interpolate_boxes_hz
            )
        metadata = dataclasses.replace(
            parsed.metadata, map_ref=MAP_FILE if parsed.map_store is not None else None
        )
        streams = [
            EventStream.from_records(modality, records, metadata)
            for modality, records in sorted(streams_records.items())
        ]
        write_log(out_dir, streams, metadata, mode=mode, payload_source=parsed.source_dir)
        if parsed.map_store is not None:
            parsed.map_store.save(out_dir / MAP_FILE)
        if build_sync and streams:
            from .logio import open_log

            with open_log(out_dir) as log:
                config = SyncConfig(reference=default_sync_reference(log.modalities()))
                table = build_sync_table(log, config)
                write_sync_table(out_dir, table, metadata)
    except BaseException:
        if created_fresh:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise
    return out_dir


# -- export ---------------------------------------------------------------------------


_PAYLOAD_EXT = {"png": ".png", "jpeg": ".jpg", "mp4": ".mp4"}


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _pose_fields(pose: SE3) -> dict:
    return {
        "position_m": [float(v) for v in pose.translation],
        "rotation_wxyz": [float(v) for v in pose.rotation],
    }


def write_jsonl_source(
    metadata: LogMetadata,
    streams: dict[str, list],
    out_dir: Path,
    map_store: MapStore | None = None,
    box_frame: str = "global",
    payload_fetch=None,
    inline_every: int | None = None,
) -> Path:
    """Serialize canonical records (global frame) as a JSONL source directory.

    ``payload_fetch(ref) -> bytes`` resolves payload references; the default
    handles inline ones only. ``inline_every=k`` embeds every k-th payload as
    base64 instead of a file, exercising both transports.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if payload_fetch is None:
        payload_fetch = _inline_only_fetch
    meta_obj = json.loads(metadata.to_json())
    meta_obj["map_ref"] = None
    header = {
        "format": SOURCE_FORMAT,
        "map_dir": MAP_DIR if map_store is not None else None,
        "metadata": meta_obj,
    }
    (out_dir / LOG_FILE).write_text(_dump(header) + "\n")

    resolver = _BoxFrameResolver(metadata, streams.get(EGO_STATE, []))
    for modality in sorted(streams):
        lines = []
        for row, record in enumerate(streams[modality]):
            if modality == EGO_STATE:
                obj = {
                    "timestamp_us": record.timestamp,
                    **_pose_fields(record.pose),
                    "velocity_body_mps": list(record.velocity_body),
                    "acceleration_body_mps2": list(record.acceleration_body),
                    "angular_velocity_z_radps": record.angular_velocity_z,
                }
            elif modality == BOXES:
                pose = record.pose
                if box_frame != "global":
                    pose = _reframe(resolver, box_frame, pose, record.timestamp)
                obj = {
                    "timestamp_us": record.timestamp,
                    "track_id": record.track_id,
                    "label": record.raw_label,
                    "frame": box_frame,
                    **_pose_fields(pose),
                    "extent_lwh_m": list(record.extent),
                    "velocity_mps": list(record.velocity) if record.velocity else None,
                }
            elif modality == TRAFFIC_LIGHTS:
                obj = {
                    "timestamp_us": record.timestamp,
                    "lane_ref": record.lane_ref,
                    "state": record.state.value,
                }
            else:
                raw = payload_fetch(record.payload)
                inline = inline_every is not None and row % inline_every == 0
                obj = _payload_line(modality, record, raw, out_dir, row, inline)
            lines.append(_dump(obj))
        (out_dir / f"{modality}.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))

    if map_store is not None:
        export_geojson(map_store, out_dir / MAP_DIR)
    return out_dir


def _inline_only_fetch(ref: PayloadRef) -> bytes:
    if ref.inline is None:
        raise SchemaViolation("payload_fetch required for path-based payload references")
    return ref.inline


def export_jsonl(log_dir: Path, out_dir: Path, box_frame: str = "global") -> Path:
    """Write a log back out as a JSONL source directory (the parser's inverse).

    Payloads are materialized as files under ``payloads/``; box poses can be
    re-expressed in ``body`` or ``camera:<id>`` coordinates, which requires
    exact-timestamp ego coverage of every box event.
    """
    from .logio import open_log

    with open_log(log_dir) as log:
        streams = {modality: log.stream(modality).records() for modality in log.modalities()}
        map_store = None
        if log.metadata.map_ref is not None:
            map_store = MapStore.load(Path(log.directory) / log.metadata.map_ref)
        return write_jsonl_source(
            log.metadata,
            streams,
            out_dir,
            map_store=map_store,
            box_frame=box_frame,
            payload_fetch=log.payload_bytes,
        )


def _reframe(resolver: _BoxFrameResolver, frame: str, pose_global: SE3, timestamp: int) -> SE3:
    source = Path(f"{BOXES}.jsonl")
    if frame == "body":
        ego = resolver._ego_pose(timestamp, source, 0)
        return ego.inverse().compose(pose_global)
    if frame.startswith("camera:"):
        cam_id = frame.split(":", 1)[1]
        cam = resolver._metadata.cameras.get(cam_id)
        if cam is None:
            raise UnknownSensorId(f"unknown camera {cam_id!r} for export frame")
        ego = resolver._ego_pose(timestamp, source, 0)
        return cam.extrinsic.inverse().compose(ego.inverse().compose(pose_global))
    raise UnknownFrameTag(f"unknown export frame {frame!r}")


def _payload_line(modality: str, record, raw: bytes, out_dir: Path, row: int, inline: bool) -> dict:
    if modality.startswith("camera_"):
        obj = {
            "timestamp_us": record.timestamp,
            "codec": record.payload.codec,
            "frame_index": record.frame_index,
        }
    else:
        obj = {
            "timestamp_start_us": record.timestamp_start,
            "timestamp_end_us": record.timestamp_end,
            "codec": record.payload.codec,
        }
    if inline:
        obj["payload_b64"] = base64.b64encode(raw).decode("ascii")
        return obj
    ext = _PAYLOAD_EXT.get(record.payload.codec, ".bin")
    rel = f"{PAYLOAD_DIR}/{modality}/{row:08d}{ext}"
    path = out_dir / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    obj["payload_file"] = rel
    return obj


# -- remote sources -----------------------------------------------------------------


def fetch_source(source: str, scratch_dir: Path | None = None) -> Path:
    """Resolve a source location: a local directory, or an http(s) zip of one."""
    if source.startswith(("http://", "https://")):
        scratch = Path(scratch_dir) if scratch_dir else Path(tempfile.mkdtemp(prefix="d123_src_"))
        scratch.mkdir(parents=True, exist_ok=True)
        archive = scratch / "source.zip"
        try:
            urllib.request.urlretrieve(source, archive)
        except OSError as exc:
            raise IoFailure(f"download failed: {exc}") from exc
        with zipfile.ZipFile(archive) as zf:
            zf.extractall(scratch / "unpacked")
        candidates = sorted((scratch / "unpacked").rglob(LOG_FILE))
        if not candidates:
            raise SchemaViolation(f"archive holds no {LOG_FILE}")
        return candidates[0].parent
    path = Path(source)
    if not path.is_dir():
        raise IoFailure(f"source directory not found: {source}")
    return path

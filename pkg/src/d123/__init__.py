"""Storage engine and access toolkit for heterogeneous multi-modal driving logs.

Logs are directories of per-modality columnar event streams (one
memory-mappable IPC file each) with embedded metadata, optional payload
blobs, persisted sync tables and a WKB-encoded HD-map store. On top sit
timestamp matching, scene-level filtered views with LRU-cached lazy access,
a lane-graph map API and an annotation-statistics pipeline.
"""

from .analytics import (
    BinsConfig,
    Category,
    DEFAULT_TAXONOMY,
    Histogram,
    HistogramSet,
    TaxonomyMap,
    TrackKinematics,
    UnmappedPolicy,
    build_histograms,
    export_csv,
    map_label,
    summary_json,
    track_kinematics,
)
from .errors import *  # noqa: F401,F403 - error types are part of the public surface
from .geometry import (
    FORWARD_CAMERA_ROTATION,
    MICROS_PER_SECOND,
    SE3,
    CameraModel,
    CameraProjection,
    PoseOrigin,
    VehicleParameters,
    micros_to_seconds,
    pose_at_reference,
    quat_slerp,
    seconds_to_micros,
)
from .ingest import (
    ParsedLog,
    convert,
    export_jsonl,
    fetch_source,
    interpolate_box_records,
    parse_jsonl_source,
    write_jsonl_source,
)
from .logio import (
    COUNTERS,
    LogHandle,
    decode_payload,
    decode_points,
    encode_points,
    open_log,
    reset_io_counters,
    write_log,
)
from .mapstore import (
    ALL_LAYERS,
    MapObject,
    MapStore,
    POLYGON_LAYERS,
    POLYLINE_LAYERS,
    export_geojson,
    import_geojson,
    point_geometry_distance,
    triangulate_polygon,
)
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
from .scene import (
    GLOBAL_CACHE,
    LogCache,
    SceneFilter,
    SceneView,
    deterministic_shuffle,
    get_filtered_scenes,
    iter_log_dirs,
    load_map_cached,
)
from .strtree import StrTree
from .sync import (
    ABSENT,
    MatchCriteria,
    MatchMode,
    SyncConfig,
    SyncTable,
    build_sync_table,
    match_timestamp,
    match_timestamps,
    read_sync_table,
    resample_grid,
    window_indices,
    write_sync_table,
)
from .synthetic import RIG_PRESETS, SyntheticScenarioConfig, build_streams, build_world, generate_source
from .wkb import Geometry, GeometryKind

__version__ = "0.1.0"

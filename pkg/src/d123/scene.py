"""Scene-level access: filtered enumeration of windowed views over many logs.

A scene is a fixed-length window (history, current, future) into one log's
sync table at a target iteration period. SceneViews hold indices only; row
data loads on demand through a shared LRU cache of open log handles, so
instantiating any number of scenes costs no row reads and keeps at most
``capacity`` files open.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    IterationOutOfRange,
    MapUnavailable,
    MissingModality,
    UnknownSensorId,
    UnknownSplit,
)
from .geometry import seconds_to_micros
from .logio import LogHandle, open_log
from .mapstore import MapStore
from .records import (
    BOXES,
    EGO_STATE,
    TRAFFIC_LIGHTS,
    BoxRecord,
    CameraFrameRecord,
    EgoStateRecord,
    LidarSweepRecord,
    TrafficLightRecord,
    camera_modality,
    lidar_modality,
)
from .sync import (
    ABSENT,
    MatchCriteria,
    SyncConfig,
    SyncTable,
    build_sync_table,
    match_timestamp,
    read_sync_table,
    window_indices,
    write_sync_table,
)

DEFAULT_CACHE_CAPACITY = 32

# Events closer than this belong to one annotation instant; per-stream
# timestamps are strictly increasing, so concurrent annotations arrive
# microsecond-staggered and need regrouping on read.
GROUP_GAP_US = 1_000


class LogCache:
    """Shared LRU cache of open log handles, keyed by resolved directory.

    Eviction drops the cache's reference before a new handle opens, which
    bounds concurrently open handles at ``capacity``. An evicted handle that
    a reader still holds stays valid until that reference is released.
    """

    def __init__(self, capacity: int = DEFAULT_CACHE_CAPACITY):
        if capacity < 1:
            raise ValueError("cache capacity must be >= 1")
        self.capacity = capacity
        self._lock = threading.RLock()
        self._entries: OrderedDict[str, LogHandle] = OrderedDict()
        self.eviction_log: list[str] = []
        self.hits = 0
        self.misses = 0

    @staticmethod
    def _key(directory: Path) -> str:
        return str(Path(directory).resolve())

    def get(self, directory: Path) -> LogHandle:
        key = self._key(directory)
        with self._lock:
            handle = self._entries.get(key)
            if handle is not None:
                self.hits += 1
                self._entries.move_to_end(key)
                return handle
            self.misses += 1
            while len(self._entries) >= self.capacity:
                old_key, old = self._entries.popitem(last=False)
                self.eviction_log.append(old_key)
                del old  # releases before the new open; closes unless in use
            handle = open_log(directory)
            self._entries[key] = handle
            return handle

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def __contains__(self, directory: Path) -> bool:
        with self._lock:
            return self._key(directory) in self._entries

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()


GLOBAL_CACHE = LogCache()

_MAP_CACHE: dict[str, MapStore] = {}
_MAP_CACHE_LOCK = threading.Lock()


def load_map_cached(path: Path) -> MapStore:
    """Load a map once per resolved path; later calls share the instance."""
    key = str(Path(path).resolve())
    with _MAP_CACHE_LOCK:
        store = _MAP_CACHE.get(key)
        if store is None:
            store = MapStore.load(path)
            _MAP_CACHE[key] = store
        return store


def clear_map_cache() -> None:
    with _MAP_CACHE_LOCK:
        _MAP_CACHE.clear()


# -- filters ------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneFilter:
    """What to enumerate: which splits, at what rate, with what context.

    Durations are integer microseconds; :meth:`from_seconds` converts. The
    scene length in frames is ``history//period + 1 + future//period``;
    stride defaults to that length (non-overlapping windows).
    """

    split_names: tuple[str, ...] | None = None  # None = every split present
    target_iteration_period: int = 500_000
    history_duration: int = 0
    future_duration: int = 0
    required_modalities: frozenset[str] = frozenset()
    shuffle: bool = False
    seed: int = 0
    stride: int | None = None

    def __post_init__(self) -> None:
        if self.target_iteration_period <= 0:
            raise ValueError("target_iteration_period must be > 0")
        if self.history_duration < 0 or self.future_duration < 0:
            raise ValueError("durations must be >= 0")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1 frame")
        if self.split_names is not None:
            object.__setattr__(self, "split_names", tuple(self.split_names))
        object.__setattr__(self, "required_modalities", frozenset(self.required_modalities))

    @classmethod
    def from_seconds(
        cls,
        target_iteration_period_s: float,
        history_duration_s: float = 0.0,
        future_duration_s: float = 0.0,
        **kwargs,
    ) -> "SceneFilter":
        return cls(
            target_iteration_period=seconds_to_micros(target_iteration_period_s),
            history_duration=seconds_to_micros(history_duration_s),
            future_duration=seconds_to_micros(future_duration_s),
            **kwargs,
        )

    @property
    def history_frames(self) -> int:
        return self.history_duration // self.target_iteration_period

    @property
    def future_frames(self) -> int:
        return self.future_duration // self.target_iteration_period

    @property
    def scene_length(self) -> int:
        return self.history_frames + 1 + self.future_frames


# -- deterministic shuffle ------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def deterministic_shuffle(items: list, seed: int) -> None:
    """In-place Fisher-Yates driven by splitmix64.

    Fixed integer arithmetic (not a platform RNG) so any implementation of
    the same scheme — in any language — produces the identical order.
    """
    state = seed & _MASK64
    for i in range(len(items) - 1, 0, -1):
        state, z = _splitmix64(state)
        j = z % (i + 1)
        items[i], items[j] = items[j], items[i]


# -- scene views ----------------------------------------------------------------------


@dataclass(eq=False)
class SceneSource:
    """Shared per-log context for its scenes: indices only, no open handle."""

    log_ref: Path
    split: str
    log_id: str
    cache: LogCache
    sync: SyncTable
    map_ref: str | None

    def handle(self) -> LogHandle:
        return self.cache.get(self.log_ref)


@dataclass(eq=False)
class SceneView:
    """A window of sync-table frames; iteration 0 is the current frame.

    Valid iterations run from ``-history_frames`` through ``future_frames``.
    All accessors fetch rows lazily through the source's cache; a null sync
    cell is reported as absence (None or an empty group), never an error.
    """

    source: SceneSource
    start_frame: int
    history_frames: int
    future_frames: int

    @property
    def log_ref(self) -> Path:
        return self.source.log_ref

    @property
    def log_id(self) -> str:
        return self.source.log_id

    @property
    def split(self) -> str:
        return self.source.split

    @property
    def num_frames(self) -> int:
        return self.history_frames + 1 + self.future_frames

    @property
    def token(self) -> str:
        return f"{self.split}/{self.log_id}#{self.start_frame}"

    def iterations(self) -> range:
        return range(-self.history_frames, self.future_frames + 1)

    def frame_for(self, iteration: int) -> int:
        if not -self.history_frames <= iteration <= self.future_frames:
            raise IterationOutOfRange(
                f"iteration {iteration} outside [{-self.history_frames}, {self.future_frames}]"
            )
        return self.start_frame + self.history_frames + iteration

    def timestamp_at_iteration(self, iteration: int) -> int:
        return int(self.source.sync.frame_timestamps[self.frame_for(iteration)])

    @property
    def frame_timestamps(self) -> np.ndarray:
        ts = self.source.sync.frame_timestamps[self.start_frame : self.start_frame + self.num_frames]
        out = ts.copy()
        out.flags.writeable = False
        return out

    # -- sync-table access ------------------------------------------------

    def _sync_index(self, modality: str, iteration: int) -> int | None:
        return self.source.sync.index(modality, self.frame_for(iteration))

    def _record_at(self, modality: str, iteration: int):
        idx = self._sync_index(modality, iteration)
        if idx is None:
            return None
        return self.source.handle().record(modality, idx)

    def _group_at(self, modality: str, iteration: int) -> list:
        """All records in the annotation instant the synced row belongs to.

        Concurrent annotations are stored microsecond-staggered (timestamps
        are strictly increasing per stream); rows whose consecutive gaps stay
        below GROUP_GAP_US re-form one group.
        """
        idx = self._sync_index(modality, iteration)
        if idx is None:
            return []
        handle = self.source.handle()
        ts = handle.timestamps(modality)
        lo = idx
        while lo > 0 and ts[lo] - ts[lo - 1] <= GROUP_GAP_US:
            lo -= 1
        hi = idx
        while hi + 1 < len(ts) and ts[hi + 1] - ts[hi] <= GROUP_GAP_US:
            hi += 1
        return [handle.record(modality, i) for i in range(lo, hi + 1)]

    def get_ego_state_at_iteration(self, iteration: int = 0) -> EgoStateRecord | None:
        return self._record_at(EGO_STATE, iteration)

    def get_boxes_at_iteration(self, iteration: int = 0) -> list[BoxRecord]:
        return self._group_at(BOXES, iteration)

    def get_traffic_lights_at_iteration(self, iteration: int = 0) -> list[TrafficLightRecord]:
        return self._group_at(TRAFFIC_LIGHTS, iteration)

    def get_camera_at_iteration(self, camera_id: str, iteration: int = 0) -> CameraFrameRecord | None:
        return self._record_at(self._sensor(camera_modality(camera_id)), iteration)

    def get_lidar_at_iteration(self, lidar_id: str, iteration: int = 0) -> LidarSweepRecord | None:
        return self._record_at(self._sensor(lidar_modality(lidar_id)), iteration)

    def get_lidar_points_at_iteration(self, lidar_id: str, iteration: int = 0) -> np.ndarray | None:
        record = self.get_lidar_at_iteration(lidar_id, iteration)
        if record is None:
            return None
        return self.source.handle().decode_points(record.payload)

    def _sensor(self, modality: str) -> str:
        if modality not in self.source.sync.columns:
            raise UnknownSensorId(f"log {self.log_id!r} has no {modality!r} stream")
        return modality

    # -- native-rate access (bypasses the sync table) -----------------------

    def get_camera_at_timestamp(
        self, camera_id: str, timestamp: int, criteria: MatchCriteria = MatchCriteria()
    ) -> CameraFrameRecord | None:
        """Match against the camera's own event grid; None when nothing fits."""
        modality = camera_modality(camera_id)
        handle = self.source.handle()
        if not handle.has_modality(modality):
            raise UnknownSensorId(f"log {self.log_id!r} has no camera {camera_id!r}")
        idx = match_timestamp(handle.timestamps(modality), timestamp, criteria)
        if idx is None:
            return None
        return handle.record(modality, idx)

    def get_records_in_window(self, modality: str, t0: int, t1: int) -> list:
        """Every record with t0 <= timestamp < t1, in stream order."""
        handle = self.source.handle()
        if not handle.has_modality(modality):
            raise MissingModality(f"log {self.log_id!r} has no {modality!r} stream")
        lo, hi = window_indices(handle.timestamps(modality), t0, t1)
        return [handle.record(modality, i) for i in range(lo, hi)]

    # -- map ------------------------------------------------------------------

    def get_map_api(self) -> MapStore:
        """The log's map, shared across every scene resolving the same path."""
        if self.source.map_ref is None:
            raise MapUnavailable(f"log {self.log_id!r} has no map reference")
        ref = Path(self.source.map_ref)
        path = ref if ref.is_absolute() else self.source.log_ref / ref
        return load_map_cached(path)


# -- enumeration -----------------------------------------------------------------------


def iter_log_dirs(data_root: Path, split_names=None) -> list[tuple[str, str, Path]]:
    """(split, log_id, path) for every log directory, sorted."""
    data_root = Path(data_root)
    if not data_root.is_dir():
        raise UnknownSplit(f"data root does not exist: {data_root}")
    available = sorted(p.name for p in data_root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if split_names is None:
        chosen = available
    else:
        missing = [s for s in split_names if s not in available]
        if missing:
            raise UnknownSplit(f"splits {missing} not in data root (available: {available})")
        chosen = [s for s in available if s in set(split_names)]
    out = []
    for split in chosen:
        for log_dir in sorted((data_root / split).iterdir()):
            if log_dir.is_dir() and not log_dir.name.startswith("."):
                out.append((split, log_dir.name, log_dir))
    return out


def _sync_for(handle: LogHandle, config: SyncConfig, persist: bool) -> SyncTable:
    name = config.default_name()
    if name in handle.sync_names():
        return read_sync_table(handle, name)
    table = build_sync_table(handle, config)
    if persist:
        write_sync_table(handle.directory, table, handle.metadata)
    return table


def _admissible_starts(table: SyncTable, scene_filter: SceneFilter) -> list[int]:
    length = scene_filter.scene_length
    stride = scene_filter.stride or length
    n = table.num_frames
    starts = list(range(0, n - length + 1, stride))
    if not scene_filter.required_modalities or not starts:
        return starts
    ok = np.ones(len(starts), dtype=bool)
    for modality in sorted(scene_filter.required_modalities):
        column = table.columns.get(modality)
        if column is None:
            return []
        absent = np.concatenate([[0], np.cumsum(column == ABSENT)])
        for i, start in enumerate(starts):
            if absent[start + length] - absent[start] > 0:
                ok[i] = False
    return [s for s, keep in zip(starts, ok) if keep]


def get_filtered_scenes(
    scene_filter: SceneFilter,
    data_root: Path,
    cache: LogCache | None = None,
    persist_sync: bool = False,
) -> list[SceneView]:
    """Enumerate scenes across a data root of converted logs grouped by split.

    Per log, a sync table at the filter's period is loaded if persisted or
    built in memory (index reads only — no row data). Scenes missing any
    required modality at any frame are dropped. Order is deterministic
    (split, log_id, start) and optionally shuffled by the filter's seed.
    """
    if cache is None:  # explicit: an empty LogCache is falsy via __len__
        cache = GLOBAL_CACHE
    scenes: list[SceneView] = []
    for split, log_id, log_dir in iter_log_dirs(data_root, scene_filter.split_names):
        handle = cache.get(log_dir)
        reference = EGO_STATE if handle.has_modality(EGO_STATE) else handle.modalities()[0]
        config = SyncConfig(
            reference=reference, resample_period=scene_filter.target_iteration_period
        )
        table = _sync_for(handle, config, persist_sync)
        source = SceneSource(
            log_ref=log_dir,
            split=split,
            log_id=log_id,
            cache=cache,
            sync=table,
            map_ref=handle.metadata.map_ref,
        )
        for start in _admissible_starts(table, scene_filter):
            scenes.append(
                SceneView(
                    source=source,
                    start_frame=start,
                    history_frames=scene_filter.history_frames,
                    future_frames=scene_filter.future_frames,
                )
            )
        del handle  # the cache owns it; scenes re-fetch on access
    if scene_filter.shuffle:
        deterministic_shuffle(scenes, scene_filter.seed)
    return scenes

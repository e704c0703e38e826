"""Timestamp matching across event streams and sync-table construction.

A sync table maps a shared frame timeline to one optional row index per
modality. Frames are either the reference stream's own event times
(source keyframes) or a fixed-period grid anchored at the reference
stream's first timestamp. All matching is exact integer arithmetic on
microsecond timestamps.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pyarrow as pa

from .errors import EmptyReferenceStream, IoFailure, MissingModality
from .logio import LogHandle, write_ipc_file
from .records import SYNC_CONFIG_KEY, STREAM_SUFFIX, SYNC_PREFIX, LogMetadata, timestamp_column

ABSENT = -1  # in-memory sentinel; persisted as null


class MatchMode(str, enum.Enum):
    EXACT = "exact"
    NEAREST = "nearest"
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class MatchCriteria:
    mode: MatchMode = MatchMode.NEAREST
    tolerance: int | None = None  # µs; None means unlimited

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", MatchMode(self.mode))
        if self.tolerance is not None and self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")


def match_timestamps(
    stream_timestamps: np.ndarray, queries: np.ndarray, criteria: MatchCriteria
) -> np.ndarray:
    """Vectorized match of queries against a sorted stream.

    Returns int64 indices, ABSENT where no event satisfies the criteria.
    exact: equal timestamp. backward: greatest t <= query. forward: least
    t >= query. nearest: minimal |t - query|, ties to the earlier event.
    A tolerance bounds |t - query| in every mode.
    """
    ts = np.asarray(stream_timestamps, dtype=np.int64)
    q = np.asarray(queries, dtype=np.int64)
    out = np.full(q.shape, ABSENT, dtype=np.int64)
    if len(ts) == 0:
        return out

    mode = criteria.mode
    right = np.searchsorted(ts, q, side="right")  # count of events with t <= query
    left_idx = right - 1  # candidate for backward
    fwd_idx = np.searchsorted(ts, q, side="left")  # candidate for forward

    if mode is MatchMode.EXACT:
        has = (fwd_idx < len(ts)) & (ts[np.minimum(fwd_idx, len(ts) - 1)] == q)
        out[has] = fwd_idx[has]
    elif mode is MatchMode.BACKWARD:
        has = left_idx >= 0
        out[has] = left_idx[has]
    elif mode is MatchMode.FORWARD:
        has = fwd_idx < len(ts)
        out[has] = fwd_idx[has]
    else:  # nearest, tie -> earlier
        lo = np.clip(left_idx, 0, len(ts) - 1)
        hi = np.clip(fwd_idx, 0, len(ts) - 1)
        d_lo = np.abs(q - ts[lo])
        d_hi = np.abs(ts[hi] - q)
        pick_lo = (left_idx >= 0) & ((fwd_idx >= len(ts)) | (d_lo <= d_hi))
        chosen = np.where(pick_lo, lo, hi)
        has = (left_idx >= 0) | (fwd_idx < len(ts))
        out[has] = chosen[has]

    if criteria.tolerance is not None:
        hit = out != ABSENT
        idx = np.clip(out, 0, len(ts) - 1)
        too_far = np.abs(ts[idx] - q) > criteria.tolerance
        out[hit & too_far] = ABSENT
    return out


def match_timestamp(
    stream_timestamps: np.ndarray, query: int, criteria: MatchCriteria
) -> int | None:
    """Match a single query; absence is a value (None), never an error."""
    out = match_timestamps(stream_timestamps, np.array([query], dtype=np.int64), criteria)
    return None if out[0] == ABSENT else int(out[0])


def window_indices(stream_timestamps: np.ndarray, t0: int, t1: int) -> tuple[int, int]:
    """Half-open contiguous row range with t0 <= t < t1."""
    if t1 < t0:
        raise ValueError("window requires t0 <= t1")
    ts = np.asarray(stream_timestamps, dtype=np.int64)
    lo = int(np.searchsorted(ts, t0, side="left"))
    hi = int(np.searchsorted(ts, t1, side="left"))
    return lo, hi


@dataclass(frozen=True)
class SyncConfig:
    """How to build one sync table.

    ``resample_period`` of None keeps the reference stream's own keyframes;
    otherwise frames form the grid t_k = t_first + k * period covering the
    reference span. Per-modality criteria override the default policy:
    nearest within one period when resampling, nearest unlimited otherwise.
    """

    reference: str
    resample_period: int | None = None  # µs
    criteria: Mapping[str, MatchCriteria] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.resample_period is not None and self.resample_period <= 0:
            raise ValueError("resample_period must be > 0")
        object.__setattr__(self, "criteria", dict(self.criteria))

    def criteria_for(self, modality: str) -> MatchCriteria:
        if modality in self.criteria:
            return self.criteria[modality]
        return MatchCriteria(mode=MatchMode.NEAREST, tolerance=self.resample_period)

    def default_name(self) -> str:
        if self.resample_period is None:
            return f"keyframes_{self.reference}"
        return f"{self.resample_period}us_{self.reference}"

    def to_json(self) -> str:
        return json.dumps(
            {
                "reference": self.reference,
                "resample_period": self.resample_period,
                "criteria": {
                    m: {"mode": c.mode.value, "tolerance": c.tolerance}
                    for m, c in sorted(self.criteria.items())
                },
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "SyncConfig":
        obj = json.loads(text)
        return cls(
            reference=obj["reference"],
            resample_period=obj["resample_period"],
            criteria={
                m: MatchCriteria(mode=MatchMode(c["mode"]), tolerance=c["tolerance"])
                for m, c in obj.get("criteria", {}).items()
            },
        )


@dataclass
class SyncTable:
    """Frame timeline plus one optional-row-index column per modality."""

    frame_timestamps: np.ndarray  # int64, sorted
    columns: dict[str, np.ndarray]  # modality -> int64 row indices, ABSENT where empty
    config: SyncConfig

    @property
    def num_frames(self) -> int:
        return len(self.frame_timestamps)

    def index(self, modality: str, frame: int) -> int | None:
        try:
            column = self.columns[modality]
        except KeyError:
            raise MissingModality(f"sync table has no column for {modality!r}") from None
        value = int(column[frame])
        return None if value == ABSENT else value

    def to_arrow(self) -> pa.Table:
        arrays: dict[str, pa.Array] = {
            "frame_timestamp": pa.array(self.frame_timestamps, type=pa.int64())
        }
        for modality in sorted(self.columns):
            col = self.columns[modality]
            arrays[modality] = pa.array(
                [None if v == ABSENT else int(v) for v in col], type=pa.int64()
            )
        return pa.table(arrays)

    @classmethod
    def from_arrow(cls, table: pa.Table, config: SyncConfig) -> "SyncTable":
        frames = table.column("frame_timestamp").to_numpy()
        columns: dict[str, np.ndarray] = {}
        for name in table.column_names:
            if name == "frame_timestamp":
                continue
            col = table.column(name).to_pylist()
            columns[name] = np.array([ABSENT if v is None else v for v in col], dtype=np.int64)
        return cls(frame_timestamps=frames.astype(np.int64), columns=columns, config=config)


def resample_grid(t_first: int, t_last: int, period: int) -> np.ndarray:
    """Frame grid t_k = t_first + k*period, k = 0..floor((t_last-t_first)/period)."""
    count = (int(t_last) - int(t_first)) // int(period) + 1
    return np.int64(t_first) + np.arange(count, dtype=np.int64) * np.int64(period)


def build_sync_table(log: LogHandle, config: SyncConfig) -> SyncTable:
    """Build a sync table over every modality stream of the log."""
    if not log.has_modality(config.reference):
        raise MissingModality(f"reference modality {config.reference!r} not in log")
    ref_ts = log.timestamps(config.reference)
    if len(ref_ts) == 0:
        raise EmptyReferenceStream(f"reference stream {config.reference!r} has no events")

    if config.resample_period is None:
        frames = ref_ts.astype(np.int64)
    else:
        frames = resample_grid(int(ref_ts[0]), int(ref_ts[-1]), config.resample_period)

    columns: dict[str, np.ndarray] = {}
    for modality in log.modalities():
        ts = log.timestamps(modality)
        columns[modality] = match_timestamps(ts, frames, config.criteria_for(modality))
    return SyncTable(frame_timestamps=frames, columns=columns, config=config)


def write_sync_table(log_dir: Path, table: SyncTable, metadata: LogMetadata, name: str | None = None) -> Path:
    """Persist a sync table as ``sync_<name>.arrow`` beside the streams."""
    name = name or table.config.default_name()
    path = Path(log_dir) / f"{SYNC_PREFIX}{name}{STREAM_SUFFIX}"
    write_ipc_file(
        path,
        table.to_arrow(),
        {SYNC_CONFIG_KEY: table.config.to_json()},
        metadata=metadata,
    )
    return path


def read_sync_table(log: LogHandle, name: str) -> SyncTable:
    """Load a persisted sync table; bit-identical to what was written."""
    raw = log.sync_table_raw(name)
    raw_meta = (raw.schema.metadata or {}).get(SYNC_CONFIG_KEY)
    if raw_meta is None:
        raise IoFailure(f"sync table {name!r} lacks a stored config")
    config = SyncConfig.from_json(raw_meta.decode())
    return SyncTable.from_arrow(raw, config)

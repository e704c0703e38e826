"""Label taxonomy mapping and annotation statistics.

Raw source labels stay verbatim in box records; mapping into the five
shared categories happens here, deferred to analysis time. The statistics
pipeline streams box tracks and derives, per sample, the planar distance to
the time-matched ego pose plus speed and acceleration from positional
finite differences (velocity fields are deliberately ignored so datasets
with and without them remain comparable). Speed is the planar magnitude of
the differenced position; acceleration is the planar magnitude of the
differenced velocity vector, which keeps centripetal motion visible.
"""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyTrack, UnmappedLabel
from .records import BOXES, EGO_STATE, BoxRecord, EgoStateRecord


class Category(str, enum.Enum):
    VEHICLE = "vehicle"
    PERSON = "person"
    TWO_WHEELER = "two_wheeler"
    OBSTACLE = "obstacle"
    OTHER = "other"


class UnmappedPolicy(str, enum.Enum):
    ERROR = "error"
    OTHER = "other"


@dataclass(frozen=True)
class TaxonomyMap:
    """raw label -> category table with a policy for labels not listed."""

    name: str
    entries: Mapping[str, Category]
    policy: UnmappedPolicy = UnmappedPolicy.OTHER

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "entries", {k: Category(v) for k, v in dict(self.entries).items()}
        )
        object.__setattr__(self, "policy", UnmappedPolicy(self.policy))


DEFAULT_TAXONOMY = TaxonomyMap(
    name="default",
    entries={
        "car": Category.VEHICLE,
        "bus": Category.VEHICLE,
        "truck": Category.VEHICLE,
        "van": Category.VEHICLE,
        "trailer": Category.VEHICLE,
        "emergency_vehicle": Category.VEHICLE,
        "pedestrian": Category.PERSON,
        "person": Category.PERSON,
        "rider": Category.PERSON,
        "bicycle": Category.TWO_WHEELER,
        "motorcycle": Category.TWO_WHEELER,
        "scooter": Category.TWO_WHEELER,
        "traffic_cone": Category.OBSTACLE,
        "barrier": Category.OBSTACLE,
        "sign": Category.OBSTACLE,
        "construction": Category.OBSTACLE,
        "train": Category.OTHER,
        "animal": Category.OTHER,
    },
)


def map_label(raw: str, taxonomy: TaxonomyMap = DEFAULT_TAXONOMY) -> Category:
    category = taxonomy.entries.get(raw)
    if category is not None:
        return category
    if taxonomy.policy is UnmappedPolicy.ERROR:
        raise UnmappedLabel(f"label {raw!r} not in taxonomy {taxonomy.name!r}")
    return Category.OTHER


# -- per-track kinematics --------------------------------------------------------


@dataclass
class TrackKinematics:
    """Per-sample statistics for one track.

    ``ego_distance`` has one entry per record; ``speed`` and ``acceleration``
    are empty for single-record tracks (differencing needs two samples) and
    full-length otherwise.
    """

    track_id: str
    timestamps: np.ndarray
    ego_distance: np.ndarray
    speed: np.ndarray
    acceleration: np.ndarray


def _difference(values: np.ndarray, t_s: np.ndarray) -> np.ndarray:
    """d(values)/dt over irregular timestamps: central inside, one-sided at ends."""
    n = len(values)
    if n < 2:
        return values[:0].astype(np.float64)
    out = np.empty_like(values, dtype=np.float64)
    out[0] = (values[1] - values[0]) / (t_s[1] - t_s[0])
    out[-1] = (values[-1] - values[-2]) / (t_s[-1] - t_s[-2])
    if n > 2:
        span = t_s[2:] - t_s[:-2]
        if values.ndim == 2:
            span = span[:, None]
        out[1:-1] = (values[2:] - values[:-2]) / span
    return out


def _kinematics_arrays(
    track_id: str,
    ts: np.ndarray,
    xy: np.ndarray,
    ego_ts: np.ndarray,
    ego_xy: np.ndarray,
) -> TrackKinematics:
    ts = np.asarray(ts, dtype=np.int64)
    xy = np.asarray(xy, dtype=np.float64)
    if len(ts) == 0:
        raise EmptyTrack(f"track {track_id!r} has no records")

    if len(ego_ts) == 0:
        distance = np.full(len(ts), np.nan)
    else:
        # nearest ego event per sample, ties to the earlier one
        right = np.searchsorted(ego_ts, ts, side="right")
        lo = np.clip(right - 1, 0, len(ego_ts) - 1)
        hi = np.clip(right, 0, len(ego_ts) - 1)
        d_lo = np.abs(ts - ego_ts[lo])
        d_hi = np.abs(ego_ts[hi] - ts)
        nearest = np.where(d_lo <= d_hi, lo, hi)
        distance = np.hypot(
            xy[:, 0] - ego_xy[nearest, 0], xy[:, 1] - ego_xy[nearest, 1]
        )

    if len(ts) < 2:
        empty = np.empty(0, dtype=np.float64)
        return TrackKinematics(track_id, ts, distance, empty, empty)

    t_s = (ts - ts[0]).astype(np.float64) / 1e6
    velocity = _difference(xy, t_s)
    speed = np.hypot(velocity[:, 0], velocity[:, 1])
    accel_vec = _difference(velocity, t_s)
    acceleration = np.hypot(accel_vec[:, 0], accel_vec[:, 1])
    return TrackKinematics(track_id, ts, distance, speed, acceleration)


def track_kinematics(
    boxes: Sequence[BoxRecord], ego: Sequence[EgoStateRecord]
) -> TrackKinematics:
    """Kinematics of one time-sorted track against the log's ego stream."""
    if not boxes:
        raise EmptyTrack("track has no records")
    ts = np.array([b.timestamp for b in boxes], dtype=np.int64)
    xy = np.array([[b.pose.translation[0], b.pose.translation[1]] for b in boxes])
    ego_ts = np.array([e.timestamp for e in ego], dtype=np.int64)
    ego_xy = np.array([[e.pose.translation[0], e.pose.translation[1]] for e in ego]).reshape(-1, 2)
    return _kinematics_arrays(boxes[0].track_id, ts, xy, ego_ts, ego_xy)


# -- histograms -------------------------------------------------------------------

QUANTITIES = ("ego_distance", "speed", "acceleration")


@dataclass(frozen=True)
class BinsConfig:
    """Bin edges per quantity: (low, high, width)."""

    ego_distance: tuple[float, float, float] = (0.0, 200.0, 4.0)
    speed: tuple[float, float, float] = (0.0, 40.0, 0.5)
    acceleration: tuple[float, float, float] = (-10.0, 10.0, 0.25)

    def edges(self, quantity: str) -> np.ndarray:
        low, high, width = getattr(self, quantity)
        return np.arange(low, high + width / 2, width)


@dataclass
class Histogram:
    """Counts per bin; out-of-range samples are clipped into the end bins."""

    edges: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls, edges: np.ndarray) -> "Histogram":
        return cls(edges=edges, counts=np.zeros(len(edges) - 1, dtype=np.int64))

    def add(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        values = values[np.isfinite(values)]
        if len(values) == 0:
            return
        idx = np.digitize(values, self.edges) - 1
        idx = np.clip(idx, 0, len(self.counts) - 1)
        np.add.at(self.counts, idx, 1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def frequency(self) -> np.ndarray:
        total = self.total
        return self.counts / total if total else self.counts.astype(np.float64)

    def normalized(self) -> np.ndarray:
        """Max bin scaled to 1, the form used for log-scale display."""
        peak = self.counts.max() if len(self.counts) else 0
        return self.counts / peak if peak else self.counts.astype(np.float64)

    def tail_mass(self, threshold: float, side: str = "above") -> float:
        """Fraction of samples in bins entirely beyond the threshold."""
        centers = (self.edges[:-1] + self.edges[1:]) / 2
        mask = centers > threshold if side == "above" else centers < threshold
        total = self.total
        return float(self.counts[mask].sum() / total) if total else 0.0

    def percentile(self, q: float) -> float:
        """Approximate percentile from binned counts (right-edge convention)."""
        total = self.total
        if total == 0:
            return float("nan")
        cum = np.cumsum(self.counts)
        i = int(np.searchsorted(cum, q / 100.0 * total))
        i = min(i, len(self.counts) - 1)
        return float(self.edges[i + 1])


@dataclass
class HistogramSet:
    """(dataset, category, quantity) -> Histogram, plus processing totals."""

    bins: BinsConfig = field(default_factory=BinsConfig)
    histograms: dict[tuple[str, str, str], Histogram] = field(default_factory=dict)
    samples_processed: dict[str, int] = field(default_factory=lambda: {q: 0 for q in QUANTITIES})

    def _get(self, dataset: str, category: Category, quantity: str) -> Histogram:
        key = (dataset, category.value, quantity)
        if key not in self.histograms:
            self.histograms[key] = Histogram.empty(self.bins.edges(quantity))
        return self.histograms[key]

    def add_track(self, dataset: str, category: Category, kin: TrackKinematics) -> None:
        for quantity, values in (
            ("ego_distance", kin.ego_distance),
            ("speed", kin.speed),
            ("acceleration", kin.acceleration),
        ):
            finite = np.asarray(values)[np.isfinite(values)]
            self._get(dataset, category, quantity).add(finite)
            self.samples_processed[quantity] += len(finite)

    def merge(self, other: "HistogramSet") -> None:
        for key, hist in other.histograms.items():
            mine = self.histograms.get(key)
            if mine is None:
                self.histograms[key] = Histogram(hist.edges.copy(), hist.counts.copy())
            else:
                mine.counts += hist.counts
        for q, n in other.samples_processed.items():
            self.samples_processed[q] += n


def _tracks_of_log(handle) -> Iterable[tuple[str, str, np.ndarray, np.ndarray]]:
    """(track_id, raw_label, timestamps, xy) per track, from bulk columns."""
    table = handle.table(BOXES)
    ts = table.column("timestamp").to_numpy()
    tx = table.column("tx").to_numpy()
    ty = table.column("ty").to_numpy()
    track_ids = np.asarray(table.column("track_id").to_pylist(), dtype=object)
    labels = table.column("raw_label").to_pylist()
    order = np.lexsort((ts, track_ids))
    ts, tx, ty = ts[order], tx[order], ty[order]
    track_ids = track_ids[order]
    labels = [labels[i] for i in order]
    boundaries = np.flatnonzero(track_ids[1:] != track_ids[:-1]) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(ts)]])
    for s, e in zip(starts, ends):
        yield str(track_ids[s]), labels[s], ts[s:e], np.column_stack([tx[s:e], ty[s:e]])


def build_histograms(
    log_dirs: Sequence[Path],
    taxonomy: TaxonomyMap = DEFAULT_TAXONOMY,
    bins: BinsConfig | None = None,
) -> HistogramSet:
    """Aggregate per dataset x category x quantity over converted logs."""
    from .logio import open_log

    out = HistogramSet(bins=bins or BinsConfig())
    for log_dir in log_dirs:
        with open_log(log_dir) as handle:
            if not handle.has_modality(BOXES):
                continue
            dataset = handle.metadata.dataset
            if handle.has_modality(EGO_STATE):
                ego = handle.table(EGO_STATE)
                ego_ts = ego.column("timestamp").to_numpy()
                ego_xy = np.column_stack(
                    [ego.column("tx").to_numpy(), ego.column("ty").to_numpy()]
                )
            else:
                ego_ts = np.empty(0, dtype=np.int64)
                ego_xy = np.empty((0, 2))
            for track_id, raw_label, ts, xy in _tracks_of_log(handle):
                category = map_label(raw_label, taxonomy)
                kin = _kinematics_arrays(track_id, ts, xy, ego_ts, ego_xy)
                out.add_track(dataset, category, kin)
    return out


# -- exports ----------------------------------------------------------------------


def export_csv(histogram_set: HistogramSet, path: Path) -> Path:
    """One row per bin: dataset, category, quantity, edges, count, frequencies."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["dataset", "category", "quantity", "bin_left", "bin_right", "count", "frequency", "normalized"]
        )
        for key in sorted(histogram_set.histograms):
            hist = histogram_set.histograms[key]
            freq = hist.frequency()
            norm = hist.normalized()
            for i in range(len(hist.counts)):
                writer.writerow(
                    [
                        *key,
                        f"{hist.edges[i]:.6g}",
                        f"{hist.edges[i + 1]:.6g}",
                        int(hist.counts[i]),
                        f"{freq[i]:.9g}",
                        f"{norm[i]:.9g}",
                    ]
                )
    return path


def summary_json(histogram_set: HistogramSet) -> str:
    """Per-key counts and coarse percentiles, as stable JSON."""
    obj = {}
    for key in sorted(histogram_set.histograms):
        hist = histogram_set.histograms[key]
        obj["/".join(key)] = {
            "samples": hist.total,
            "p10": hist.percentile(10),
            "p50": hist.percentile(50),
            "p90": hist.percentile(90),
        }
    return json.dumps(
        {"histograms": obj, "samples_processed": histogram_set.samples_processed},
        sort_keys=True,
        indent=2,
    )

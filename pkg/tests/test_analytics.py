"""Taxonomy mapping, finite-difference kinematics and histogram statistics."""

import csv
import json

import numpy as np
import pytest

from d123 import analytics, logio
from d123.analytics import (
    BinsConfig,
    Category,
    Histogram,
    HistogramSet,
    TaxonomyMap,
    UnmappedPolicy,
    build_histograms,
    export_csv,
    map_label,
    summary_json,
    track_kinematics,
)
from d123.errors import EmptyTrack, UnmappedLabel
from d123.geometry import SE3
from d123.records import BOXES, BoxRecord, EgoStateRecord

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def box(t, x, y, track_id="t0", label="car"):
    return BoxRecord(
        timestamp=int(t),
        track_id=track_id,
        raw_label=label,
        pose=SE3(np.array([x, y, 0.0]), IDENTITY_Q),
        extent=(4.0, 2.0, 1.5),
        velocity=None,
    )


def ego(t, x, y):
    return EgoStateRecord(
        timestamp=int(t),
        pose=SE3(np.array([x, y, 0.0]), IDENTITY_Q),
        velocity_body=(0.0, 0.0, 0.0),
        acceleration_body=(0.0, 0.0, 0.0),
        angular_velocity_z=0.0,
    )


# -- taxonomy -----------------------------------------------------------------------


def test_default_taxonomy_mapping():
    assert map_label("car") is Category.VEHICLE
    assert map_label("pedestrian") is Category.PERSON
    assert map_label("bicycle") is Category.TWO_WHEELER
    assert map_label("traffic_cone") is Category.OBSTACLE
    assert map_label("animal") is Category.OTHER


def test_unmapped_label_policies():
    assert map_label("zeppelin") is Category.OTHER
    strict = TaxonomyMap(name="strict", entries={"car": "vehicle"}, policy="error")
    assert strict.policy is UnmappedPolicy.ERROR
    assert map_label("car", strict) is Category.VEHICLE
    with pytest.raises(UnmappedLabel):
        map_label("zeppelin", strict)


def test_taxonomy_entries_coerce_to_categories():
    tax = TaxonomyMap(name="x", entries={"tram": "other", "lorry": "vehicle"})
    assert tax.entries["tram"] is Category.OTHER
    assert tax.entries["lorry"] is Category.VEHICLE
    with pytest.raises(ValueError):
        TaxonomyMap(name="x", entries={"tram": "spaceship"})


# -- kinematics closed forms -------------------------------------------------------


def test_linear_motion_recovers_speed_exactly():
    # constant velocity: any difference scheme lands on the true value
    v = np.array([3.0, -4.0])  # planar speed 5
    rng = np.random.default_rng(2)
    ts = np.cumsum(rng.integers(40_000, 160_000, 60)).astype(np.int64)
    t_s = (ts - ts[0]) / 1e6
    boxes = [box(t, 1.0 + v[0] * dt, -2.0 + v[1] * dt) for t, dt in zip(ts, t_s)]
    kin = track_kinematics(boxes, [])
    assert np.all(np.abs(kin.speed - 5.0) <= 1e-6)
    assert np.all(np.abs(kin.acceleration) <= 1e-6)
    assert np.all(np.isnan(kin.ego_distance))  # no ego stream


def test_circular_motion_recovers_centripetal_acceleration():
    radius, omega, hz = 20.0, 0.5, 10.0
    ts = (np.arange(200) * round(1e6 / hz)).astype(np.int64)
    t_s = ts / 1e6
    boxes = [
        box(t, radius * np.cos(omega * dt), radius * np.sin(omega * dt))
        for t, dt in zip(ts, t_s)
    ]
    kin = track_kinematics(boxes, [])
    true_speed = radius * omega
    true_accel = radius * omega**2
    assert np.all(np.abs(kin.speed - true_speed) <= 0.05)
    # one-sided ends are noisier; the centripetal bound holds in the interior
    assert np.all(np.abs(kin.acceleration[2:-2] - true_accel) <= 0.05)


def test_ego_distance_uses_nearest_sample():
    ego_stream = [ego(k * 100_000, float(k), 0.0) for k in range(10)]
    # straddles ego samples: 130ms is nearest to 100ms, 250ms ties -> earlier
    boxes = [box(130_000, 10.0, 0.0), box(250_000, 10.0, 0.0), box(910_000, 10.0, 3.0)]
    kin = track_kinematics(boxes, ego_stream)
    assert kin.ego_distance[0] == pytest.approx(abs(10.0 - 1.0))
    assert kin.ego_distance[1] == pytest.approx(abs(10.0 - 2.0))  # tie at 250ms
    assert kin.ego_distance[2] == pytest.approx(np.hypot(10.0 - 9.0, 3.0))


def test_single_sample_track_keeps_distance_only():
    kin = track_kinematics([box(5, 3.0, 4.0)], [ego(0, 0.0, 0.0)])
    assert kin.ego_distance.shape == (1,)
    assert kin.ego_distance[0] == pytest.approx(5.0)
    assert kin.speed.size == 0 and kin.acceleration.size == 0


def test_empty_track_raises():
    with pytest.raises(EmptyTrack):
        track_kinematics([], [])


# -- histograms ----------------------------------------------------------------------


def test_histogram_counts_and_clipping():
    h = Histogram.empty(np.arange(0.0, 10.5, 1.0))
    h.add(np.array([0.5, 1.5, 1.7, 9.5, -3.0, 42.0, np.nan, np.inf]))
    assert h.total == 6  # non-finite samples dropped
    assert h.counts[0] == 2  # 0.5 plus the clipped -3
    assert h.counts[1] == 2
    assert h.counts[-1] == 2  # 9.5 plus the clipped 42
    assert h.frequency().sum() == pytest.approx(1.0)
    assert h.normalized().max() == pytest.approx(1.0)


def test_histogram_empty_behavior():
    h = Histogram.empty(np.arange(0.0, 5.0, 1.0))
    assert h.total == 0
    assert np.all(h.frequency() == 0)
    assert h.tail_mass(2.0) == 0.0
    assert np.isnan(h.percentile(50))


def test_tail_mass_matches_direct_count():
    edges = np.arange(-10.0, 10.25, 0.25)
    h = Histogram.empty(edges)
    rng = np.random.default_rng(4)
    values = rng.normal(0.0, 3.0, 20_000)
    h.add(values)
    centers = (edges[:-1] + edges[1:]) / 2
    want = h.counts[centers > 5.0].sum() / h.total
    assert h.tail_mass(5.0) == pytest.approx(want)
    # binned tail tracks the sample tail to within bin-quantization error
    sample_tail = np.mean(np.clip(values, edges[0], edges[-1] - 1e-9) > 5.0)
    assert abs(h.tail_mass(5.0) - sample_tail) < 0.01


def test_percentiles_bracket_sample_quantiles():
    h = Histogram.empty(np.arange(0.0, 40.5, 0.5))
    rng = np.random.default_rng(5)
    values = rng.uniform(3.0, 33.0, 50_000)
    h.add(values)
    for q in (10, 50, 90):
        exact = np.percentile(values, q)
        assert abs(h.percentile(q) - exact) <= 0.5 + 1e-9


def test_two_mode_distribution_shows_two_peaks():
    h = Histogram.empty(BinsConfig().edges("speed"))
    rng = np.random.default_rng(6)
    h.add(rng.normal(5.0, 0.4, 5_000))
    h.add(rng.normal(25.0, 0.4, 5_000))
    centers = (h.edges[:-1] + h.edges[1:]) / 2
    low = centers < 15.0
    assert abs(centers[low][np.argmax(h.counts[low])] - 5.0) <= 0.5
    assert abs(centers[~low][np.argmax(h.counts[~low])] - 25.0) <= 0.5


def test_histogram_set_accumulates_and_merges():
    a = HistogramSet()
    b = HistogramSet()
    both = HistogramSet()
    ego_stream = [ego(k * 100_000, 0.0, 0.0) for k in range(5)]
    t1 = [box(k * 100_000, 1.0 * k, 0.0, "a", "car") for k in range(5)]
    t2 = [box(k * 100_000, 0.0, 2.0 * k, "b", "pedestrian") for k in range(4)]
    a.add_track("ds", Category.VEHICLE, track_kinematics(t1, ego_stream))
    b.add_track("ds", Category.PERSON, track_kinematics(t2, ego_stream))
    both.add_track("ds", Category.VEHICLE, track_kinematics(t1, ego_stream))
    both.add_track("ds", Category.PERSON, track_kinematics(t2, ego_stream))
    a.merge(b)
    assert sorted(a.histograms) == sorted(both.histograms)
    for key in both.histograms:
        assert np.array_equal(a.histograms[key].counts, both.histograms[key].counts)
    assert a.samples_processed == both.samples_processed
    assert a.samples_processed["ego_distance"] == 9
    assert a.samples_processed["speed"] == 9


def test_noisy_track_fattens_acceleration_tail():
    radius, omega = 15.0, 0.3
    ts = (np.arange(300) * 100_000).astype(np.int64)
    t_s = ts / 1e6
    clean_xy = np.column_stack(
        [radius * np.cos(omega * t_s), radius * np.sin(omega * t_s)]
    )
    rng = np.random.default_rng(9)
    noisy_xy = clean_xy + rng.normal(0.0, 0.1, clean_xy.shape)
    edges = BinsConfig().edges("acceleration")
    clean_h, noisy_h = Histogram.empty(edges), Histogram.empty(edges)
    clean_h.add(track_kinematics([box(t, *p) for t, p in zip(ts, clean_xy)], []).acceleration)
    noisy_h.add(track_kinematics([box(t, *p) for t, p in zip(ts, noisy_xy)], []).acceleration)
    assert noisy_h.tail_mass(5.0) > clean_h.tail_mass(5.0)
    assert clean_h.tail_mass(5.0) == 0.0  # true centripetal accel is 1.35


# -- whole-log aggregation ------------------------------------------------------------


def test_build_histograms_matches_per_record_oracle(small_log):
    got = build_histograms([small_log])
    want = HistogramSet()
    with logio.open_log(small_log) as log:
        dataset = log.metadata.dataset
        ego_records = log.stream("ego_state").records()
        by_track = {}
        for record in log.stream(BOXES).records():
            by_track.setdefault(record.track_id, []).append(record)
        for track_id in by_track:
            track = sorted(by_track[track_id], key=lambda r: r.timestamp)
            category = map_label(track[0].raw_label)
            want.add_track(dataset, category, track_kinematics(track, ego_records))
    assert sorted(got.histograms) == sorted(want.histograms)
    for key in want.histograms:
        assert np.array_equal(got.histograms[key].counts, want.histograms[key].counts), key
    assert got.samples_processed == want.samples_processed


def test_build_histograms_skips_boxless_logs(tmp_path, small_log):
    from d123 import synthetic
    from d123.records import EGO_STATE, EventStream

    world = synthetic.build_world(synthetic.SyntheticScenarioConfig(seed=3, duration_s=1.0, rig="kitti360"))
    bare = tmp_path / "boxless"
    logio.write_log(bare, [EventStream.from_records(EGO_STATE, world.ego, world.metadata)], world.metadata)
    got = build_histograms([small_log, bare, small_log])
    single = build_histograms([small_log])
    for key in single.histograms:
        assert np.array_equal(got.histograms[key].counts, 2 * single.histograms[key].counts)


# -- exports ------------------------------------------------------------------------


def test_csv_export_round_trips_counts(tmp_path, small_log):
    hs = build_histograms([small_log])
    path = export_csv(hs, tmp_path / "stats" / "hist.csv")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == sum(len(h.counts) for h in hs.histograms.values())
    by_key = {}
    for row in rows:
        by_key.setdefault((row["dataset"], row["category"], row["quantity"]), []).append(row)
    for key, key_rows in by_key.items():
        hist = hs.histograms[key]
        assert [int(r["count"]) for r in key_rows] == hist.counts.tolist()
        assert sum(float(r["frequency"]) for r in key_rows) == pytest.approx(1.0)


def test_summary_json_stable_and_complete(small_log):
    hs = build_histograms([small_log])
    text = summary_json(hs)
    assert text == summary_json(hs)
    obj = json.loads(text)
    assert obj["samples_processed"] == hs.samples_processed
    assert len(obj["histograms"]) == len(hs.histograms)
    for key, entry in obj["histograms"].items():
        assert entry["samples"] == hs.histograms[tuple(key.split("/"))].total

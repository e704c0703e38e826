#!/usr/bin/env python3
"""Generate the frontend test corpus and its oracle files.

Builds a small data root with the native library (one external-payload log,
two self-contained ones), then dumps oracles capturing exactly what any
conforming reader must see: per-column values at bit precision, payload
digests, timestamp-match results, sync-table cells, scene enumerations and
splitmix64 vectors. The TypeScript suite replays these without the native
library installed; rerunning this script is byte-stable.
"""
from __future__ import annotations

import hashlib
import json
import shutil
import struct
import sys
import tempfile
from pathlib import Path

import pyarrow as pa
import pyarrow.ipc as ipc

from d123.ingest import convert
from d123.logio import open_log
from d123.scene import SceneFilter, deterministic_shuffle, get_filtered_scenes, LogCache
from d123.sync import (
    MatchCriteria,
    MatchMode,
    SyncConfig,
    build_sync_table,
    match_timestamp,
    write_sync_table,
)
from d123.geometry import SE3, VehicleParameters
from d123.logio import encode_points, write_log
from d123.records import EgoStateRecord, EventStream, LidarSweepRecord, LogMetadata, PayloadRef
from d123.synthetic import SyntheticScenarioConfig, generate_source

import numpy as np

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
DATA_ROOT = FIXTURES / "data_root"
ORACLES = FIXTURES / "oracles"

LOGS = [
    # (split, log_id, rig, seed, duration_s, agents, mode)
    ("train", "log_a", "kitti360", 101, 3.0, 3, "external"),
    ("train", "log_b", "nuscenes", 102, 4.0, 2, "self_contained"),
    ("val", "log_c", "wod_motion", 103, 5.0, 4, "self_contained"),
]

ALL_LOGS = LOGS + [("val", "log_d", None, None, None, None, "self_contained")]


def f64_hex(value: float) -> str:
    return struct.pack("<d", value).hex()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def build_corpus() -> None:
    if DATA_ROOT.exists():
        shutil.rmtree(DATA_ROOT)
    for split, log_id, rig, seed, duration, agents, mode in LOGS:
        cfg = SyntheticScenarioConfig(seed=seed, duration_s=duration, rig=rig, agent_count=agents)
        with tempfile.TemporaryDirectory() as tmp:
            source = generate_source(cfg, Path(tmp) / "src")
            convert(source, DATA_ROOT / split / log_id, mode=mode)
    build_mixed_codec_log(DATA_ROOT / "val" / "log_d")
    # one log also carries a persisted resampled table so the reader's
    # use-persisted-if-present path gets exercised during scene enumeration
    log_a = DATA_ROOT / "train" / "log_a"
    with open_log(log_a) as log:
        config = SyncConfig(reference="ego_state", resample_period=500_000)
        write_sync_table(log_a, build_sync_table(log, config), log.metadata)


def build_mixed_codec_log(out_dir: Path) -> None:
    """A tiny hand-built log whose lidar sweeps alternate raw codecs.

    The synthetic rigs emit raw_f32le only; this keeps the deflate decode
    path in the corpus.
    """
    rng = np.random.default_rng(77)
    metadata = LogMetadata(
        log_id="log_d",
        dataset="fixture",
        vehicle=VehicleParameters(length=4.5, width=1.9, height=1.6, wheelbase=2.8, rear_axle_to_center=1.3),
        lidars={"mixed": SE3.identity()},
    )
    base = 1_650_000_000_000_000
    ego = [
        EgoStateRecord(
            timestamp=base + i * 100_000,
            pose=SE3(translation=(i * 0.9, 0.0, 0.0), rotation=(1.0, 0.0, 0.0, 0.0)),
            velocity_body=(9.0, 0.0, 0.0),
            acceleration_body=(0.0, 0.0, 0.0),
            angular_velocity_z=0.0,
        )
        for i in range(12)
    ]
    sweeps = []
    for i in range(12):
        pts = rng.normal(size=(64, 4)).astype(np.float32)
        codec = "raw_f32le" if i % 2 == 0 else "raw_deflate"
        sweeps.append(
            LidarSweepRecord(
                timestamp_start=base + i * 100_000,
                timestamp_end=base + i * 100_000 + 95_000,
                lidar_id="mixed",
                payload=PayloadRef(codec=codec, inline=encode_points(pts, codec)),
            )
        )
    streams = [
        EventStream.from_records("ego_state", ego, metadata),
        EventStream.from_records("lidar_mixed", sweeps, metadata),
    ]
    write_log(out_dir, streams, metadata, mode="self_contained")


def dump_columns() -> None:
    """Per-file, per-column values straight from the IPC files (no library layers)."""
    meta: dict = {"logs": []}
    columns: dict = {}
    payloads: dict = {}
    for split, log_id, *_ in ALL_LOGS:
        log_dir = DATA_ROOT / split / log_id
        rel = f"{split}/{log_id}"
        entry = {"path": rel, "modalities": [], "sync_names": [], "metadata_json": None}
        col_entry: dict = {}
        pay_entry: dict = {}
        for path in sorted(log_dir.glob("*.arrow")):
            stem = path.name[: -len(".arrow")]
            if stem == "map":
                continue
            table = ipc.open_file(path).read_all()
            if stem.startswith("sync_"):
                entry["sync_names"].append(stem[len("sync_"):])
                continue
            entry["modalities"].append(stem)
            raw_meta = table.schema.metadata[b"d123.metadata"].decode()
            if entry["metadata_json"] is None:
                entry["metadata_json"] = raw_meta
            else:
                assert entry["metadata_json"] == raw_meta, f"{path} metadata drift"
            cols: dict = {"num_rows": table.num_rows, "columns": {}}
            for field in table.schema:
                arr = table.column(field.name)
                if pa.types.is_int64(field.type):
                    values = [None if v is None else str(v) for v in arr.to_pylist()]
                    kind = "i64"
                elif pa.types.is_float64(field.type):
                    values = [None if v is None else f64_hex(v) for v in arr.to_pylist()]
                    kind = "f64"
                elif pa.types.is_string(field.type):
                    values = arr.to_pylist()
                    kind = "str"
                elif pa.types.is_binary(field.type):
                    values = [
                        None if v is None else {"sha256": sha256_hex(v), "len": len(v)}
                        for v in arr.to_pylist()
                    ]
                    kind = "bin"
                else:
                    raise AssertionError(f"unexpected column type {field.type} in {path}")
                cols["columns"][field.name] = {"type": kind, "values": values}
            col_entry[stem] = cols

            if "codec" in table.column_names:
                pay_rows = []
                codecs = table.column("codec").to_pylist()
                inlines = table.column("payload_inline").to_pylist()
                paths = table.column("payload_path").to_pylist()
                for codec, inline, relpath in zip(codecs, inlines, paths):
                    data = inline if inline is not None else (log_dir / relpath).read_bytes()
                    row = {
                        "codec": codec,
                        "inline": inline is not None,
                        "path": relpath,
                        "encoded_sha256": sha256_hex(data),
                        "encoded_len": len(data),
                    }
                    if codec == "raw_f32le":
                        decoded = data
                    elif codec == "raw_deflate":
                        import zlib

                        decoded = zlib.decompress(data)
                    else:
                        decoded = None
                    if decoded is not None:
                        row["decoded_sha256"] = sha256_hex(decoded)
                        row["decoded_len"] = len(decoded)
                        row["point_count"] = len(decoded) // 16
                    pay_rows.append(row)
                pay_entry[stem] = pay_rows
        entry["sync_names"].sort()
        meta["logs"].append(entry)
        columns[rel] = col_entry
        payloads[rel] = pay_entry
    (ORACLES / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    (ORACLES / "columns.json").write_text(json.dumps(columns, sort_keys=True))
    (ORACLES / "payloads.json").write_text(json.dumps(payloads, indent=1, sort_keys=True))


def dump_matching() -> None:
    rng = np.random.default_rng(314159)
    base = 1_700_000_000_000_000
    ts = np.unique(rng.integers(0, 400, 48)) * 12_345 + base
    ts = ts.astype(np.int64)
    cases = []
    queries: list[int] = []
    queries.extend(int(t) for t in ts[:: 5])  # exact hits
    queries.extend(int(t) + d for t in ts[:: 7] for d in (-1, 1, -6172, 6173))
    queries.extend([int(ts[0]) - 99_999, int(ts[-1]) + 99_999, base - 10**9, base + 10**10])
    queries.extend(int(v) for v in rng.integers(int(ts[0]) - 50_000, int(ts[-1]) + 50_000, 120))
    for q in queries:
        for mode in MatchMode:
            for tol in (None, 0, 3_000, 20_000, 10**9):
                got = match_timestamp(ts, q, MatchCriteria(mode=mode, tolerance=tol))
                cases.append(
                    {
                        "query": str(q),
                        "mode": mode.value,
                        "tolerance": tol,
                        "expect": got,
                    }
                )
    out = {"timestamps": [str(t) for t in ts], "cases": cases}
    (ORACLES / "matching.json").write_text(json.dumps(out, sort_keys=True))


def _table_cells(table) -> dict:
    return {
        "frame_timestamps": [str(t) for t in table.frame_timestamps],
        "columns": {
            m: [None if v == -1 else int(v) for v in col] for m, col in sorted(table.columns.items())
        },
    }


def dump_sync() -> None:
    out: dict = {}
    for split, log_id, *_ in ALL_LOGS:
        log_dir = DATA_ROOT / split / log_id
        rel = f"{split}/{log_id}"
        entry: dict = {"persisted": {}, "built": {}}
        with open_log(log_dir) as log:
            from d123.sync import read_sync_table

            for name in log.sync_names():
                table = read_sync_table(log, name)
                entry["persisted"][name] = {
                    "config_json": table.config.to_json(),
                    **_table_cells(table),
                }
            for period in (200_000, 500_000):
                config = SyncConfig(reference="ego_state", resample_period=period)
                table = build_sync_table(log, config)
                entry["built"][config.default_name()] = _table_cells(table)
        out[rel] = entry
    (ORACLES / "sync.json").write_text(json.dumps(out, sort_keys=True))


def dump_scenes() -> None:
    cases = []

    def scene_case(name: str, scene_filter: SceneFilter, detail_count: int = 0) -> None:
        cache = LogCache(8)
        scenes = get_filtered_scenes(scene_filter, DATA_ROOT, cache=cache)
        case = {
            "name": name,
            "filter": {
                "split_names": list(scene_filter.split_names) if scene_filter.split_names else None,
                "target_iteration_period": scene_filter.target_iteration_period,
                "history_duration": scene_filter.history_duration,
                "future_duration": scene_filter.future_duration,
                "required_modalities": sorted(scene_filter.required_modalities),
                "shuffle": scene_filter.shuffle,
                "seed": scene_filter.seed,
                "stride": scene_filter.stride,
            },
            "tokens": [s.token for s in scenes],
            "details": [],
        }
        for scene in scenes[:detail_count]:
            detail = {
                "token": scene.token,
                "frame_timestamps": [
                    str(scene.timestamp_at_iteration(i)) for i in scene.iterations()
                ],
                "sync_indices": {},
            }
            handle = cache.get(scene.log_ref)
            for modality in handle.modalities():
                detail["sync_indices"][modality] = [
                    scene._sync_index(modality, i) for i in scene.iterations()
                ]
            case["details"].append(detail)
        cases.append(case)

    scene_case(
        "windowed",
        SceneFilter(target_iteration_period=500_000, history_duration=1_000_000, future_duration=500_000),
        detail_count=3,
    )
    scene_case(
        "shuffled",
        SceneFilter(
            target_iteration_period=500_000,
            history_duration=1_000_000,
            future_duration=500_000,
            shuffle=True,
            seed=7,
        ),
    )
    scene_case(
        "strided",
        SceneFilter(target_iteration_period=500_000, future_duration=1_000_000, stride=1),
    )
    scene_case(
        "required_camera",
        SceneFilter(
            target_iteration_period=500_000,
            required_modalities=frozenset({"camera_cam_f0"}),
        ),
    )
    scene_case(
        "required_traffic_lights",
        SceneFilter(
            target_iteration_period=500_000,
            required_modalities=frozenset({"traffic_lights"}),
        ),
    )
    scene_case(
        "train_only",
        SceneFilter(split_names=("train",), target_iteration_period=1_000_000),
    )
    # sparse boxes against a fast grid: some cells go absent, dropping windows
    scene_case(
        "required_boxes_fast",
        SceneFilter(
            split_names=("train",),
            target_iteration_period=100_000,
            required_modalities=frozenset({"boxes"}),
        ),
    )
    (ORACLES / "scenes.json").write_text(json.dumps({"cases": cases}, indent=1, sort_keys=True))


def dump_splitmix() -> None:
    from d123.scene import _splitmix64

    vectors = {}
    for seed in (0, 1, 42, 2**63 + 11):
        state = seed & ((1 << 64) - 1)
        outs = []
        for _ in range(8):
            state, z = _splitmix64(state)
            outs.append(str(z))
        vectors[str(seed)] = outs
    shuffles = {}
    for n in (0, 1, 2, 7, 50):
        for seed in (0, 987_654_321):
            items = list(range(n))
            deterministic_shuffle(items, seed)
            shuffles[f"{n}/{seed}"] = items
    out = {"vectors": vectors, "shuffles": shuffles}
    (ORACLES / "splitmix.json").write_text(json.dumps(out, indent=1, sort_keys=True))


def main() -> int:
    ORACLES.mkdir(parents=True, exist_ok=True)
    build_corpus()
    dump_columns()
    dump_matching()
    dump_sync()
    dump_scenes()
    dump_splitmix()
    total = sum(p.stat().st_size for p in FIXTURES.rglob("*") if p.is_file())
    print(f"fixtures written to {FIXTURES} ({total / 1e6:.2f} MB)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

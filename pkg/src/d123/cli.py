"""Terminal entry point: convert, inspect, synchronize, query, analyze, export.

Data goes to stdout, diagnostics to stderr. Exit codes: 0 success, 1 user
error, 2 data corruption, 3 internal fault. ``--json`` variants emit a
stable machine-readable schema.
"""
from __future__ import annotations

import dataclasses
import json
import sys
import tempfile
from pathlib import Path

import click
import numpy as np

from . import analytics, ingest, scene, synthetic
from .errors import D123Error, DataCorruption, IoFailure
from .geometry import SE3
from .logio import open_log
from .records import PayloadRef, timestamp_column
from .scene import iter_log_dirs
from .sync import MatchCriteria, SyncConfig, build_sync_table, match_timestamp, read_sync_table, write_sync_table

EXIT_OK = 0
EXIT_USER = 1
EXIT_CORRUPT = 2
EXIT_INTERNAL = 3


def _echo_data(text: str) -> None:
    click.echo(text)


def _echo_diag(text: str) -> None:
    click.echo(text, err=True)


def _record_obj(record) -> dict:
    """Stable JSON form of any record dataclass."""
    out = {"type": type(record).__name__}
    for f in dataclasses.fields(record):
        value = getattr(record, f.name)
        if isinstance(value, SE3):
            out[f.name] = {
                "translation": [float(v) for v in value.translation],
                "rotation": [float(v) for v in value.rotation],
            }
        elif isinstance(value, PayloadRef):
            out[f.name] = {
                "codec": value.codec,
                "path": value.path,
                "inline_bytes": len(value.inline) if value.inline is not None else None,
            }
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        elif hasattr(value, "value"):
            out[f.name] = value.value
        else:
            out[f.name] = value
    return out


@click.group()
def cli() -> None:
    """Storage and access toolkit for multi-modal driving logs."""


# -- convert -----------------------------------------------------------------------


def _parse_synthetic_source(source: str) -> synthetic.SyntheticScenarioConfig:
    """``rig[:seed[:duration_s]]`` shorthand for a synthetic scenario."""
    parts = source.split(":")
    rig = parts[0]
    seed = int(parts[1]) if len(parts) > 1 else 0
    duration = float(parts[2]) if len(parts) > 2 else 10.0
    return synthetic.SyntheticScenarioConfig(rig=rig, seed=seed, duration_s=duration)


@cli.command()
@click.option("--source", required=True, help="Source directory, URL, or synthetic rig[:seed[:duration]].")
@click.option("--format", "source_format", type=click.Choice(["jsonl", "synthetic"]), default="jsonl")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--mode", type=click.Choice(["external", "self-contained"]), default="external")
@click.option("--interpolate-boxes", "interpolate_hz", type=float, default=None, help="Upsample box tracks to this rate.")
def convert(source: str, source_format: str, out_dir: Path, mode: str, interpolate_hz: float | None) -> None:
    """Convert a JSONL source (or a generated synthetic one) into a log."""
    if source_format == "synthetic":
        config = _parse_synthetic_source(source)
        with tempfile.TemporaryDirectory(prefix="d123_synth_") as scratch:
            src_dir = synthetic.generate_source(config, Path(scratch) / "source")
            _echo_diag(f"generated synthetic source ({config.rig}, seed {config.seed})")
            ingest.convert(src_dir, out_dir, mode=mode.replace("-", "_"), interpolate_boxes_hz=interpolate_hz)
    else:
        src_dir = ingest.fetch_source(source)
        ingest.convert(src_dir, out_dir, mode=mode.replace("-", "_"), interpolate_boxes_hz=interpolate_hz)
    _echo_data(str(out_dir))


# -- info --------------------------------------------------------------------------


def _stream_info(handle, modality: str) -> dict:
    ts = handle.timestamps(modality)
    info = {"modality": modality, "rows": int(len(ts))}
    if len(ts) >= 2:
        gaps = np.diff(ts)
        # Gaps below the annotation-group threshold are intra-instant stagger,
        # not the stream cadence; exclude them unless nothing else is left.
        wide = gaps[gaps > scene.GROUP_GAP_US]
        median_gap = float(np.median(wide if len(wide) else gaps))
        info["rate_hz"] = round(1e6 / median_gap, 3) if median_gap > 0 else None
        info["duration_s"] = round(float(ts[-1] - ts[0]) / 1e6, 6)
    else:
        info["rate_hz"] = None
        info["duration_s"] = 0.0
    return info


@cli.command()
@click.argument("log_dir", type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def info(log_dir: Path, as_json: bool) -> None:
    """Modalities, estimated rates, durations and metadata of one log."""
    if not Path(log_dir).is_dir():
        raise click.UsageError(f"not a directory: {log_dir}")
    try:
        handle = open_log(log_dir)
    except IoFailure:
        # a directory with no recognized streams is empty, not broken
        if as_json:
            _echo_data(json.dumps({"log_dir": str(log_dir), "modalities": []}, indent=2))
        else:
            _echo_data(f"{log_dir}: 0 modalities")
        return
    with handle:
        meta = handle.metadata
        streams = [_stream_info(handle, m) for m in handle.modalities()]
        obj = {
            "log_dir": str(log_dir),
            "log_id": meta.log_id,
            "dataset": meta.dataset,
            "label_space": meta.label_space,
            "map_ref": meta.map_ref,
            "cameras": sorted(meta.cameras),
            "lidars": sorted(meta.lidars),
            "sync_tables": handle.sync_names(),
            "modalities": streams,
        }
    if as_json:
        _echo_data(json.dumps(obj, indent=2, sort_keys=True))
        return
    _echo_data(f"log {obj['log_id']} (dataset {obj['dataset']}, labels {obj['label_space']})")
    _echo_data(f"map: {obj['map_ref'] or '-'}  sync tables: {', '.join(obj['sync_tables']) or '-'}")
    for s in streams:
        rate = f"{s['rate_hz']:g} Hz" if s["rate_hz"] else "-"
        _echo_data(f"  {s['modality']:<24} {s['rows']:>8} rows  {rate:>10}  {s['duration_s']:.3f}s")


# -- sync --------------------------------------------------------------------------


@cli.command()
@click.argument("log_dir", type=click.Path(path_type=Path))
@click.option("--reference", default=None, help="Reference modality (default: boxes, else ego_state).")
@click.option("--rate", type=float, default=None, help="Resample to this rate (Hz) instead of keyframes.")
@click.option("--tolerance-ms", type=float, default=None, help="Match tolerance in milliseconds.")
@click.option("--name", default=None, help="Sync table name (default derives from config).")
def sync(log_dir: Path, reference: str | None, rate: float | None, tolerance_ms: float | None, name: str | None) -> None:
    """Build and persist a sync table for one log."""
    with open_log(log_dir) as handle:
        if reference is None:
            reference = ingest.default_sync_reference(handle.modalities())
        period = int(round(1e6 / rate)) if rate else None
        criteria = {}
        if tolerance_ms is not None:
            tol = int(round(tolerance_ms * 1000))
            criteria = {m: MatchCriteria(tolerance=tol) for m in handle.modalities()}
        config = SyncConfig(reference=reference, resample_period=period, criteria=criteria)
        table = build_sync_table(handle, config)
        path = write_sync_table(handle.directory, table, handle.metadata, name=name)
    filled = {m: int((col != -1).sum()) for m, col in sorted(table.columns.items())}
    _echo_diag(f"{table.num_frames} frames, filled cells per modality: {filled}")
    _echo_data(str(path))


# -- query -------------------------------------------------------------------------


@cli.command()
@click.argument("log_dir", type=click.Path(path_type=Path))
@click.option("--modality", required=True)
@click.option("--at", "at_spec", required=True, help="Timestamp in µs, or iter:N into a persisted sync table.")
@click.option("--criteria", type=click.Choice(["nearest", "exact", "forward", "backward"]), default="nearest")
@click.option("--tolerance-us", type=int, default=None)
@click.option("--sync-name", default=None, help="Sync table for iter: queries (default: first persisted).")
@click.option("--json", "as_json", is_flag=True)
def query(log_dir: Path, modality: str, at_spec: str, criteria: str, tolerance_us: int | None, sync_name: str | None, as_json: bool) -> None:
    """Match one record by time and print it."""
    with open_log(log_dir) as handle:
        if at_spec.startswith("iter:"):
            iteration = int(at_spec.split(":", 1)[1])
            names = handle.sync_names()
            if sync_name is None:
                if not names:
                    raise click.UsageError("iter: queries need a persisted sync table (run `d123 sync`)")
                sync_name = names[0]
            table = read_sync_table(handle, sync_name)
            if not 0 <= iteration < table.num_frames:
                raise click.UsageError(f"iteration {iteration} outside [0, {table.num_frames})")
            timestamp = int(table.frame_timestamps[iteration])
        else:
            timestamp = int(at_spec)
        if not handle.has_modality(modality):
            raise click.UsageError(f"log has no {modality!r} stream (has: {handle.modalities()})")
        idx = match_timestamp(
            handle.timestamps(modality), timestamp, MatchCriteria(mode=criteria, tolerance=tolerance_us)
        )
        if idx is None:
            _echo_data("null" if as_json else f"no match for {timestamp} under {criteria}")
            sys.exit(EXIT_OK if as_json else EXIT_USER)
        record = handle.record(modality, idx)
        obj = {"row": idx, "query": timestamp, "record": _record_obj(record)}
    if as_json:
        _echo_data(json.dumps(obj, indent=2, sort_keys=True))
    else:
        ts_field = timestamp_column(modality)
        _echo_data(f"row {idx} ({ts_field}={getattr(record, ts_field)}):")
        _echo_data(json.dumps(_record_obj(record), indent=2, sort_keys=True))


# -- stats -------------------------------------------------------------------------


@cli.command()
@click.argument("data_root", required=False, type=click.Path(path_type=Path), envvar="D123_DATA_ROOT")
@click.option("--splits", default=None, help="Comma-separated split names (default: all).")
@click.option("--out", "out_csv", required=True, type=click.Path(path_type=Path))
@click.option("--summary-json", "summary_path", type=click.Path(path_type=Path), default=None)
def stats(data_root: Path | None, splits: str | None, out_csv: Path, summary_path: Path | None) -> None:
    """Run the annotation-statistics pipeline over converted logs.

    DATA_ROOT falls back to $D123_DATA_ROOT when omitted.
    """
    if data_root is None:
        raise click.UsageError("missing DATA_ROOT argument (or set D123_DATA_ROOT)")
    split_names = tuple(splits.split(",")) if splits else None
    log_dirs = [path for _, _, path in iter_log_dirs(data_root, split_names)]
    _echo_diag(f"aggregating {len(log_dirs)} logs")
    histogram_set = analytics.build_histograms(log_dirs)
    analytics.export_csv(histogram_set, out_csv)
    if summary_path is not None:
        Path(summary_path).write_text(analytics.summary_json(histogram_set))
    _echo_diag(f"samples: {histogram_set.samples_processed}")
    _echo_data(str(out_csv))


# -- export ------------------------------------------------------------------------


def _export_ply(points: np.ndarray, path: Path) -> None:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property float intensity",
        "end_header",
    ]
    for p in points:
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {p[3]:.6f}")
    path.write_text("\n".join(lines) + "\n")


@cli.command()
@click.argument("target", type=click.Path(path_type=Path))
@click.option("--what", required=True, type=click.Choice(["map-geojson", "lidar-ply", "histograms-csv"]))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--lidar", "lidar_id", default=None, help="Sensor id for lidar-ply.")
@click.option("--index", type=int, default=0, help="Sweep row for lidar-ply.")
def export(target: Path, what: str, out_path: Path, lidar_id: str | None, index: int) -> None:
    """Export data views: map GeoJSON, a lidar sweep as PLY, or histograms CSV."""
    from .mapstore import MapStore, export_geojson

    if what == "map-geojson":
        target = Path(target)
        if target.is_dir():
            with open_log(target) as handle:
                if handle.metadata.map_ref is None:
                    raise click.UsageError(f"log {target} has no map")
                store = MapStore.load(target / handle.metadata.map_ref)
        else:
            store = MapStore.load(target)
        files = export_geojson(store, out_path)
        _echo_diag(f"{len(files)} layer files")
        _echo_data(str(out_path))
    elif what == "lidar-ply":
        with open_log(target) as handle:
            modality = f"lidar_{lidar_id}" if lidar_id else None
            if modality is None:
                lidars = [m for m in handle.modalities() if m.startswith("lidar_")]
                if not lidars:
                    raise click.UsageError("log has no lidar streams")
                modality = lidars[0]
            points = handle.decode_points(handle.payload(modality, index))
        out_path.parent.mkdir(parents=True, exist_ok=True)
        _export_ply(points, out_path)
        _echo_diag(f"{len(points)} points from {modality} row {index}")
        _echo_data(str(out_path))
    else:  # histograms-csv over a data root
        log_dirs = [path for _, _, path in iter_log_dirs(target)]
        histogram_set = analytics.build_histograms(log_dirs)
        analytics.export_csv(histogram_set, out_path)
        _echo_data(str(out_path))


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except SystemExit as exc:  # raised by explicit sys.exit in commands
        return int(exc.code or 0)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return EXIT_USER
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return EXIT_USER
    except click.exceptions.Abort:
        return EXIT_USER
    except DataCorruption as exc:
        _echo_diag(f"data corruption: {exc}")
        return EXIT_CORRUPT
    except D123Error as exc:
        _echo_diag(f"error: {exc}")
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - the documented internal-fault path
        _echo_diag(f"internal error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

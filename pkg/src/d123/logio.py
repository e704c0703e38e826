"""Bit-level read/write of the log directory format.

A log directory holds one columnar IPC file per modality
(``ego_state.arrow``, ``boxes.arrow``, ``traffic_lights.arrow``,
``camera_<id>.arrow``, ``lidar_<id>.arrow``) plus optional
``sync_<name>.arrow`` tables and, in external mode, payload blobs under
``blobs/<modality>/<rowid>.bin``. Every stream file embeds the full
JSON-encoded log metadata under the ``d123.metadata`` schema key, so each
file is readable standalone by any conforming IPC reader.

Reads are memory-mapped and lazy: opening a log touches only schemas and
footers. Module-level counters distinguish row reads (record/table/payload
materializations) from index reads (timestamp columns, sync tables), which
the cache/laziness tests rely on.
"""
from __future__ import annotations

import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pyarrow as pa
import pyarrow.ipc
from filelock import FileLock, Timeout

from . import records as rec
from .errors import (
    CodecUnsupportedForDecode,
    CorruptFile,
    DuplicateModalityFile,
    IoFailure,
    MetadataMismatch,
    MissingPayload,
    PayloadCorrupt,
    UnsortedTimestamps,
)
from .records import (
    DECODABLE_CODECS,
    FORMAT_VERSION,
    FORMAT_VERSION_KEY,
    METADATA_KEY,
    MODALITY_KEY,
    SYNC_PREFIX,
    STREAM_SUFFIX,
    Codec,
    EventStream,
    LogMetadata,
    PayloadRef,
    record_from_row,
    timestamp_column,
)

ROW_GROUP_SIZE = 1024  # rows per record batch; bounds point-read amplification

LOCK_FILE = ".d123.lock"


@dataclass
class IoCounters:
    """Process-wide instrumentation, resettable in tests."""

    record_reads: int = 0  # single records materialized from row data
    table_reads: int = 0  # rows materialized through bulk table access
    payload_reads: int = 0  # payload byte fetches (inline or external)
    index_reads: int = 0  # timestamp-column / sync-table loads
    open_handles: int = 0
    peak_open_handles: int = 0

    @property
    def row_reads(self) -> int:
        return self.record_reads + self.table_reads


COUNTERS = IoCounters()
_COUNTER_LOCK = threading.Lock()


def reset_io_counters() -> None:
    with _COUNTER_LOCK:
        open_now = COUNTERS.open_handles
        COUNTERS.record_reads = 0
        COUNTERS.table_reads = 0
        COUNTERS.payload_reads = 0
        COUNTERS.index_reads = 0
        COUNTERS.peak_open_handles = open_now


def _count(field_name: str, amount: int = 1) -> None:
    with _COUNTER_LOCK:
        setattr(COUNTERS, field_name, getattr(COUNTERS, field_name) + amount)


def _handle_opened() -> None:
    with _COUNTER_LOCK:
        COUNTERS.open_handles += 1
        COUNTERS.peak_open_handles = max(COUNTERS.peak_open_handles, COUNTERS.open_handles)


def _handle_closed() -> None:
    with _COUNTER_LOCK:
        COUNTERS.open_handles -= 1


# -- low-level IPC helpers ----------------------------------------------------


def write_ipc_file(
    path: Path,
    table: pa.Table,
    extra_metadata: Mapping[bytes, str],
    metadata: LogMetadata | None = None,
) -> None:
    """Write one IPC file with schema-level metadata, batching rows."""
    meta: dict[bytes, bytes] = {FORMAT_VERSION_KEY: FORMAT_VERSION.encode()}
    if metadata is not None:
        meta[METADATA_KEY] = metadata.to_json().encode()
    for key, value in extra_metadata.items():
        meta[key] = value.encode() if isinstance(value, str) else value
    schema = table.schema.with_metadata(meta)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with pa.OSFile(str(tmp), "wb") as sink:
            with pa.ipc.new_file(sink, schema) as writer:
                writer.write_table(table.cast(schema), max_chunksize=ROW_GROUP_SIZE)
        tmp.replace(path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise IoFailure(f"failed writing {path}: {exc}") from exc


def _open_ipc_file(path: Path) -> tuple[pa.MemoryMappedFile, pa.ipc.RecordBatchFileReader]:
    try:
        source = pa.memory_map(str(path), "r")
    except OSError as exc:
        raise IoFailure(f"cannot open {path}: {exc}") from exc
    try:
        reader = pa.ipc.open_file(source)
    except pa.ArrowInvalid as exc:
        source.close()
        raise CorruptFile(f"{path.name}: {exc}") from exc
    return source, reader


# -- payload handling ---------------------------------------------------------


def _blob_relpath(modality: str, row: int) -> str:
    return f"blobs/{modality}/{row:08d}.bin"


def _payload_bytes(ref: PayloadRef, base_dir: Path) -> bytes:
    _count("payload_reads")
    if ref.inline is not None:
        return ref.inline
    path = Path(base_dir) / ref.path
    try:
        return path.read_bytes()
    except FileNotFoundError as exc:
        raise MissingPayload(f"payload file missing: {path}") from exc
    except OSError as exc:
        raise IoFailure(f"cannot read payload {path}: {exc}") from exc


def _points_from_raw(data: bytes, context: str) -> np.ndarray:
    if len(data) % 16 != 0:
        raise PayloadCorrupt(f"{context}: length {len(data)} not divisible by 16-byte points")
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4)


def decode_payload(ref: PayloadRef, base_dir: Path) -> bytes | np.ndarray:
    """Decode a payload to its unified representation.

    raw codecs decode to an N×4 float32 array; every other codec (including
    unknown ones) passes through as opaque encoded bytes. The result is
    identical whether the payload was stored inline or externally.
    """
    data = _payload_bytes(ref, base_dir)
    if ref.codec == Codec.RAW_F32LE.value:
        return _points_from_raw(data, ref.codec)
    if ref.codec == Codec.RAW_DEFLATE.value:
        try:
            raw = zlib.decompress(data)
        except zlib.error as exc:
            raise PayloadCorrupt(f"raw_deflate: {exc}") from exc
        return _points_from_raw(raw, ref.codec)
    return data


def decode_points(ref: PayloadRef, base_dir: Path) -> np.ndarray:
    """Decode a payload that must yield a point array."""
    if ref.codec not in DECODABLE_CODECS:
        raise CodecUnsupportedForDecode(f"codec {ref.codec!r} cannot decode to points")
    out = decode_payload(ref, base_dir)
    assert isinstance(out, np.ndarray)
    return out


def encode_points(points: np.ndarray, codec: str = Codec.RAW_F32LE.value) -> bytes:
    """Encode an N×4 float32 array with one of the raw codecs."""
    arr = np.ascontiguousarray(points, dtype="<f4")
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError("expected an N×4 point array")
    raw = arr.tobytes()
    if codec == Codec.RAW_F32LE.value:
        return raw
    if codec == Codec.RAW_DEFLATE.value:
        return zlib.compress(raw, level=6)
    raise CodecUnsupportedForDecode(f"cannot encode points with codec {codec!r}")


# -- writing ------------------------------------------------------------------


def _rewrite_payload_columns(
    stream: EventStream, out_dir: Path, mode: str, payload_source: Path | None
) -> pa.Table:
    """Normalize payload storage for one stream according to the write mode.

    external mode materializes every payload to ``blobs/<modality>/<row>.bin``
    and stores the relative path; self_contained inlines all bytes.
    """
    table = stream.table
    if "codec" not in table.column_names:
        return table
    inline_col = table.column("payload_inline").to_pylist()
    path_col = table.column("payload_path").to_pylist()
    codec_col = table.column("codec").to_pylist()
    source_base = payload_source if payload_source is not None else out_dir

    new_inline: list[bytes | None] = []
    new_path: list[str | None] = []
    for row, (codec, inline, rel) in enumerate(zip(codec_col, inline_col, path_col)):
        ref = PayloadRef(codec=codec, inline=inline, path=rel)
        data = _payload_bytes(ref, source_base)
        if mode == "self_contained":
            new_inline.append(data)
            new_path.append(None)
        else:
            blob_rel = _blob_relpath(stream.modality, row)
            blob_path = out_dir / blob_rel
            blob_path.parent.mkdir(parents=True, exist_ok=True)
            blob_path.write_bytes(data)
            new_inline.append(None)
            new_path.append(blob_rel)

    table = table.set_column(
        table.schema.get_field_index("payload_inline"),
        "payload_inline",
        pa.array(new_inline, type=pa.binary()),
    )
    table = table.set_column(
        table.schema.get_field_index("payload_path"),
        "payload_path",
        pa.array(new_path, type=pa.string()),
    )
    return table


WRITE_MODES = ("external", "self_contained")


def write_log(
    directory: Path,
    streams: Sequence[EventStream],
    metadata: LogMetadata,
    mode: str = "external",
    payload_source: Path | None = None,
) -> Path:
    """Write one log directory, one IPC file per modality.

    ``payload_source`` is the base directory for resolving any path-based
    PayloadRefs in the input streams; payloads are re-laid-out canonically
    (external) or inlined (self_contained) regardless of how they arrived.
    Writing is exclusive per directory via an advisory lock file.
    """
    if mode not in WRITE_MODES:
        raise ValueError(f"mode must be one of {WRITE_MODES}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    seen: set[str] = set()
    for stream in streams:
        if stream.modality in seen:
            raise DuplicateModalityFile(f"duplicate stream for modality {stream.modality!r}")
        seen.add(stream.modality)
        if stream.metadata.to_json() != metadata.to_json():
            raise MetadataMismatch(f"stream {stream.modality!r} carries different metadata")
        stream.validate_timestamps()

    lock = FileLock(str(directory / LOCK_FILE))
    try:
        lock.acquire(timeout=0)
    except Timeout as exc:
        raise IoFailure(f"another writer holds the lock on {directory}") from exc
    try:
        for stream in streams:
            table = _rewrite_payload_columns(stream, directory, mode, payload_source)
            write_ipc_file(
                directory / f"{stream.modality}{STREAM_SUFFIX}",
                table,
                {MODALITY_KEY: stream.modality},
                metadata=metadata,
            )
    finally:
        lock.release()
    return directory


# -- reading ------------------------------------------------------------------


class LogHandle:
    """Lazy, read-only view of one log directory.

    Opening parses footers and schema metadata only. Row data is touched on
    first access of a record, table or payload; timestamp columns load (and
    validate) lazily on first use and count as index reads.
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise IoFailure(f"not a directory: {self.directory}")
        self._sources: dict[str, pa.MemoryMappedFile] = {}
        self._readers: dict[str, pa.ipc.RecordBatchFileReader] = {}
        self._sync_paths: dict[str, Path] = {}
        self._offsets: dict[str, np.ndarray] = {}
        self._timestamps: dict[str, np.ndarray] = {}
        self._batch_cache: dict[str, tuple[int, pa.RecordBatch]] = {}
        self._closed = False
        self.metadata: LogMetadata | None = None

        meta_json: str | None = None
        meta_file: str | None = None
        for path in sorted(self.directory.glob(f"*{STREAM_SUFFIX}")):
            stem = path.name[: -len(STREAM_SUFFIX)]
            if stem.startswith(SYNC_PREFIX):
                self._sync_paths[stem[len(SYNC_PREFIX):]] = path
                continue
            try:
                rec.stream_schema(stem)
            except Exception:
                continue  # unrecognized file names are not ours to judge
            source, reader = _open_ipc_file(path)
            self._sources[stem] = source
            self._readers[stem] = reader
            raw_meta = (reader.schema.metadata or {}).get(METADATA_KEY)
            if raw_meta is None:
                self.close()
                raise CorruptFile(f"{path.name}: missing {METADATA_KEY.decode()} metadata")
            decoded = raw_meta.decode()
            if meta_json is None:
                meta_json = decoded
                meta_file = path.name
            elif decoded != meta_json:
                self.close()
                raise MetadataMismatch(f"{path.name} disagrees with {meta_file}")
        if not self._readers:
            self.close()
            raise IoFailure(f"no recognized modality files in {self.directory}")
        assert meta_json is not None
        try:
            self.metadata = LogMetadata.from_json(meta_json)
        except Exception as exc:
            self.close()
            raise CorruptFile(f"{meta_file}: malformed log metadata: {exc}") from exc
        _handle_opened()
        self._counted = True

    # -- lifecycle ------------------------------------------------------

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for source in self._sources.values():
            try:
                source.close()
            except Exception:
                pass
        if getattr(self, "_counted", False):
            _handle_closed()
            self._counted = False

    def __del__(self):  # refcount-driven cleanup keeps the open-handle count honest
        try:
            self.close()
        except Exception:
            pass

    def __enter__(self) -> "LogHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- structure ------------------------------------------------------

    def modalities(self) -> list[str]:
        return sorted(self._readers)

    def sync_names(self) -> list[str]:
        return sorted(self._sync_paths)

    def has_modality(self, modality: str) -> bool:
        return modality in self._readers

    def _reader(self, modality: str) -> pa.ipc.RecordBatchFileReader:
        try:
            return self._readers[modality]
        except KeyError:
            from .errors import MissingModality

            raise MissingModality(f"log has no {modality!r} stream") from None

    def num_rows(self, modality: str) -> int:
        offsets = self._batch_offsets(modality)
        return int(offsets[-1])

    def _batch_offsets(self, modality: str) -> np.ndarray:
        if modality not in self._offsets:
            reader = self._reader(modality)
            sizes = [reader.get_batch(i).num_rows for i in range(reader.num_record_batches)]
            self._offsets[modality] = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        return self._offsets[modality]

    # -- data access ----------------------------------------------------

    def timestamps(self, modality: str) -> np.ndarray:
        """The stream's timestamp column (validated strictly increasing)."""
        if modality not in self._timestamps:
            reader = self._reader(modality)
            _count("index_reads")
            column = reader.read_all().column(timestamp_column(modality))
            ts = column.to_numpy()
            if len(ts) > 1 and not np.all(np.diff(ts) > 0):
                raise UnsortedTimestamps(f"{modality}: timestamps not strictly increasing")
            ts.flags.writeable = False
            self._timestamps[modality] = ts
        return self._timestamps[modality]

    def _row(self, modality: str, index: int) -> dict:
        offsets = self._batch_offsets(modality)
        n = int(offsets[-1])
        if not 0 <= index < n:
            raise IndexError(f"{modality}: row {index} out of range [0, {n})")
        batch_idx = int(np.searchsorted(offsets, index, side="right") - 1)
        cached = self._batch_cache.get(modality)
        if cached is not None and cached[0] == batch_idx:
            batch = cached[1]
        else:
            batch = self._reader(modality).get_batch(batch_idx)
            self._batch_cache[modality] = (batch_idx, batch)
        local = index - int(offsets[batch_idx])
        return {name: batch.column(k)[local].as_py() for k, name in enumerate(batch.schema.names)}

    def record(self, modality: str, index: int):
        """Materialize one record (counts as a row read)."""
        _count("record_reads")
        return record_from_row(modality, self._row(modality, index))

    def table(self, modality: str) -> pa.Table:
        """Materialize a full modality table (counts all rows as read)."""
        reader = self._reader(modality)
        table = reader.read_all()
        _count("table_reads", table.num_rows)
        return table

    def stream(self, modality: str) -> EventStream:
        assert self.metadata is not None
        return EventStream(modality=modality, table=self.table(modality), metadata=self.metadata)

    def payload(self, modality: str, index: int) -> PayloadRef:
        row = self._row(modality, index)
        _count("record_reads")
        return rec._row_payload(row)

    def payload_bytes(self, ref: PayloadRef) -> bytes:
        """Fetch the encoded payload bytes without decoding."""
        return _payload_bytes(ref, self.directory)

    def decode_payload(self, ref: PayloadRef) -> bytes | np.ndarray:
        return decode_payload(ref, self.directory)

    def decode_points(self, ref: PayloadRef) -> np.ndarray:
        return decode_points(ref, self.directory)

    # -- sync tables ------------------------------------------------------

    def sync_table_raw(self, name: str) -> pa.Table:
        """Read a persisted sync table as a raw columnar table (index read)."""
        try:
            path = self._sync_paths[name]
        except KeyError:
            raise IoFailure(f"no sync table named {name!r} in {self.directory}") from None
        source, reader = _open_ipc_file(path)
        try:
            _count("index_reads")
            return reader.read_all()
        finally:
            source.close()


def open_log(directory: Path) -> LogHandle:
    """Open a log directory for lazy reading."""
    return LogHandle(directory)

/**
 * Read-only access to converted log directories.
 *
 * A log directory holds one Arrow IPC file per modality stream plus
 * optional persisted sync tables (sync_<name>.arrow). Every stream file
 * carries the full log metadata in its schema metadata under
 * "d123.metadata"; all streams of one log must agree on it.
 *
 * This module adds no semantics of its own: values come out bit-identical
 * to what the writer put in. Int64 columns surface as bigint, float64 as
 * number (the same IEEE value), binary as Uint8Array views directly over
 * the file bytes (zero copy).
 */

import { closeSync, fstatSync, openSync, readSync, readFileSync, readdirSync, statSync } from "node:fs";
import { join, resolve } from "node:path";
import { inflateSync } from "node:zlib";
import { Table, tableFromIPC } from "apache-arrow";

import { COUNTERS, count, handleClosed, handleOpened } from "./counters.js";

export const EGO_STATE = "ego_state";
export const BOXES = "boxes";
export const TRAFFIC_LIGHTS = "traffic_lights";
export const CAMERA_PREFIX = "camera_";
export const LIDAR_PREFIX = "lidar_";
export const SYNC_PREFIX = "sync_";
export const STREAM_SUFFIX = ".arrow";

export const METADATA_KEY = "d123.metadata";
export const MODALITY_KEY = "d123.modality";
export const FORMAT_VERSION_KEY = "d123.format_version";
export const SYNC_CONFIG_KEY = "d123.sync_config";

export function cameraModality(cameraId: string): string {
  return CAMERA_PREFIX + cameraId;
}

export function lidarModality(lidarId: string): string {
  return LIDAR_PREFIX + lidarId;
}

export function sensorIdOf(modality: string): string | null {
  for (const prefix of [CAMERA_PREFIX, LIDAR_PREFIX]) {
    if (modality.startsWith(prefix)) return modality.slice(prefix.length);
  }
  return null;
}

/** Column holding the stream's event time (sweep start for lidar). */
export function timestampColumn(modality: string): string {
  return modality.startsWith(LIDAR_PREFIX) ? "timestamp_start" : "timestamp";
}

function isKnownModality(stem: string): boolean {
  return (
    stem === EGO_STATE ||
    stem === BOXES ||
    stem === TRAFFIC_LIGHTS ||
    stem.startsWith(CAMERA_PREFIX) ||
    stem.startsWith(LIDAR_PREFIX)
  );
}

/** One cell of a record row; nulls stay null, int64 stays bigint. */
export type CellValue = bigint | number | string | Uint8Array | null;
export type RecordRow = Record<string, CellValue>;

export interface PayloadRef {
  codec: string;
  inline: Uint8Array | null;
  path: string | null;
}

export interface LogMetadata {
  log_id: string;
  [key: string]: unknown;
}

/**
 * Read a file into an ArrayBuffer of exactly the file's size.
 *
 * readFileSync can hand back a pooled buffer for small files; an owned,
 * exact-size allocation keeps the zero-copy aliasing story checkable
 * (a payload view's backing buffer is the whole stream file, nothing else).
 */
function readFileExact(path: string): Uint8Array {
  const fd = openSync(path, "r");
  try {
    const size = fstatSync(fd).size;
    const out = new Uint8Array(size);
    let off = 0;
    while (off < size) {
      const n = readSync(fd, out, off, size - off, off);
      if (n <= 0) throw new Error(`short read: ${path}`);
      off += n;
    }
    return out;
  } finally {
    closeSync(fd);
  }
}

export class LogHandleClosed extends Error {}
export class MissingModality extends Error {}
export class MissingPayload extends Error {}
export class CorruptFile extends Error {}

/**
 * Handle over one log directory.
 *
 * Opening parses each stream file's IPC framing (buffers stay as views
 * over the raw file bytes; no row is materialized). Row access counts
 * through COUNTERS exactly like the native library: record() is a record
 * read, table() counts every row, timestamps() is an index read.
 */
export class LogHandle {
  readonly directory: string;
  readonly metadata: LogMetadata;

  private tables = new Map<string, Table>();
  private buffers = new Map<string, Uint8Array>();
  private syncPaths = new Map<string, string>();
  private timestampCache = new Map<string, BigInt64Array>();
  private closed = false;

  constructor(directory: string) {
    this.directory = resolve(directory);
    let names: string[];
    try {
      names = readdirSync(this.directory).sort();
    } catch (exc) {
      throw new CorruptFile(`not a readable directory: ${this.directory}`);
    }

    let metaJson: string | null = null;
    let metaFile: string | null = null;
    for (const name of names) {
      if (!name.endsWith(STREAM_SUFFIX)) continue;
      const stem = name.slice(0, -STREAM_SUFFIX.length);
      if (stem.startsWith(SYNC_PREFIX)) {
        this.syncPaths.set(stem.slice(SYNC_PREFIX.length), join(this.directory, name));
        continue;
      }
      if (!isKnownModality(stem)) continue; // unrecognized file names are not ours to judge
      const bytes = readFileExact(join(this.directory, name));
      const table = tableFromIPC(bytes);
      const declared = table.schema.metadata.get(MODALITY_KEY);
      if (declared !== undefined && declared !== stem) {
        throw new CorruptFile(`${name}: declares modality ${declared}, file name says ${stem}`);
      }
      const raw = table.schema.metadata.get(METADATA_KEY);
      if (raw === undefined) {
        throw new CorruptFile(`${name}: missing ${METADATA_KEY} metadata`);
      }
      if (metaJson === null) {
        metaJson = raw;
        metaFile = name;
      } else if (raw !== metaJson) {
        throw new CorruptFile(`${name} disagrees with ${metaFile}`);
      }
      this.tables.set(stem, table);
      this.buffers.set(stem, bytes);
    }
    if (this.tables.size === 0) {
      throw new CorruptFile(`no recognized modality files in ${this.directory}`);
    }
    this.metadata = JSON.parse(metaJson!) as LogMetadata;
    handleOpened();
  }

  /**
   * Release this handle's accounting slot. Existing tables, records and
   * payload views stay valid: the backing memory is reference-managed, so
   * an evicted-but-still-referenced view can never dangle.
   */
  close(): void {
    if (this.closed) return;
    this.closed = true;
    handleClosed();
  }

  get isClosed(): boolean {
    return this.closed;
  }

  // -- structure ------------------------------------------------------

  modalities(): string[] {
    return [...this.tables.keys()].sort();
  }

  syncNames(): string[] {
    return [...this.syncPaths.keys()].sort();
  }

  hasModality(modality: string): boolean {
    return this.tables.has(modality);
  }

  numRows(modality: string): number {
    return this.tableOf(modality).numRows;
  }

  columnNames(modality: string): string[] {
    return this.tableOf(modality).schema.fields.map((f) => f.name);
  }

  private tableOf(modality: string): Table {
    const table = this.tables.get(modality);
    if (table === undefined) {
      throw new MissingModality(`log has no '${modality}' stream`);
    }
    return table;
  }

  /** The raw file bytes backing a stream; zero-copy views alias this. */
  backingBuffer(modality: string): Uint8Array {
    this.tableOf(modality);
    return this.buffers.get(modality)!;
  }

  // -- data access ----------------------------------------------------

  /** The stream's timestamp column (validated strictly increasing). */
  timestamps(modality: string): BigInt64Array {
    const cached = this.timestampCache.get(modality);
    if (cached !== undefined) return cached;
    const table = this.tableOf(modality);
    count("indexReads");
    const columnName = timestampColumn(modality);
    const column = table.getChild(columnName);
    if (column === null) {
      throw new CorruptFile(`${modality}: no ${columnName} column`);
    }
    const ts = new BigInt64Array(table.numRows);
    for (let i = 0; i < table.numRows; i++) {
      ts[i] = column.get(i) as bigint;
    }
    for (let i = 1; i < ts.length; i++) {
      if (ts[i] <= ts[i - 1]) {
        throw new CorruptFile(`${modality}: timestamps not strictly increasing`);
      }
    }
    this.timestampCache.set(modality, ts);
    return ts;
  }

  private row(modality: string, index: number): RecordRow {
    const table = this.tableOf(modality);
    if (!(Number.isInteger(index) && index >= 0 && index < table.numRows)) {
      throw new RangeError(`${modality}: row ${index} out of range [0, ${table.numRows})`);
    }
    const out: RecordRow = {};
    for (const field of table.schema.fields) {
      const value = table.getChild(field.name)!.get(index);
      out[field.name] = value === undefined ? null : (value as CellValue);
    }
    return out;
  }

  /** Materialize one record as a plain row object (counts as a row read). */
  record(modality: string, index: number): RecordRow {
    count("recordReads");
    return this.row(modality, index);
  }

  /** The underlying Arrow table (counts every row as read). */
  table(modality: string): Table {
    const table = this.tableOf(modality);
    count("tableReads", table.numRows);
    return table;
  }

  payload(modality: string, index: number): PayloadRef {
    const row = this.row(modality, index);
    count("recordReads");
    const codec = row["codec"];
    if (typeof codec !== "string") {
      throw new CorruptFile(`${modality}: row ${index} has no codec column`);
    }
    const inline = row["payload_inline"];
    const path = row["payload_path"];
    return {
      codec,
      inline: inline instanceof Uint8Array ? inline : null,
      path: typeof path === "string" ? path : null,
    };
  }

  /** Encoded payload bytes; inline views alias the stream file buffer. */
  payloadBytes(ref: PayloadRef): Uint8Array {
    count("payloadReads");
    if (ref.inline !== null) return ref.inline;
    if (ref.path === null) {
      throw new MissingPayload("payload has neither inline bytes nor a path");
    }
    const full = join(this.directory, ref.path);
    try {
      return readFileSync(full);
    } catch (exc) {
      throw new MissingPayload(`payload file missing: ${full}`);
    }
  }

  /**
   * Decode a raw point payload to float32 x,y,z,intensity quads.
   *
   * raw_f32le payloads stored inline come back as a Float32Array view over
   * the stream file's own bytes: the writer pads point blobs to 16-byte
   * multiples, which keeps Arrow binary offsets 4-aligned, so no copy is
   * needed. External and deflated payloads decode into fresh memory.
   */
  decodePoints(ref: PayloadRef): Float32Array {
    const data = this.payloadBytes(ref);
    if (ref.codec === "raw_f32le") {
      return pointsFromRaw(data, ref.codec);
    }
    if (ref.codec === "raw_deflate") {
      const raw = inflateSync(data);
      return pointsFromRaw(new Uint8Array(raw.buffer, raw.byteOffset, raw.byteLength), "raw_deflate");
    }
    throw new CorruptFile(`codec '${ref.codec}' cannot decode to points`);
  }

  // -- sync tables ------------------------------------------------------

  /** Read a persisted sync table file as a raw Arrow table (index read). */
  syncTableRaw(name: string): Table {
    const path = this.syncPaths.get(name);
    if (path === undefined) {
      throw new MissingModality(`no sync table named '${name}' in ${this.directory}`);
    }
    count("indexReads");
    return tableFromIPC(readFileExact(path));
  }
}

function pointsFromRaw(data: Uint8Array, context: string): Float32Array {
  if (data.byteLength % 16 !== 0) {
    throw new CorruptFile(`${context}: length ${data.byteLength} not divisible by 16-byte points`);
  }
  if (data.byteOffset % 4 === 0) {
    return new Float32Array(data.buffer, data.byteOffset, data.byteLength / 4);
  }
  // misaligned view (external file read into an offset buffer): copy once
  const copy = new Uint8Array(data);
  return new Float32Array(copy.buffer, 0, copy.byteLength / 4);
}

export function openLog(directory: string): LogHandle {
  return new LogHandle(directory);
}

export { COUNTERS };

/** True if the path looks like a converted log directory. */
export function isLogDir(directory: string): boolean {
  try {
    if (!statSync(directory).isDirectory()) return false;
  } catch {
    return false;
  }
  return readdirSync(directory).some(
    (name) =>
      name.endsWith(STREAM_SUFFIX) &&
      isKnownModality(name.slice(0, -STREAM_SUFFIX.length))
  );
}

/**
 * Timestamp matching and sync tables.
 *
 * Matching semantics are the library contract and must agree with the
 * native implementation on every input: exact wants an equal timestamp,
 * backward the greatest t <= query, forward the least t >= query, nearest
 * the minimal |t - query| with ties to the earlier event. A tolerance
 * bounds |t - query| in every mode. Absence is a value (ABSENT), never an
 * error.
 */

import { Table } from "apache-arrow";

import { LogHandle, MissingModality, SYNC_CONFIG_KEY } from "./logReader.js";

/** In-memory sentinel for "no event satisfies the criteria"; persisted as null. */
export const ABSENT = -1;

export type MatchMode = "exact" | "nearest" | "forward" | "backward";

export interface MatchCriteria {
  mode: MatchMode;
  tolerance: number | null; // µs; null means unlimited
}

export const DEFAULT_CRITERIA: MatchCriteria = { mode: "nearest", tolerance: null };

/** First index with ts[idx] >= q. */
function lowerBound(ts: BigInt64Array, q: bigint): number {
  let lo = 0;
  let hi = ts.length;
  while (lo < hi) {
    const mid = (lo + hi) >>> 1;
    if (ts[mid] < q) lo = mid + 1;
    else hi = mid;
  }
  return lo;
}

function absBig(x: bigint): bigint {
  return x < 0n ? -x : x;
}

/** Match one query against a strictly increasing stream; ABSENT on no hit. */
export function matchTimestamp(ts: BigInt64Array, query: bigint, criteria: MatchCriteria): number {
  const n = ts.length;
  if (n === 0) return ABSENT;
  const fwdIdx = lowerBound(ts, query); // candidate for forward
  // strictly increasing stream: count of t <= query is fwdIdx plus the exact hit
  const exactHit = fwdIdx < n && ts[fwdIdx] === query;
  const leftIdx = exactHit ? fwdIdx : fwdIdx - 1; // candidate for backward

  let found = ABSENT;
  switch (criteria.mode) {
    case "exact":
      if (exactHit) found = fwdIdx;
      break;
    case "backward":
      if (leftIdx >= 0) found = leftIdx;
      break;
    case "forward":
      if (fwdIdx < n) found = fwdIdx;
      break;
    case "nearest": {
      if (leftIdx >= 0 || fwdIdx < n) {
        if (leftIdx < 0) {
          found = fwdIdx;
        } else if (fwdIdx >= n) {
          found = leftIdx;
        } else {
          const dLo = absBig(query - ts[leftIdx]);
          const dHi = absBig(ts[fwdIdx] - query);
          found = dLo <= dHi ? leftIdx : fwdIdx; // tie -> earlier
        }
      }
      break;
    }
  }

  if (found !== ABSENT && criteria.tolerance !== null) {
    if (absBig(ts[found] - query) > BigInt(criteria.tolerance)) found = ABSENT;
  }
  return found;
}

export function matchTimestamps(ts: BigInt64Array, queries: BigInt64Array, criteria: MatchCriteria): Int32Array {
  const out = new Int32Array(queries.length);
  for (let i = 0; i < queries.length; i++) {
    out[i] = matchTimestamp(ts, queries[i], criteria);
  }
  return out;
}

/** Half-open contiguous row range with t0 <= t < t1. */
export function windowIndices(ts: BigInt64Array, t0: bigint, t1: bigint): [number, number] {
  if (t1 < t0) throw new RangeError("window requires t0 <= t1");
  return [lowerBound(ts, t0), lowerBound(ts, t1)];
}

/** Frame grid t_k = t_first + k*period, k = 0..floor((t_last-t_first)/period). */
export function resampleGrid(tFirst: bigint, tLast: bigint, period: bigint): BigInt64Array {
  const n = Number((tLast - tFirst) / period) + 1;
  const out = new BigInt64Array(n);
  for (let k = 0; k < n; k++) out[k] = tFirst + BigInt(k) * period;
  return out;
}

export interface SyncConfig {
  reference: string;
  resamplePeriod: number | null; // µs
  criteria: Record<string, MatchCriteria>;
}

export function criteriaFor(config: SyncConfig, modality: string): MatchCriteria {
  const override = config.criteria[modality];
  if (override !== undefined) return override;
  return { mode: "nearest", tolerance: config.resamplePeriod };
}

export function defaultSyncName(config: SyncConfig): string {
  if (config.resamplePeriod === null) return `keyframes_${config.reference}`;
  return `${config.resamplePeriod}us_${config.reference}`;
}

export function syncConfigFromJson(text: string): SyncConfig {
  const obj = JSON.parse(text) as {
    reference: string;
    resample_period: number | null;
    criteria?: Record<string, { mode: MatchMode; tolerance: number | null }>;
  };
  const criteria: Record<string, MatchCriteria> = {};
  for (const [m, c] of Object.entries(obj.criteria ?? {})) {
    criteria[m] = { mode: c.mode, tolerance: c.tolerance };
  }
  return { reference: obj.reference, resamplePeriod: obj.resample_period, criteria };
}

/** Frame timeline plus one row-index column per modality (ABSENT = -1). */
export class SyncTable {
  constructor(
    readonly frameTimestamps: BigInt64Array,
    readonly columns: Map<string, Int32Array>,
    readonly config: SyncConfig
  ) {}

  get numFrames(): number {
    return this.frameTimestamps.length;
  }

  index(modality: string, frame: number): number | null {
    const column = this.columns.get(modality);
    if (column === undefined) {
      throw new MissingModality(`sync table has no column for '${modality}'`);
    }
    const value = column[frame];
    return value === ABSENT ? null : value;
  }
}

/** Build a sync table over every modality stream of the log. */
export function buildSyncTable(log: LogHandle, config: SyncConfig): SyncTable {
  if (!log.hasModality(config.reference)) {
    throw new MissingModality(`reference modality '${config.reference}' not in log`);
  }
  const refTs = log.timestamps(config.reference);
  if (refTs.length === 0) {
    throw new RangeError(`reference stream '${config.reference}' has no events`);
  }
  const frames =
    config.resamplePeriod === null
      ? refTs
      : resampleGrid(refTs[0], refTs[refTs.length - 1], BigInt(config.resamplePeriod));
  const columns = new Map<string, Int32Array>();
  for (const modality of log.modalities()) {
    const ts = log.timestamps(modality);
    const col = new Int32Array(frames.length);
    const crit = criteriaFor(config, modality);
    for (let k = 0; k < frames.length; k++) {
      col[k] = matchTimestamp(ts, frames[k], crit);
    }
    columns.set(modality, col);
  }
  return new SyncTable(frames, columns, config);
}

/** Load a persisted sync table; cell-identical to what was written. */
export function readSyncTable(log: LogHandle, name: string): SyncTable {
  const raw: Table = log.syncTableRaw(name);
  const configText = raw.schema.metadata.get(SYNC_CONFIG_KEY);
  if (configText === undefined) {
    throw new RangeError(`sync table '${name}' lacks a stored config`);
  }
  const config = syncConfigFromJson(configText);
  const framesCol = raw.getChild("frame_timestamp");
  if (framesCol === null) throw new RangeError(`sync table '${name}' has no frame_timestamp`);
  const frames = new BigInt64Array(raw.numRows);
  for (let i = 0; i < raw.numRows; i++) frames[i] = framesCol.get(i) as bigint;

  const columns = new Map<string, Int32Array>();
  for (const field of raw.schema.fields) {
    if (field.name === "frame_timestamp") continue;
    const vec = raw.getChild(field.name)!;
    const col = new Int32Array(raw.numRows);
    for (let i = 0; i < raw.numRows; i++) {
      const v = vec.get(i) as bigint | null;
      col[i] = v === null ? ABSENT : Number(v);
    }
    columns.set(field.name, col);
  }
  return new SyncTable(frames, columns, config);
}

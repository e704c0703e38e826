/**
 * Scene-level access: filtered enumeration of windowed views over many logs.
 *
 * A scene is a fixed-length window (history, current, future) into one
 * log's sync table at a target iteration period. SceneViews hold indices
 * only; row data loads on demand through a shared LRU cache of open log
 * handles, so instantiating any number of scenes costs no row reads and
 * keeps at most `capacity` handles open.
 *
 * Enumeration order and the seeded shuffle are bit-identical to the native
 * library: same sort keys, same splitmix64-driven Fisher-Yates.
 */

import { readdirSync, statSync } from "node:fs";
import { join, resolve } from "node:path";

import { LogHandle, MissingModality, RecordRow, openLog, EGO_STATE } from "./logReader.js";
import {
  ABSENT,
  SyncConfig,
  SyncTable,
  buildSyncTable,
  defaultSyncName,
  readSyncTable,
} from "./sync.js";
import { deterministicShuffle } from "./splitmix.js";

export const DEFAULT_CACHE_CAPACITY = 32;

/**
 * Shared LRU cache of open log handles, keyed by resolved directory.
 *
 * Eviction closes the cached handle before a new one opens, which bounds
 * concurrently open handles at `capacity`. Data already handed out from an
 * evicted handle (records, payload views, point arrays) stays valid; the
 * backing buffers are reference-managed.
 */
export class LogCache {
  readonly capacity: number;
  readonly evictionLog: string[] = [];
  hits = 0;
  misses = 0;
  private entries = new Map<string, LogHandle>();

  constructor(capacity: number = DEFAULT_CACHE_CAPACITY) {
    if (capacity < 1) throw new RangeError("cache capacity must be >= 1");
    this.capacity = capacity;
  }

  private static key(directory: string): string {
    return resolve(directory);
  }

  get(directory: string): LogHandle {
    const key = LogCache.key(directory);
    const cached = this.entries.get(key);
    if (cached !== undefined) {
      this.hits += 1;
      this.entries.delete(key); // reinsert to move to the LRU tail
      this.entries.set(key, cached);
      return cached;
    }
    this.misses += 1;
    while (this.entries.size >= this.capacity) {
      const oldest = this.entries.keys().next().value as string;
      const old = this.entries.get(oldest)!;
      this.entries.delete(oldest);
      this.evictionLog.push(oldest);
      old.close(); // frees the slot before the new open
    }
    const handle = openLog(directory);
    this.entries.set(key, handle);
    return handle;
  }

  get size(): number {
    return this.entries.size;
  }

  has(directory: string): boolean {
    return this.entries.has(LogCache.key(directory));
  }

  clear(): void {
    for (const handle of this.entries.values()) handle.close();
    this.entries.clear();
  }
}

export const GLOBAL_CACHE = new LogCache();

// -- filters ------------------------------------------------------------------------

/**
 * What to enumerate: which splits, at what rate, with what context.
 *
 * Durations are integer microseconds; sceneFilterFromSeconds converts. The
 * scene length in frames is history//period + 1 + future//period; stride
 * defaults to that length (non-overlapping windows).
 */
export interface SceneFilter {
  splitNames: string[] | null;
  targetIterationPeriod: number; // µs
  historyDuration: number;
  futureDuration: number;
  requiredModalities: string[];
  shuffle: boolean;
  seed: number;
  stride: number | null;
}

export function makeSceneFilter(partial: Partial<SceneFilter> = {}): SceneFilter {
  const filter: SceneFilter = {
    splitNames: null,
    targetIterationPeriod: 500_000,
    historyDuration: 0,
    futureDuration: 0,
    requiredModalities: [],
    shuffle: false,
    seed: 0,
    stride: null,
    ...partial,
  };
  if (filter.targetIterationPeriod <= 0) throw new RangeError("targetIterationPeriod must be > 0");
  if (filter.historyDuration < 0 || filter.futureDuration < 0) {
    throw new RangeError("durations must be >= 0");
  }
  if (filter.stride !== null && filter.stride < 1) throw new RangeError("stride must be >= 1 frame");
  return filter;
}

export function secondsToMicros(seconds: number): number {
  return Math.round(seconds * 1_000_000);
}

export function sceneFilterFromSeconds(
  targetIterationPeriodS: number,
  historyDurationS = 0,
  futureDurationS = 0,
  partial: Partial<SceneFilter> = {}
): SceneFilter {
  return makeSceneFilter({
    ...partial,
    targetIterationPeriod: secondsToMicros(targetIterationPeriodS),
    historyDuration: secondsToMicros(historyDurationS),
    futureDuration: secondsToMicros(futureDurationS),
  });
}

export function historyFrames(filter: SceneFilter): number {
  return Math.floor(filter.historyDuration / filter.targetIterationPeriod);
}

export function futureFrames(filter: SceneFilter): number {
  return Math.floor(filter.futureDuration / filter.targetIterationPeriod);
}

export function sceneLength(filter: SceneFilter): number {
  return historyFrames(filter) + 1 + futureFrames(filter);
}

// -- scene views ----------------------------------------------------------------------

/** Shared per-log context for its scenes: indices only, no open handle. */
export interface SceneSource {
  logRef: string;
  split: string;
  logId: string;
  cache: LogCache;
  sync: SyncTable;
}

/**
 * A window of sync-table frames; iteration 0 is the current frame.
 *
 * Valid iterations run from -historyFrames through futureFrames. All
 * accessors fetch rows lazily through the source's cache; a null sync cell
 * is reported as absence (null), never an error.
 */
export class SceneView {
  constructor(
    readonly source: SceneSource,
    readonly startFrame: number,
    readonly historyFrames: number,
    readonly futureFrames: number
  ) {}

  get logRef(): string {
    return this.source.logRef;
  }

  get logId(): string {
    return this.source.logId;
  }

  get split(): string {
    return this.source.split;
  }

  get numFrames(): number {
    return this.historyFrames + 1 + this.futureFrames;
  }

  get token(): string {
    return `${this.split}/${this.logId}#${this.startFrame}`;
  }

  iterations(): number[] {
    const out: number[] = [];
    for (let i = -this.historyFrames; i <= this.futureFrames; i++) out.push(i);
    return out;
  }

  frameFor(iteration: number): number {
    if (!(-this.historyFrames <= iteration && iteration <= this.futureFrames)) {
      throw new RangeError(
        `iteration ${iteration} outside [${-this.historyFrames}, ${this.futureFrames}]`
      );
    }
    return this.startFrame + this.historyFrames + iteration;
  }

  timestampAtIteration(iteration: number): bigint {
    return this.source.sync.frameTimestamps[this.frameFor(iteration)];
  }

  handle(): LogHandle {
    return this.source.cache.get(this.source.logRef);
  }

  /** Sync-table row index of a modality at an iteration; null if absent. */
  syncIndex(modality: string, iteration: number): number | null {
    return this.source.sync.index(modality, this.frameFor(iteration));
  }

  /** The matched record at an iteration, or null when the cell is absent. */
  recordAtIteration(modality: string, iteration: number): RecordRow | null {
    const idx = this.syncIndex(modality, iteration);
    if (idx === null) return null;
    return this.handle().record(modality, idx);
  }

  getEgoStateAtIteration(iteration: number): RecordRow | null {
    return this.recordAtIteration(EGO_STATE, iteration);
  }
}

// -- enumeration -----------------------------------------------------------------------

/** [split, logId, path] for every log directory, sorted. */
export function iterLogDirs(dataRoot: string, splitNames: string[] | null = null): Array<[string, string, string]> {
  let available: string[];
  try {
    available = readdirSync(dataRoot)
      .filter((name) => !name.startsWith(".") && statSync(join(dataRoot, name)).isDirectory())
      .sort();
  } catch {
    throw new RangeError(`data root does not exist: ${dataRoot}`);
  }
  let chosen: string[];
  if (splitNames === null) {
    chosen = available;
  } else {
    const missing = splitNames.filter((s) => !available.includes(s));
    if (missing.length > 0) {
      throw new RangeError(`splits ${JSON.stringify(missing)} not in data root (available: ${JSON.stringify(available)})`);
    }
    const wanted = new Set(splitNames);
    chosen = available.filter((s) => wanted.has(s));
  }
  const out: Array<[string, string, string]> = [];
  for (const split of chosen) {
    const splitDir = join(dataRoot, split);
    for (const name of readdirSync(splitDir).sort()) {
      if (name.startsWith(".")) continue;
      const logDir = join(splitDir, name);
      if (statSync(logDir).isDirectory()) out.push([split, name, logDir]);
    }
  }
  return out;
}

function syncFor(handle: LogHandle, config: SyncConfig): SyncTable {
  const name = defaultSyncName(config);
  if (handle.syncNames().includes(name)) {
    return readSyncTable(handle, name);
  }
  return buildSyncTable(handle, config);
}

function admissibleStarts(table: SyncTable, filter: SceneFilter): number[] {
  const length = sceneLength(filter);
  const stride = filter.stride ?? length;
  const n = table.numFrames;
  const starts: number[] = [];
  for (let s = 0; s + length <= n; s += stride) starts.push(s);
  if (filter.requiredModalities.length === 0 || starts.length === 0) return starts;

  const ok = new Array<boolean>(starts.length).fill(true);
  for (const modality of [...filter.requiredModalities].sort()) {
    const column = table.columns.get(modality);
    if (column === undefined) return [];
    // prefix sums of absences allow O(1) per-window emptiness checks
    const absent = new Int32Array(column.length + 1);
    for (let i = 0; i < column.length; i++) {
      absent[i + 1] = absent[i] + (column[i] === ABSENT ? 1 : 0);
    }
    starts.forEach((start, i) => {
      if (absent[start + length] - absent[start] > 0) ok[i] = false;
    });
  }
  return starts.filter((_, i) => ok[i]);
}

/**
 * Enumerate scenes across a data root of converted logs grouped by split.
 *
 * Per log, a sync table at the filter's period is loaded if persisted or
 * built in memory (index reads only, no row data). Scenes missing any
 * required modality at any frame are dropped. Order is deterministic
 * (split, logId, start) and optionally shuffled by the filter's seed.
 */
export function getFilteredScenes(
  filter: SceneFilter,
  dataRoot: string,
  cache: LogCache | null = null
): SceneView[] {
  const logCache = cache ?? GLOBAL_CACHE;
  const scenes: SceneView[] = [];
  for (const [split, logId, logDir] of iterLogDirs(dataRoot, filter.splitNames)) {
    const handle = logCache.get(logDir);
    const reference = handle.hasModality(EGO_STATE) ? EGO_STATE : handle.modalities()[0];
    const config: SyncConfig = {
      reference,
      resamplePeriod: filter.targetIterationPeriod,
      criteria: {},
    };
    const table = syncFor(handle, config);
    const source: SceneSource = {
      logRef: logDir,
      split,
      logId,
      cache: logCache,
      sync: table,
    };
    for (const start of admissibleStarts(table, filter)) {
      scenes.push(new SceneView(source, start, historyFrames(filter), futureFrames(filter)));
    }
  }
  if (filter.shuffle) {
    deterministicShuffle(scenes, BigInt(filter.seed));
  }
  return scenes;
}

export { MissingModality };

export { COUNTERS, resetIoCounters, rowReads } from "./counters.js";
export {
  BOXES,
  CAMERA_PREFIX,
  CorruptFile,
  EGO_STATE,
  FORMAT_VERSION_KEY,
  LIDAR_PREFIX,
  LogHandle,
  LogHandleClosed,
  METADATA_KEY,
  MODALITY_KEY,
  MissingModality,
  MissingPayload,
  STREAM_SUFFIX,
  SYNC_CONFIG_KEY,
  SYNC_PREFIX,
  TRAFFIC_LIGHTS,
  cameraModality,
  isLogDir,
  lidarModality,
  openLog,
  sensorIdOf,
  timestampColumn,
} from "./logReader.js";
export type { CellValue, LogMetadata, PayloadRef, RecordRow } from "./logReader.js";
export {
  ABSENT,
  DEFAULT_CRITERIA,
  SyncTable,
  buildSyncTable,
  criteriaFor,
  defaultSyncName,
  matchTimestamp,
  matchTimestamps,
  readSyncTable,
  resampleGrid,
  syncConfigFromJson,
  windowIndices,
} from "./sync.js";
export type { MatchCriteria, MatchMode, SyncConfig } from "./sync.js";
export {
  DEFAULT_CACHE_CAPACITY,
  GLOBAL_CACHE,
  LogCache,
  SceneView,
  futureFrames,
  getFilteredScenes,
  historyFrames,
  iterLogDirs,
  makeSceneFilter,
  sceneFilterFromSeconds,
  sceneLength,
  secondsToMicros,
} from "./scene.js";
export type { SceneFilter, SceneSource } from "./scene.js";
export { deterministicShuffle, splitmix64Next } from "./splitmix.js";

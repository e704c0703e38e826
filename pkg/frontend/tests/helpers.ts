import { createHash } from "node:crypto";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

export const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");
export const DATA_ROOT = join(FIXTURES, "data_root");

export function oracle<T>(name: string): T {
  return JSON.parse(readFileSync(join(FIXTURES, "oracles", name), "utf8")) as T;
}

export function sha256(data: Uint8Array): string {
  return createHash("sha256").update(data).digest("hex");
}

/** Little-endian byte hex of an IEEE double; the bit-equality currency. */
export function f64Hex(value: number): string {
  const buf = new ArrayBuffer(8);
  new DataView(buf).setFloat64(0, value, true);
  return Array.from(new Uint8Array(buf), (b) => b.toString(16).padStart(2, "0")).join("");
}

export function bytesOf(view: { buffer: ArrayBufferLike; byteOffset: number; byteLength: number }): Uint8Array {
  return new Uint8Array(view.buffer as ArrayBuffer, view.byteOffset, view.byteLength);
}

// -- oracle shapes -------------------------------------------------------------

export interface MetaOracle {
  logs: Array<{
    path: string;
    modalities: string[];
    sync_names: string[];
    metadata_json: string;
  }>;
}

export type ColumnSpec =
  | { type: "i64"; values: Array<string | null> }
  | { type: "f64"; values: Array<string | null> }
  | { type: "str"; values: Array<string | null> }
  | { type: "bin"; values: Array<{ sha256: string; len: number } | null> };

export type ColumnsOracle = Record<
  string,
  Record<string, { num_rows: number; columns: Record<string, ColumnSpec> }>
>;

export interface PayloadRowOracle {
  codec: string;
  inline: boolean;
  path: string | null;
  encoded_sha256: string;
  encoded_len: number;
  decoded_sha256?: string;
  decoded_len?: number;
  point_count?: number;
}

export type PayloadsOracle = Record<string, Record<string, PayloadRowOracle[]>>;

export interface MatchingOracle {
  timestamps: string[];
  cases: Array<{
    query: string;
    mode: "exact" | "nearest" | "forward" | "backward";
    tolerance: number | null;
    expect: number | null;
  }>;
}

export interface SyncCells {
  frame_timestamps: string[];
  columns: Record<string, Array<number | null>>;
}

export type SyncOracle = Record<
  string,
  {
    persisted: Record<string, SyncCells & { config_json: string }>;
    built: Record<string, SyncCells>;
  }
>;

export interface SceneCaseOracle {
  name: string;
  filter: {
    split_names: string[] | null;
    target_iteration_period: number;
    history_duration: number;
    future_duration: number;
    required_modalities: string[];
    shuffle: boolean;
    seed: number;
    stride: number | null;
  };
  tokens: string[];
  details: Array<{
    token: string;
    frame_timestamps: string[];
    sync_indices: Record<string, Array<number | null>>;
  }>;
}

export interface SplitmixOracle {
  vectors: Record<string, string[]>;
  shuffles: Record<string, number[]>;
}

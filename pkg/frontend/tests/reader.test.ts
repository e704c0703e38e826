/**
 * The reader adds no semantics: every cell of every stream comes out
 * bit-identical to what the native writer put in. Int64 compares as bigint,
 * float64 by its little-endian byte image, strings verbatim, binary by
 * digest and length, and nulls stay null.
 */
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { LogHandle, openLog } from "../src/logReader.js";
import { ColumnsOracle, DATA_ROOT, MetaOracle, f64Hex, oracle, sha256 } from "./helpers.js";

const META = oracle<MetaOracle>("meta.json");
const COLUMNS = oracle<ColumnsOracle>("columns.json");

const handles = new Map<string, LogHandle>();
function handleFor(relPath: string): LogHandle {
  let h = handles.get(relPath);
  if (h === undefined) {
    h = openLog(join(DATA_ROOT, relPath));
    handles.set(relPath, h);
  }
  return h;
}

for (const log of META.logs) {
  describe(log.path, () => {
    it("exposes the modalities, sync names and metadata the writer recorded", () => {
      const handle = handleFor(log.path);
      expect(handle.modalities()).toEqual(log.modalities);
      expect(handle.syncNames()).toEqual(log.sync_names);
      expect(handle.metadata).toEqual(JSON.parse(log.metadata_json));
    });

    for (const modality of Object.keys(COLUMNS[log.path]).sort()) {
      it(`reads every ${modality} cell bit-exactly`, () => {
        const handle = handleFor(log.path);
        const want = COLUMNS[log.path][modality];
        expect(handle.numRows(modality)).toBe(want.num_rows);
        expect([...handle.columnNames(modality)].sort()).toEqual(Object.keys(want.columns).sort());

        for (let i = 0; i < want.num_rows; i++) {
          const row = handle.record(modality, i);
          for (const [name, spec] of Object.entries(want.columns)) {
            const cell = row[name];
            const expected = spec.values[i];
            if (expected === null) {
              expect(cell, `${modality}[${i}].${name}`).toBeNull();
              continue;
            }
            switch (spec.type) {
              case "i64":
                expect(cell, `${modality}[${i}].${name}`).toBe(BigInt(expected as string));
                break;
              case "f64":
                expect(f64Hex(cell as number), `${modality}[${i}].${name}`).toBe(expected);
                break;
              case "str":
                expect(cell, `${modality}[${i}].${name}`).toBe(expected);
                break;
              case "bin": {
                const spec64 = expected as { sha256: string; len: number };
                expect(cell).toBeInstanceOf(Uint8Array);
                const bytes = cell as Uint8Array;
                expect(bytes.byteLength, `${modality}[${i}].${name}`).toBe(spec64.len);
                expect(sha256(bytes), `${modality}[${i}].${name}`).toBe(spec64.sha256);
                break;
              }
            }
          }
        }
      });
    }

    it("serves the timestamp index strictly increasing", () => {
      const handle = handleFor(log.path);
      for (const modality of handle.modalities()) {
        const ts = handle.timestamps(modality);
        expect(ts.length).toBe(handle.numRows(modality));
        for (let i = 1; i < ts.length; i++) {
          expect(ts[i] > ts[i - 1]).toBe(true);
        }
      }
    });
  });
}

describe("openLog errors", () => {
  it("rejects directories without recognizable streams", () => {
    expect(() => openLog(join(DATA_ROOT, "train"))).toThrow(/no recognized modality files/);
  });

  it("rejects missing directories", () => {
    expect(() => openLog(join(DATA_ROOT, "train", "no_such_log"))).toThrow();
  });
});

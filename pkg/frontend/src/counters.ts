/**
 * Process-wide I/O counters, mirroring the native library's accounting:
 * opening a log bumps openHandles, materializing one row bumps recordReads,
 * bulk table access bumps tableReads by the row count, payload byte fetches
 * bump payloadReads, and timestamp-column / sync-table loads bump
 * indexReads. Tests use these to prove that scene enumeration stays lazy.
 */

export const COUNTERS = {
  recordReads: 0,
  tableReads: 0,
  payloadReads: 0,
  indexReads: 0,
  openHandles: 0,
  peakOpenHandles: 0,
};

export function rowReads(): number {
  return COUNTERS.recordReads + COUNTERS.tableReads;
}

export function resetIoCounters(): void {
  COUNTERS.recordReads = 0;
  COUNTERS.tableReads = 0;
  COUNTERS.payloadReads = 0;
  COUNTERS.indexReads = 0;
  COUNTERS.peakOpenHandles = COUNTERS.openHandles;
}

export function count(field: "recordReads" | "tableReads" | "payloadReads" | "indexReads", amount = 1): void {
  COUNTERS[field] += amount;
}

export function handleOpened(): void {
  COUNTERS.openHandles += 1;
  if (COUNTERS.openHandles > COUNTERS.peakOpenHandles) {
    COUNTERS.peakOpenHandles = COUNTERS.openHandles;
  }
}

export function handleClosed(): void {
  COUNTERS.openHandles -= 1;
}

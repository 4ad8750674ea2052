/** Writer for the training core's embedding-bank format.
 *
 * Binary: magic "GVRE", u32 version=1, u32 dtype=0 (f32 LE), u64 rows,
 * u32 dim, then the row-major float32 blob. The row manifest and class
 * table go to a sibling JSON file with deterministically ordered keys.
 */

import { writeFileSync } from "node:fs";

export interface RowRecord {
  row_id: number;
  class_id: number;
  kind: "frame" | "sentence";
  group_id: string;
  position: number;
  word_count?: number;
}

export interface ClassEntry {
  class_id: number;
  name: string;
  sentence_count: number;
  video_count: number;
}

const HEADER_SIZE = 24;

export function writeBankBinary(path: string, rows: Float64Array[], dim: number): void {
  const header = Buffer.alloc(HEADER_SIZE);
  header.write("GVRE", 0, "ascii");
  header.writeUInt32LE(1, 4); // version
  header.writeUInt32LE(0, 8); // dtype f32
  header.writeBigUInt64LE(BigInt(rows.length), 12);
  header.writeUInt32LE(dim, 20);
  const blob = Buffer.alloc(rows.length * dim * 4);
  rows.forEach((row, i) => {
    if (row.length !== dim) throw new Error(`row ${i} has dim ${row.length}, bank has ${dim}`);
    for (let j = 0; j < dim; j++) blob.writeFloatLE(Math.fround(row[j]), (i * dim + j) * 4);
  });
  writeFileSync(path, Buffer.concat([header, blob]));
}

/** JSON.stringify with recursively sorted object keys (stable bytes). */
export function stableJson(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(stableJson).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .filter(([, v]) => v !== undefined)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => `${JSON.stringify(k)}:${stableJson(v)}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}

export function writeManifest(path: string, dim: number, records: RowRecord[],
                              classes: ClassEntry[], configDigest: string): void {
  const doc = {
    version: 1,
    dim,
    config_digest: configDigest,
    rows: records,
    classes,
  };
  writeFileSync(path, stableJson(doc) + "\n", "utf-8");
}

/** The export job: videos + class sentence corpora -> one embedding bank.
 *
 * Videos arrive as directories of frame images (PPM); decoding actual
 * container formats is upstream's job. Unreadable videos are skipped and
 * logged; classes without a sentence file fall back to the prompt
 * templates alone, with a warning. Output is deterministic for a fixed
 * (weights, inputs, frames) triple.
 */

import { createHash } from "node:crypto";
import { existsSync, mkdirSync, readdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { ClassEntry, RowRecord, stableJson, writeBankBinary, writeManifest } from "./bank.js";
import { DualEncoder } from "./encoder.js";
import { decodePpm } from "./image.js";
import { segmentCenters } from "./sampling.js";
import { wordCount } from "./text.js";

export const DEFAULT_TEMPLATES = ["a video of a {label}"];

export interface VideoEntry {
  id: string;
  classId: number;
  className: string;
  split: "train" | "test";
  path: string;
}

export interface ExportJob {
  videos: VideoEntry[];
  textsDir: string;
  frames: number;
  weightsPath: string;
  templates: string[];
  outDir: string;
}

export interface ExportResult {
  bankPath: string;
  manifestPath: string;
  datasetPath: string;
  rows: number;
  skippedVideos: string[];
  warnings: string[];
}

export function parseVideosCsv(path: string): VideoEntry[] {
  const lines = readFileSync(path, "utf-8").split("\n").map((l) => l.trim())
    .filter((l) => l.length > 0 && !l.startsWith("#"));
  const out: VideoEntry[] = [];
  for (const line of lines) {
    const parts = line.split(",").map((p) => p.trim());
    if (parts[0] === "id") continue; // header
    if (parts.length < 5) throw new Error(`videos csv line needs 5 fields: ${line}`);
    const split = parts[3];
    if (split !== "train" && split !== "test") {
      throw new Error(`split must be train|test, got ${split}`);
    }
    out.push({ id: parts[0], classId: Number(parts[1]), className: parts[2],
               split, path: parts.slice(4).join(",") });
  }
  return out;
}

function frameFiles(videoDir: string): string[] {
  const entries = readdirSync(videoDir)
    .filter((f) => f.toLowerCase().endsWith(".ppm"))
    .sort();
  return entries.map((f) => join(videoDir, f));
}

function classSentences(textsDir: string, classId: number): string[] {
  const path = join(textsDir, `${classId}.txt`);
  if (!existsSync(path)) return [];
  return readFileSync(path, "utf-8").split("\n").map((s) => s.trim())
    .filter((s) => s.length > 0);
}

export function runExport(job: ExportJob, log: (msg: string) => void = console.error): ExportResult {
  const encoder = DualEncoder.load(job.weightsPath);
  mkdirSync(job.outDir, { recursive: true });

  const classIds = [...new Set(job.videos.map((v) => v.classId))].sort((a, b) => a - b);
  if (classIds.some((c, i) => c !== i)) {
    throw new Error(`class ids must be dense 0..C-1, got ${classIds.join(",")}`);
  }
  const classNames = new Map<number, string>();
  for (const v of job.videos) {
    const existing = classNames.get(v.classId);
    if (existing !== undefined && existing !== v.className) {
      throw new Error(`class ${v.classId} has two names: ${existing} vs ${v.className}`);
    }
    classNames.set(v.classId, v.className);
  }

  const rows: Float64Array[] = [];
  const records: RowRecord[] = [];
  const skippedVideos: string[] = [];
  const warnings: string[] = [];
  const videoCount = new Map<number, number>();
  const kept: VideoEntry[] = [];

  for (const video of job.videos) {
    let frameRows: Float64Array[];
    try {
      const files = frameFiles(video.path);
      if (files.length === 0) throw new Error("no readable frames");
      const picks = segmentCenters(files.length, job.frames);
      frameRows = picks.map((i) => encoder.embedImage(decodePpm(files[i])));
    } catch (err) {
      skippedVideos.push(video.id);
      log(`skipping unreadable video ${video.id}: ${err}`);
      continue;
    }
    frameRows.forEach((row, position) => {
      records.push({ row_id: records.length, class_id: video.classId, kind: "frame",
                     group_id: video.id, position });
      rows.push(row);
    });
    videoCount.set(video.classId, (videoCount.get(video.classId) ?? 0) + 1);
    kept.push(video);
  }

  const sentenceCount = new Map<number, number>();
  for (const classId of classIds) {
    const label = classNames.get(classId) ?? `class-${classId}`;
    const crawled = classSentences(job.textsDir, classId);
    if (crawled.length === 0) {
      warnings.push(`class ${classId} (${label}) has no crawled sentences; prompts only`);
      log(`warning: ${warnings[warnings.length - 1]}`);
    }
    let position = 0;
    for (const sentence of crawled) {
      records.push({ row_id: records.length, class_id: classId, kind: "sentence",
                     group_id: `text/c${classId}s${position}`, position,
                     word_count: wordCount(sentence) });
      rows.push(encoder.embedText(sentence));
      position += 1;
    }
    job.templates.forEach((template, t) => {
      const sentence = template.replaceAll("{label}", label);
      records.push({ row_id: records.length, class_id: classId, kind: "sentence",
                     group_id: `prompt/c${classId}s${t}`, position,
                     word_count: wordCount(sentence) });
      rows.push(encoder.embedText(sentence));
      position += 1;
    });
    sentenceCount.set(classId, position);
  }

  const classes: ClassEntry[] = classIds.map((c) => ({
    class_id: c,
    name: classNames.get(c) ?? `class-${c}`,
    sentence_count: sentenceCount.get(c) ?? 0,
    video_count: videoCount.get(c) ?? 0,
  }));

  const jobConfig = {
    frames: job.frames,
    templates: job.templates,
    weights_digest: encoder.weightsDigest,
    videos: job.videos.map((v) => ({ id: v.id, class_id: v.classId, split: v.split })),
  };
  const configDigest = createHash("sha256").update(stableJson(jobConfig)).digest("hex");

  const bankPath = join(job.outDir, "bank.gvre");
  const manifestPath = join(job.outDir, "bank.manifest.json");
  const datasetPath = join(job.outDir, "dataset.json");
  writeBankBinary(bankPath, rows, encoder.dim);
  writeManifest(manifestPath, encoder.dim, records, classes, configDigest);

  const dataset = {
    classes: classIds.map((c) => ({ class_id: c, name: classNames.get(c) ?? `class-${c}` })),
    videos: kept.map((v) => ({ id: v.id, class_id: v.classId, split: v.split })),
  };
  writeFileSync(datasetPath, stableJson(dataset) + "\n", "utf-8");
  writeFileSync(join(job.outDir, "export_manifest.json"), stableJson({
    config_digest: configDigest,
    weights_digest: encoder.weightsDigest,
    rows: rows.length,
    skipped_videos: skippedVideos,
    warnings,
  }) + "\n", "utf-8");

  return { bankPath, manifestPath, datasetPath, rows: rows.length, skippedVideos, warnings };
}

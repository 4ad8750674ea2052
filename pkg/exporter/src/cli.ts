#!/usr/bin/env node
/** Exporter CLI.
 *
 *   gvr-export make-weights --dim 32 --seed 0 --out weights.json
 *   gvr-export export --videos videos.csv --texts textdir --frames 8 \
 *       --weights weights.json [--templates templates.json] --out outdir
 */

import { readFileSync } from "node:fs";

import { makeWeights, saveWeights } from "./encoder.js";
import { DEFAULT_TEMPLATES, parseVideosCsv, runExport } from "./export.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`malformed flag pair near ${key}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return flags;
}

function need(flags: Map<string, string>, ...names: string[]): string[] {
  const missing = names.filter((n) => !flags.has(n));
  if (missing.length > 0) {
    throw new Error(`missing required flags: ${missing.map((m) => `--${m}`).join(", ")}`);
  }
  return names.map((n) => flags.get(n)!);
}

function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (command === "make-weights") {
    const flags = parseFlags(rest);
    const [out] = need(flags, "out");
    const dim = Number(flags.get("dim") ?? 32);
    const seed = Number(flags.get("seed") ?? 0);
    const grid = Number(flags.get("patch-grid") ?? 4);
    const buckets = Number(flags.get("text-buckets") ?? 256);
    saveWeights(makeWeights(dim, seed, grid, buckets), out);
    console.log(`wrote dual-encoder weights: dim=${dim} seed=${seed} -> ${out}`);
    return 0;
  }
  if (command === "export") {
    const flags = parseFlags(rest);
    const [videosCsv, textsDir, weightsPath, outDir] = need(flags, "videos", "texts", "weights", "out");
    const frames = Number(flags.get("frames") ?? 8);
    const templates = flags.has("templates")
      ? (JSON.parse(readFileSync(flags.get("templates")!, "utf-8")) as string[])
      : DEFAULT_TEMPLATES;
    const result = runExport({
      videos: parseVideosCsv(videosCsv),
      textsDir,
      frames,
      weightsPath,
      templates,
      outDir,
    });
    console.log(`exported ${result.rows} rows -> ${result.bankPath}`
      + (result.skippedVideos.length ? ` (skipped ${result.skippedVideos.length} videos)` : ""));
    return 0;
  }
  console.error("usage: gvr-export <make-weights|export> [flags]");
  return 2;
}

try {
  process.exit(main(process.argv.slice(2)));
} catch (err) {
  console.error(`gvr-export: error: ${err instanceof Error ? err.message : err}`);
  process.exit(1);
}

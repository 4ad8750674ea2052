/** The local image-text dual encoder.
 *
 * Weights live in a JSON file (the "model identifier"): two projection
 * matrices from the raw branch features into the shared base-embedding
 * space. `makeWeights` materializes a seeded random instance of the format;
 * any file with the same schema works (e.g. distilled from a larger model).
 * Embeddings are emitted raw - normalization is the training core's job.
 */

import { createHash } from "node:crypto";
import { readFileSync, writeFileSync } from "node:fs";

import { RgbImage, centerCrop, patchFeatures, resize } from "./image.js";
import { Rng } from "./prng.js";
import { hashedFeatures, TOKEN_LIMIT, tokenize } from "./text.js";

export const RESIZE_SIDE = 256;
export const CROP_SIDE = 224;

export interface EncoderWeights {
  format: "gvr-dual-encoder";
  version: 1;
  dim: number;
  patchGrid: number;
  textBuckets: number;
  /** [patchGrid^2 * 3][dim], row-major */
  imageProjection: number[][];
  /** [textBuckets][dim], row-major */
  textProjection: number[][];
}

export function makeWeights(dim: number, seed: number, patchGrid = 4,
                            textBuckets = 256): EncoderWeights {
  const rng = new Rng(seed);
  const imgRows = patchGrid * patchGrid * 3;
  const scale = 1.0 / Math.sqrt(imgRows);
  const imageProjection = Array.from({ length: imgRows }, () =>
    Array.from({ length: dim }, () => rng.gaussian() * scale));
  const tScale = 1.0 / Math.sqrt(textBuckets);
  const textProjection = Array.from({ length: textBuckets }, () =>
    Array.from({ length: dim }, () => rng.gaussian() * tScale));
  return {
    format: "gvr-dual-encoder",
    version: 1,
    dim,
    patchGrid,
    textBuckets,
    imageProjection,
    textProjection,
  };
}

export function saveWeights(weights: EncoderWeights, path: string): void {
  writeFileSync(path, JSON.stringify(weights) + "\n", "utf-8");
}

export class DualEncoder {
  readonly weights: EncoderWeights;
  readonly weightsDigest: string;

  constructor(weights: EncoderWeights, digest: string) {
    this.weights = weights;
    this.weightsDigest = digest;
  }

  static load(path: string): DualEncoder {
    const raw = readFileSync(path);
    const digest = createHash("sha256").update(raw).digest("hex");
    const weights = JSON.parse(raw.toString("utf-8")) as EncoderWeights;
    if (weights.format !== "gvr-dual-encoder" || weights.version !== 1) {
      throw new Error(`${path}: not a dual-encoder weights file`);
    }
    return new DualEncoder(weights, digest);
  }

  get dim(): number {
    return this.weights.dim;
  }

  /** Inference preprocessing (resize then center crop), patch features,
   * projection. */
  embedImage(img: RgbImage): Float64Array {
    const prepared = centerCrop(resize(img, RESIZE_SIDE), CROP_SIDE);
    const feats = patchFeatures(prepared, this.weights.patchGrid);
    return this.project(feats, this.weights.imageProjection);
  }

  embedText(sentence: string): Float64Array {
    const tokens = tokenize(sentence, TOKEN_LIMIT);
    const feats = hashedFeatures(tokens, this.weights.textBuckets);
    return this.project(feats, this.weights.textProjection);
  }

  private project(feats: Float64Array, matrix: number[][]): Float64Array {
    const out = new Float64Array(this.weights.dim);
    for (let i = 0; i < feats.length; i++) {
      const f = feats[i];
      if (f === 0) continue;
      const row = matrix[i];
      for (let j = 0; j < out.length; j++) out[j] += f * row[j];
    }
    return out;
  }
}

import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import {
  centerCrop,
  decodePpm,
  encodePpm,
  patchFeatures,
  resize,
  RgbImage,
  UnreadableFrameError,
} from "../src/image.js";
import { segmentCenters } from "../src/sampling.js";
import { Rng } from "../src/prng.js";

function noiseImage(seed: number, w: number, h: number): RgbImage {
  const rng = new Rng(seed);
  const data = new Float64Array(w * h * 3);
  for (let i = 0; i < data.length; i++) data[i] = Math.round(rng.next() * 255) / 255;
  return { width: w, height: h, data };
}

describe("ppm", () => {
  it("round trips", () => {
    const dir = mkdtempSync(join(tmpdir(), "ppm-"));
    const img = noiseImage(1, 20, 12);
    const path = join(dir, "f.ppm");
    writeFileSync(path, encodePpm(img));
    const back = decodePpm(path);
    expect(back.width).toBe(20);
    expect(back.height).toBe(12);
    expect([...back.data]).toEqual([...img.data]);
  });

  it("rejects wrong magic and truncation", () => {
    const dir = mkdtempSync(join(tmpdir(), "ppm-"));
    const bad = join(dir, "bad.ppm");
    writeFileSync(bad, Buffer.from("P5\n2 2\n255\nxxxx"));
    expect(() => decodePpm(bad)).toThrow(UnreadableFrameError);
    const short = join(dir, "short.ppm");
    writeFileSync(short, encodePpm(noiseImage(2, 4, 4)).subarray(0, 20));
    expect(() => decodePpm(short)).toThrow(UnreadableFrameError);
  });
});

describe("geometry", () => {
  it("resizes then crops to the inference window", () => {
    const img = noiseImage(3, 100, 60);
    const prepared = centerCrop(resize(img, 256), 224);
    expect(prepared.width).toBe(224);
    expect(prepared.height).toBe(224);
  });

  it("constant image keeps its value through resize and patches", () => {
    const img: RgbImage = { width: 30, height: 30, data: new Float64Array(30 * 30 * 3).fill(0.5) };
    const feats = patchFeatures(centerCrop(resize(img, 256), 224), 4);
    for (const v of feats) expect(v).toBeCloseTo(0.5, 10);
  });
});

describe("segment sampling", () => {
  it("takes segment centers", () => {
    expect(segmentCenters(16, 8)).toEqual([1, 3, 5, 7, 9, 11, 13, 15]);
  });

  it("repeats frames when the video is short", () => {
    const picks = segmentCenters(3, 8);
    expect(picks.length).toBe(8);
    expect(Math.max(...picks)).toBeLessThan(3);
  });

  it("rejects empty videos", () => {
    expect(() => segmentCenters(0, 8)).toThrow();
  });
});

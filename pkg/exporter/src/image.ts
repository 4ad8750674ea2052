/** Frame image handling: PPM (P6, 8-bit) decode, bilinear resize,
 * center crop, and the patch-grid feature extraction the image branch
 * of the dual encoder consumes. */

import { readFileSync } from "node:fs";

export interface RgbImage {
  width: number;
  height: number;
  data: Float64Array; // RGB interleaved, [0, 1]
}

export class UnreadableFrameError extends Error {}

/** Decode a binary PPM (P6) file with 8-bit samples. */
export function decodePpm(path: string): RgbImage {
  let raw: Buffer;
  try {
    raw = readFileSync(path);
  } catch (err) {
    throw new UnreadableFrameError(`cannot read ${path}: ${err}`);
  }
  if (raw.length < 2 || raw.toString("ascii", 0, 2) !== "P6") {
    throw new UnreadableFrameError(`${path}: not a P6 ppm file`);
  }
  // header: magic, width, height, maxval, single whitespace, then samples
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < raw.length && /\s/.test(String.fromCharCode(raw[pos]))) pos += 1;
    if (pos < raw.length && String.fromCharCode(raw[pos]) === "#") {
      while (pos < raw.length && raw[pos] !== 0x0a) pos += 1;
      continue;
    }
    let start = pos;
    while (pos < raw.length && !/\s/.test(String.fromCharCode(raw[pos]))) pos += 1;
    const field = Number(raw.toString("ascii", start, pos));
    if (!Number.isFinite(field)) throw new UnreadableFrameError(`${path}: bad ppm header`);
    fields.push(field);
  }
  pos += 1; // the single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new UnreadableFrameError(`${path}: only 8-bit ppm supported`);
  const expected = width * height * 3;
  if (raw.length - pos < expected) {
    throw new UnreadableFrameError(`${path}: truncated pixel data`);
  }
  const data = new Float64Array(expected);
  for (let i = 0; i < expected; i++) data[i] = raw[pos + i] / 255.0;
  return { width, height, data };
}

export function encodePpm(img: RgbImage): Buffer {
  const header = Buffer.from(`P6\n${img.width} ${img.height}\n255\n`, "ascii");
  const body = Buffer.alloc(img.width * img.height * 3);
  for (let i = 0; i < body.length; i++) {
    body[i] = Math.max(0, Math.min(255, Math.round(img.data[i] * 255)));
  }
  return Buffer.concat([header, body]);
}

function sample(img: RgbImage, x: number, y: number, c: number): number {
  const xi = Math.min(img.width - 1, Math.max(0, x));
  const yi = Math.min(img.height - 1, Math.max(0, y));
  return img.data[(yi * img.width + xi) * 3 + c];
}

/** Bilinear resize to exactly side x side. */
export function resize(img: RgbImage, side: number): RgbImage {
  const out = new Float64Array(side * side * 3);
  const sx = img.width / side;
  const sy = img.height / side;
  for (let y = 0; y < side; y++) {
    const fy = (y + 0.5) * sy - 0.5;
    const y0 = Math.floor(fy);
    const wy = fy - y0;
    for (let x = 0; x < side; x++) {
      const fx = (x + 0.5) * sx - 0.5;
      const x0 = Math.floor(fx);
      const wx = fx - x0;
      for (let c = 0; c < 3; c++) {
        const top = sample(img, x0, y0, c) * (1 - wx) + sample(img, x0 + 1, y0, c) * wx;
        const bottom = sample(img, x0, y0 + 1, c) * (1 - wx) + sample(img, x0 + 1, y0 + 1, c) * wx;
        out[(y * side + x) * 3 + c] = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return { width: side, height: side, data: out };
}

export function centerCrop(img: RgbImage, side: number): RgbImage {
  const ox = Math.floor((img.width - side) / 2);
  const oy = Math.floor((img.height - side) / 2);
  const out = new Float64Array(side * side * 3);
  for (let y = 0; y < side; y++) {
    for (let x = 0; x < side; x++) {
      for (let c = 0; c < 3; c++) {
        out[(y * side + x) * 3 + c] = img.data[((y + oy) * img.width + (x + ox)) * 3 + c];
      }
    }
  }
  return { width: side, height: side, data: out };
}

/** Mean RGB per cell of a grid x grid partition: the image branch's raw
 * feature vector (length grid*grid*3). */
export function patchFeatures(img: RgbImage, grid: number): Float64Array {
  const out = new Float64Array(grid * grid * 3);
  const counts = new Float64Array(grid * grid);
  for (let y = 0; y < img.height; y++) {
    const gy = Math.min(grid - 1, Math.floor((y * grid) / img.height));
    for (let x = 0; x < img.width; x++) {
      const gx = Math.min(grid - 1, Math.floor((x * grid) / img.width));
      const cell = gy * grid + gx;
      counts[cell] += 1;
      for (let c = 0; c < 3; c++) {
        out[cell * 3 + c] += img.data[(y * img.width + x) * 3 + c];
      }
    }
  }
  for (let cell = 0; cell < grid * grid; cell++) {
    for (let c = 0; c < 3; c++) out[cell * 3 + c] /= counts[cell];
  }
  return out;
}

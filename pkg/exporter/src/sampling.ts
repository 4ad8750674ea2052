/** Segment-based frame sampling: one frame from the center of each of the
 * F equal temporal segments. Videos shorter than F repeat frames, keeping
 * the per-video frame count uniform across the whole job. */

export function segmentCenters(frameCount: number, segments: number): number[] {
  if (frameCount < 1) throw new Error("a video needs at least one frame");
  const out: number[] = [];
  for (let i = 0; i < segments; i++) {
    out.push(Math.min(frameCount - 1, Math.floor(((i + 0.5) * frameCount) / segments)));
  }
  return out;
}

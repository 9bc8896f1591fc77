import type { EdgeSample } from './types.js';

/** A polyline run of consecutive same-visibility samples on one box edge.
 * Pixel coordinates are passed through from the server untouched, so the
 * overlay is pixel-exact with the engine's projection. */
export interface OverlayRun {
  edge: number;
  visible: boolean;
  points: [number, number][];
}

/** Group the server's edge samples into drawable runs: one run per
 * maximal stretch of consecutive samples on the same edge with the same
 * visibility flag. Sample order within an edge is preserved. */
export function buildRuns(samples: EdgeSample[]): OverlayRun[] {
  const runs: OverlayRun[] = [];
  let current: OverlayRun | null = null;
  for (const s of samples) {
    if (current !== null && current.edge === s.edge && current.visible === s.visible) {
      current.points.push([s.pixel[0], s.pixel[1]]);
    } else {
      current = { edge: s.edge, visible: s.visible, points: [[s.pixel[0], s.pixel[1]]] };
      runs.push(current);
    }
  }
  return runs;
}

/** Runs to draw under the occlusion toggle: hidden runs are omitted when
 * `showHidden` is off, otherwise kept (the renderer draws them dashed). */
export function runsToDraw(runs: OverlayRun[], showHidden: boolean): OverlayRun[] {
  return showHidden ? runs : runs.filter((r) => r.visible);
}

/** Flat list of (pixel, visible) pairs reconstructed from runs; used to
 * verify the overlay agrees with the server response exactly. */
export function flattenRuns(runs: OverlayRun[]): EdgeSample[] {
  const out: EdgeSample[] = [];
  for (const r of runs) {
    for (const p of r.points) {
      out.push({ edge: r.edge, pixel: [p[0], p[1]], visible: r.visible });
    }
  }
  return out;
}

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  runs: OverlayRun[],
  showHidden: boolean,
  scale: number = 1,
): void {
  for (const run of runsToDraw(runs, showHidden)) {
    if (run.points.length < 2) continue;
    ctx.beginPath();
    ctx.setLineDash(run.visible ? [] : [4, 4]);
    ctx.strokeStyle = run.visible ? '#00e5ff' : 'rgba(0,229,255,0.45)';
    ctx.lineWidth = 1.5;
    ctx.moveTo(run.points[0][0] * scale, run.points[0][1] * scale);
    for (const [x, y] of run.points.slice(1)) {
      ctx.lineTo(x * scale, y * scale);
    }
    ctx.stroke();
  }
  ctx.setLineDash([]);
}

/**
 * 10-channel sparkline strip of the live command telemetry.
 * Pure data preparation is separated from canvas drawing so the replay
 * fixture test can check the polyline values directly.
 */

import type { TelemetryRing } from "./state.js";

export const CHANNEL_NAMES = [
  "fwd", "lat", "turn", "h.yaw", "h.pitch", "h.roll", "height", "speed", "exprA", "exprB",
];

export interface Polyline {
  label: string;
  points: Array<[number, number]>; // x in [0,1] (time), y in [-1,1] (value)
}

export function sparklineData(ring: TelemetryRing): Polyline[] {
  const samples = ring.samples();
  const n = samples.length;
  return CHANNEL_NAMES.map((label, idx) => ({
    label,
    points: samples.map((s, i): [number, number] => [
      n > 1 ? i / (n - 1) : 0,
      s.c[idx] ?? 0,
    ]),
  }));
}

export function drawSparklines(
  ctx: CanvasRenderingContext2D,
  ring: TelemetryRing,
  width: number,
  height: number,
): void {
  const lines = sparklineData(ring);
  const rowH = height / lines.length;
  ctx.clearRect(0, 0, width, height);
  ctx.font = "9px monospace";
  lines.forEach((line, row) => {
    const top = row * rowH;
    ctx.strokeStyle = "#2a3b4c";
    ctx.beginPath();
    ctx.moveTo(0, top + rowH / 2);
    ctx.lineTo(width, top + rowH / 2);
    ctx.stroke();
    ctx.strokeStyle = "#53d1b6";
    ctx.beginPath();
    line.points.forEach(([x, v], i) => {
      const px = x * (width - 40) + 36;
      const py = top + rowH / 2 - v * (rowH * 0.45);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
    ctx.fillStyle = "#9fb3c8";
    ctx.fillText(line.label, 2, top + rowH / 2 + 3);
  });
}

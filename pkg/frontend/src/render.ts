/**
 * Top-down arena rendering: robot footprint with heading wedge and
 * head-gaze ray, human marker, event badge, mode indicator. Every drawn
 * quantity comes from the latest (interpolated) world snapshot.
 */

import { arenaToCanvas, ARENA_HALF } from "./input.js";
import { interpolated, yawOf, type ViewState } from "./state.js";

export function drawArena(
  ctx: CanvasRenderingContext2D,
  state: ViewState,
  size: number,
  nowMs: number,
): void {
  ctx.clearRect(0, 0, size, size);

  // floor + grid
  ctx.fillStyle = "#101820";
  ctx.fillRect(0, 0, size, size);
  ctx.strokeStyle = "#1d2935";
  ctx.lineWidth = 1;
  for (let g = -3; g <= 3; g++) {
    const [px] = arenaToCanvas(g, 0, size);
    const [, py] = arenaToCanvas(0, g, size);
    ctx.beginPath();
    ctx.moveTo(px, 0);
    ctx.lineTo(px, size);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(0, py);
    ctx.lineTo(size, py);
    ctx.stroke();
  }
  ctx.strokeStyle = "#31475e";
  ctx.strokeRect(0.5, 0.5, size - 1, size - 1);

  const world = interpolated(state, nowMs);
  if (!world) {
    ctx.fillStyle = "#9fb3c8";
    ctx.font = "14px monospace";
    ctx.fillText("waiting for world...", size / 2 - 70, size / 2);
    return;
  }

  const scale = size / (2 * ARENA_HALF);
  const yaw = yawOf(world.robot);
  const [rx, ry] = arenaToCanvas(world.robot.x, world.robot.y, size);

  // robot footprint + heading wedge
  ctx.fillStyle = world.mode === "STANDING" ? "#3c6fa8" : "#53a8d1";
  ctx.beginPath();
  ctx.arc(rx, ry, 0.25 * scale, 0, Math.PI * 2);
  ctx.fill();
  ctx.fillStyle = "#d7ecff";
  ctx.beginPath();
  ctx.moveTo(rx + Math.cos(-yaw) * 0.32 * scale, ry + Math.sin(-yaw) * 0.32 * scale);
  ctx.lineTo(rx + Math.cos(-yaw + 2.5) * 0.18 * scale, ry + Math.sin(-yaw + 2.5) * 0.18 * scale);
  ctx.lineTo(rx + Math.cos(-yaw - 2.5) * 0.18 * scale, ry + Math.sin(-yaw - 2.5) * 0.18 * scale);
  ctx.closePath();
  ctx.fill();

  // head-gaze ray (base yaw + head yaw offset)
  const headYaw = yaw + (world.head[0] ?? 0);
  ctx.strokeStyle = "#ffd479";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(rx, ry);
  ctx.lineTo(rx + Math.cos(-headYaw) * 0.9 * scale, ry + Math.sin(-headYaw) * 0.9 * scale);
  ctx.stroke();

  // human marker
  const [hx, hy] = arenaToCanvas(world.human.x, world.human.y, size);
  ctx.fillStyle = "#ff7d69";
  ctx.beginPath();
  ctx.arc(hx, hy, 0.14 * scale, 0, Math.PI * 2);
  ctx.fill();
  ctx.strokeStyle = "#ffb3a6";
  ctx.beginPath();
  ctx.arc(hx, hy, 0.2 * scale, 0, Math.PI * 2);
  ctx.stroke();

  // mode indicator + event badge
  ctx.font = "12px monospace";
  ctx.fillStyle = "#9fb3c8";
  ctx.fillText(`mode: ${world.mode}`, 8, 16);
  if (world.active_event !== "NONE") {
    ctx.fillStyle = "#ffd479";
    ctx.fillText(`event: ${world.active_event}`, 8, 32);
  }
  if (state.eventFlash && state.eventFlash.until > nowMs) {
    ctx.fillStyle = "#53d1b6";
    ctx.fillText(state.eventFlash.name, rx + 14, ry - 14);
  }
}

export function drawDisconnectOverlay(ctx: CanvasRenderingContext2D, size: number): void {
  ctx.fillStyle = "rgba(8, 12, 16, 0.72)";
  ctx.fillRect(0, 0, size, size);
  ctx.fillStyle = "#ffb3a6";
  ctx.font = "15px monospace";
  ctx.fillText("disconnected - press reconnect", size / 2 - 110, size / 2);
}

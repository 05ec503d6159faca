/**
 * Client-side view state. The UI holds no simulation logic: everything
 * rendered derives from received world/commands messages, so the server
 * and the view cannot disagree about state.
 */

import type { CommandsMsg, StatusMsg, WorldMsg } from "./protocol.js";

export const TELEMETRY_SECONDS = 10;
export const RATE_HZ = 50;
export const N_CHANNELS = 10;

export interface TelemetrySample {
  t: number;
  c: number[];
}

export class TelemetryRing {
  /** Bounded ring of the last TELEMETRY_SECONDS of command frames. */
  readonly capacity: number;
  private buf: TelemetrySample[] = [];

  constructor(capacity = TELEMETRY_SECONDS * RATE_HZ) {
    this.capacity = capacity;
  }

  push(sample: TelemetrySample): void {
    this.buf.push(sample);
    if (this.buf.length > this.capacity) {
      this.buf.splice(0, this.buf.length - this.capacity);
    }
  }

  get length(): number {
    return this.buf.length;
  }

  samples(): readonly TelemetrySample[] {
    return this.buf;
  }

  channel(i: number): number[] {
    return this.buf.map((s) => s.c[i] ?? 0);
  }
}

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface ViewState {
  connection: ConnectionStatus;
  world: WorldMsg | null;
  prevWorld: WorldMsg | null;
  lastWorldAt: number; // performance.now() ms of the latest snapshot
  telemetry: TelemetryRing;
  moods: string[];
  activeMood: string;
  status: StatusMsg | null;
  eventFlash: { name: string; until: number } | null;
  schemaViolations: number;
}

export function initialViewState(): ViewState {
  return {
    connection: "connecting",
    world: null,
    prevWorld: null,
    lastWorldAt: 0,
    telemetry: new TelemetryRing(),
    moods: [],
    activeMood: "default",
    status: null,
    eventFlash: null,
    schemaViolations: 0,
  };
}

export function applyWorld(state: ViewState, msg: WorldMsg, nowMs: number): void {
  state.prevWorld = state.world;
  state.world = msg;
  state.lastWorldAt = nowMs;
}

export function applyCommands(state: ViewState, msg: CommandsMsg): void {
  state.telemetry.push({ t: msg.t, c: msg.c });
}

/**
 * Interpolated robot/human x-y for rendering between 50 Hz snapshots;
 * alpha in [0, 1] from elapsed wall time (60 fps target).
 */
export function interpolated(state: ViewState, nowMs: number): WorldMsg | null {
  const cur = state.world;
  const prev = state.prevWorld;
  if (!cur) return null;
  if (!prev || prev.t >= cur.t) return cur;
  const alpha = Math.min(1, (nowMs - state.lastWorldAt) / (1000 / RATE_HZ));
  const lerp = (a: number, b: number) => a + (b - a) * alpha;
  return {
    ...cur,
    robot: { ...cur.robot, x: lerp(prev.robot.x, cur.robot.x), y: lerp(prev.robot.y, cur.robot.y) },
    human: { ...cur.human, x: lerp(prev.human.x, cur.human.x), y: lerp(prev.human.y, cur.human.y) },
  };
}

/** Heading angle of the robot's +x axis from its quaternion (yaw-only base). */
export function yawOf(p: { qw: number; qx: number; qy: number; qz: number }): number {
  const fx = 1 - 2 * (p.qy * p.qy + p.qz * p.qz);
  const fy = 2 * (p.qx * p.qy + p.qw * p.qz);
  return Math.atan2(fy, fx);
}

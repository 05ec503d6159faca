/**
 * Wire protocol: single-line JSON messages, schema version 1.
 * Every outbound message is validated before sending and every inbound
 * message before use, so the UI can never ship or render malformed data.
 */

export const SCHEMA_VERSION = 1;

export interface PoseFields {
  x: number;
  y: number;
  z: number;
  qw: number;
  qx: number;
  qy: number;
  qz: number;
}

export interface HumanPoseMsg extends PoseFields {
  type: "human_pose";
  t: number;
}

export interface SetMoodMsg {
  type: "set_mood";
  mood: string;
}

export interface ResetMsg {
  type: "reset";
  seed: number;
}

export type ClientMsg = HumanPoseMsg | SetMoodMsg | ResetMsg;

export interface HelloMsg {
  type: "hello";
  schema: number;
  moods: string[];
  profile: string;
  rate_hz: number;
  lockstep: boolean;
}

export interface WorldMsg {
  type: "world";
  t: number;
  robot: PoseFields;
  head: [number, number, number];
  mode: "WALKING" | "STANDING";
  active_event: string;
  human: PoseFields;
}

export interface CommandsMsg {
  type: "commands";
  t: number;
  c: number[];
}

export interface EventMsg {
  type: "event";
  name: string;
}

export interface StatusMsg {
  type: "status";
  model: string;
  profile: string;
  latency_ms: number;
}

export interface ErrorMsg {
  type: "error";
  reason: string;
}

export type ServerMsg = HelloMsg | WorldMsg | CommandsMsg | EventMsg | StatusMsg | ErrorMsg;

const finite = (v: unknown): v is number => typeof v === "number" && Number.isFinite(v);

function isPose(v: unknown): v is PoseFields {
  if (typeof v !== "object" || v === null) return false;
  const p = v as Record<string, unknown>;
  return ["x", "y", "z", "qw", "qx", "qy", "qz"].every((k) => finite(p[k]));
}

export function validateClientMsg(m: unknown): m is ClientMsg {
  if (typeof m !== "object" || m === null) return false;
  const o = m as Record<string, unknown>;
  switch (o.type) {
    case "human_pose":
      return finite(o.t) && isPose(o);
    case "set_mood":
      return typeof o.mood === "string" && o.mood.length > 0;
    case "reset":
      return typeof o.seed === "number" && Number.isInteger(o.seed);
    default:
      return false;
  }
}

export function validateServerMsg(m: unknown): m is ServerMsg {
  if (typeof m !== "object" || m === null) return false;
  const o = m as Record<string, unknown>;
  switch (o.type) {
    case "hello":
      return (
        finite(o.schema) &&
        Array.isArray(o.moods) &&
        o.moods.every((x) => typeof x === "string") &&
        typeof o.profile === "string" &&
        finite(o.rate_hz) &&
        typeof o.lockstep === "boolean"
      );
    case "world":
      return (
        finite(o.t) &&
        isPose(o.robot) &&
        isPose(o.human) &&
        Array.isArray(o.head) &&
        o.head.length === 3 &&
        o.head.every(finite) &&
        (o.mode === "WALKING" || o.mode === "STANDING") &&
        typeof o.active_event === "string"
      );
    case "commands":
      return (
        finite(o.t) &&
        Array.isArray(o.c) &&
        o.c.length === 10 &&
        o.c.every((v) => finite(v) && Math.abs(v) <= 1.0 + 1e-9)
      );
    case "event":
      return typeof o.name === "string";
    case "status":
      return typeof o.model === "string" && typeof o.profile === "string" && finite(o.latency_ms);
    case "error":
      return typeof o.reason === "string";
    default:
      return false;
  }
}

/** Canonical single-line JSON form (sorted keys), matching the server. */
export function canonical(obj: object): string {
  const sort = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(sort);
    if (typeof v === "object" && v !== null) {
      const out: Record<string, unknown> = {};
      for (const k of Object.keys(v as object).sort()) {
        out[k] = sort((v as Record<string, unknown>)[k]);
      }
      return out;
    }
    return v;
  };
  return JSON.stringify(sort(obj));
}

export function parseServerMsg(line: string): ServerMsg {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    throw new Error(`not valid JSON: ${line.slice(0, 80)}`);
  }
  if (!validateServerMsg(obj)) {
    throw new Error(`schema violation: ${line.slice(0, 120)}`);
  }
  return obj;
}

export function serializeClientMsg(msg: ClientMsg): string {
  if (!validateClientMsg(msg)) {
    throw new Error(`refusing to send malformed message: ${JSON.stringify(msg)}`);
  }
  return canonical(msg);
}

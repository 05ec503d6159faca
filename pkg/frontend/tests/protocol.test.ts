import { describe, expect, it } from "vitest";

import {
  canonical,
  parseServerMsg,
  serializeClientMsg,
  validateClientMsg,
  validateServerMsg,
} from "../src/protocol.js";

const WORLD_LINE =
  '{"active_event":"NONE","head":[0.0,0.1,-0.05],"human":{"qw":1.0,"qx":0.0,"qy":0.0,' +
  '"qz":0.0,"x":2.0,"y":0.5,"z":1.7},"mode":"WALKING","robot":{"qw":1.0,"qx":0.0,' +
  '"qy":0.0,"qz":0.0,"x":0.0,"y":0.0,"z":0.35},"t":1.02,"type":"world"}';

describe("server message parsing", () => {
  it("accepts a canonical world message and round-trips it", () => {
    const msg = parseServerMsg(WORLD_LINE);
    expect(msg.type).toBe("world");
    // round-trip: canonical(parse(m)) preserves structure
    expect(JSON.parse(canonical(msg))).toEqual(JSON.parse(WORLD_LINE));
  });

  it("accepts commands/hello/status/event/error", () => {
    expect(parseServerMsg('{"c":[0,0,0,0,0,0,0,0,0,0],"t":0.5,"type":"commands"}').type).toBe(
      "commands",
    );
    expect(
      parseServerMsg(
        '{"lockstep":false,"moods":["default"],"profile":"bipod","rate_hz":50.0,' +
          '"schema":1,"type":"hello"}',
      ).type,
    ).toBe("hello");
    expect(
      parseServerMsg('{"latency_ms":3.2,"model":"happy","profile":"bipod","type":"status"}').type,
    ).toBe("status");
    expect(parseServerMsg('{"name":"DANCE","type":"event"}').type).toBe("event");
    expect(parseServerMsg('{"reason":"nope","type":"error"}').type).toBe("error");
  });

  it("rejects malformed payloads", () => {
    expect(() => parseServerMsg("garbage")).toThrow(/JSON/);
    expect(() => parseServerMsg('{"type":"world","t":1}')).toThrow(/schema/);
    expect(() => parseServerMsg('{"type":"commands","t":1,"c":[1,2]}')).toThrow(/schema/);
    expect(() => parseServerMsg('{"type":"commands","t":1,"c":[2,0,0,0,0,0,0,0,0,0]}')).toThrow(
      /schema/,
    ); // out-of-range channel
    expect(() => parseServerMsg('{"type":"mystery"}')).toThrow(/schema/);
  });

  it("validates every field type", () => {
    expect(validateServerMsg({ type: "world" })).toBe(false);
    expect(validateServerMsg(null)).toBe(false);
    expect(validateServerMsg(JSON.parse(WORLD_LINE.replace('"WALKING"', '"FLYING"')))).toBe(false);
  });
});

describe("client message serialization", () => {
  it("serializes valid messages canonically", () => {
    const line = serializeClientMsg({ type: "set_mood", mood: "happy" });
    expect(line).toBe('{"mood":"happy","type":"set_mood"}');
    const reset = serializeClientMsg({ type: "reset", seed: 7 });
    expect(reset).toBe('{"seed":7,"type":"reset"}');
  });

  it("refuses to send malformed messages", () => {
    expect(() =>
      serializeClientMsg({ type: "human_pose", t: Number.NaN } as never),
    ).toThrow(/malformed/);
    expect(() => serializeClientMsg({ type: "reset", seed: 1.5 } as never)).toThrow(/malformed/);
    expect(validateClientMsg({ type: "set_mood", mood: "" })).toBe(false);
  });

  it("round-trips human_pose through the canonical form", () => {
    const msg = {
      type: "human_pose" as const,
      t: 0.02,
      x: 1.5,
      y: -0.25,
      z: 1.7,
      qw: 1,
      qx: 0,
      qy: 0,
      qz: 0,
    };
    const line = serializeClientMsg(msg);
    expect(JSON.parse(line)).toEqual(msg);
  });
});

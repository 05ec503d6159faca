/**
 * WebSocket client: validates every message in both directions and feeds
 * the view state. Disconnects dim the UI and arm a reconnect control.
 */

import { parseServerMsg, serializeClientMsg, type ClientMsg, type ServerMsg } from "./protocol.js";
import { applyCommands, applyWorld, type ViewState } from "./state.js";

export interface NetHandlers {
  onEvent?: (name: string) => void;
  onError?: (reason: string) => void;
}

export class SessionClient {
  private ws: WebSocket | null = null;

  constructor(
    readonly url: string,
    readonly state: ViewState,
    readonly handlers: NetHandlers = {},
  ) {}

  connect(): void {
    this.state.connection = "connecting";
    this.ws = new WebSocket(this.url);
    this.ws.onopen = () => {
      this.state.connection = "open";
    };
    this.ws.onclose = () => {
      this.state.connection = "closed";
    };
    this.ws.onmessage = (ev) => this.handleLine(String(ev.data));
  }

  handleLine(line: string): void {
    let msg: ServerMsg;
    try {
      msg = parseServerMsg(line);
    } catch (e) {
      this.state.schemaViolations += 1;
      this.handlers.onError?.(String(e));
      return;
    }
    const now = typeof performance !== "undefined" ? performance.now() : Date.now();
    switch (msg.type) {
      case "hello":
        this.state.moods = msg.moods;
        break;
      case "world":
        applyWorld(this.state, msg, now);
        break;
      case "commands":
        applyCommands(this.state, msg);
        break;
      case "event":
        this.state.eventFlash = { name: msg.name, until: now + 1500 };
        this.handlers.onEvent?.(msg.name);
        break;
      case "status":
        this.state.status = msg;
        break;
      case "error":
        this.handlers.onError?.(msg.reason);
        break;
    }
  }

  send(msg: ClientMsg): void {
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) return;
    this.ws.send(serializeClientMsg(msg));
  }

  setMood(mood: string): void {
    this.state.activeMood = mood;
    this.send({ type: "set_mood", mood });
  }

  reset(seed: number): void {
    this.send({ type: "reset", seed });
  }

  close(): void {
    this.ws?.close();
  }
}

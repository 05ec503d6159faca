/**
 * Playground wiring: connect, pump pointer input at 50 Hz, render at 60 fps.
 */

import { avatarPoseMsg, canvasToArena, stepAvatar, type AvatarState } from "./input.js";
import { SessionClient } from "./net.js";
import { drawArena, drawDisconnectOverlay } from "./render.js";
import { drawSparklines } from "./sparkline.js";
import { initialViewState, RATE_HZ } from "./state.js";

const ARENA_SIZE = 560;
const url = new URLSearchParams(location.search).get("ws") ?? "ws://127.0.0.1:8765";

const arenaCanvas = document.getElementById("arena") as HTMLCanvasElement;
const sparkCanvas = document.getElementById("sparks") as HTMLCanvasElement;
const moodBar = document.getElementById("moods") as HTMLDivElement;
const statusLine = document.getElementById("status") as HTMLDivElement;
const reconnectBtn = document.getElementById("reconnect") as HTMLButtonElement;
const resetBtn = document.getElementById("reset") as HTMLButtonElement;

const state = initialViewState();
const client = new SessionClient(url, state, {
  onError: (reason) => {
    statusLine.textContent = `error: ${reason}`;
  },
});
client.connect();

let avatar: AvatarState = { x: 2.0, y: 0.0, yaw: Math.PI };
let pointerTarget: [number, number] = [avatar.x, avatar.y];

arenaCanvas.addEventListener("pointermove", (ev) => {
  const rect = arenaCanvas.getBoundingClientRect();
  pointerTarget = canvasToArena(ev.clientX - rect.left, ev.clientY - rect.top, rect.width);
});

resetBtn.addEventListener("click", () => client.reset(Math.floor(Math.random() * 1e6)));
reconnectBtn.addEventListener("click", () => client.connect());

function rebuildMoodButtons(): void {
  moodBar.replaceChildren(
    ...state.moods.map((mood) => {
      const b = document.createElement("button");
      b.textContent = mood;
      b.className = mood === state.activeMood ? "mood active" : "mood";
      b.addEventListener("click", () => {
        client.setMood(mood);
        rebuildMoodButtons();
      });
      return b;
    }),
  );
}

// 50 Hz input pump: rate-limited avatar chases the pointer
let simTime = 0;
setInterval(() => {
  simTime += 1 / RATE_HZ;
  avatar = stepAvatar(avatar, pointerTarget[0], pointerTarget[1], 1 / RATE_HZ);
  client.send(avatarPoseMsg(avatar, simTime));
}, 1000 / RATE_HZ);

// 60 fps render loop
const arenaCtx = arenaCanvas.getContext("2d")!;
const sparkCtx = sparkCanvas.getContext("2d")!;
let lastMoodCount = 0;

function frame(now: number): void {
  drawArena(arenaCtx, state, ARENA_SIZE, now);
  if (state.connection !== "open") {
    drawDisconnectOverlay(arenaCtx, ARENA_SIZE);
  }
  drawSparklines(sparkCtx, state.telemetry, sparkCanvas.width, sparkCanvas.height);
  if (state.moods.length !== lastMoodCount) {
    lastMoodCount = state.moods.length;
    if (state.moods.length > 0 && !state.moods.includes(state.activeMood)) {
      state.activeMood = state.moods[0]!;
    }
    rebuildMoodButtons();
  }
  const s = state.status;
  statusLine.textContent = s
    ? `mood ${s.model} | profile ${s.profile} | tick ${s.latency_ms.toFixed(1)} ms | ` +
      `schema violations ${state.schemaViolations}`
    : `connecting to ${url} ...`;
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);

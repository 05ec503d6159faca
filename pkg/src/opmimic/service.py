"""Interactive session service: one human client drives the virtual arena
over a WebSocket, the model-controlled robot reacts at 50 Hz.

Wire protocol: single-line JSON messages (schema version in the hello).
Client -> server: human_pose, set_mood, reset. Server -> client: hello,
world, commands, event, status, error.

Concurrency: a reader task writes the latest pose into a cell; the tick
loop (wall-clock paced against absolute deadlines, or lockstep one tick
per received pose for determinism tests) steps the world and broadcasts;
model inference runs on a worker thread behind a double buffer so a tick
never blocks on sampling.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controller import Controller, RuntimeModel, debounce_discrete, gaussian_smooth
from .errors import ValidationError
from .geometry import Pose, relative_track, PoseTrack
from .model.checkpoint import load_checkpoint
from .world import (
    DT,
    BehaviorKind,
    CommandVector,
    LiveSource,
    Mode,
    PROFILES,
    WorldState,
    drive_human,
    step_world,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

CLIENT_TYPES = {"human_pose", "set_mood", "reset"}
SERVER_TYPES = {"hello", "world", "commands", "event", "status", "error"}

_REQUIRED = {
    "human_pose": {"t", "x", "y", "z", "qw", "qx", "qy", "qz"},
    "set_mood": {"mood"},
    "reset": {"seed"},
}


def canonical(obj: dict) -> str:
    """Canonical single-line JSON form used on the wire."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def parse_message(line: str) -> dict:
    """Parse and validate one client message; raises ValidationError."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ValidationError(f"not valid JSON: {e}") from e
    if not isinstance(obj, dict) or "type" not in obj:
        raise ValidationError("message must be an object with a 'type'")
    mtype = obj["type"]
    if mtype not in CLIENT_TYPES:
        raise ValidationError(f"unknown message type {mtype!r}")
    missing = _REQUIRED[mtype] - set(obj)
    if missing:
        raise ValidationError(f"{mtype} missing fields {sorted(missing)}")
    if mtype == "human_pose":
        vals = [obj[k] for k in ("t", "x", "y", "z", "qw", "qx", "qy", "qz")]
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
            raise ValidationError("human_pose fields must be finite numbers")
    if mtype == "reset" and not isinstance(obj["seed"], int):
        raise ValidationError("reset seed must be an integer")
    if mtype == "set_mood" and not isinstance(obj["mood"], str):
        raise ValidationError("set_mood mood must be a string")
    return obj


def pose_to_fields(pose: Pose) -> dict:
    p, q = pose.position, pose.orientation
    return {"x": p[0], "y": p[1], "z": p[2], "qw": q[0], "qx": q[1], "qy": q[2], "qz": q[3]}


def world_message(state: WorldState) -> dict:
    return {
        "type": "world",
        "t": state.time,
        "robot": pose_to_fields(state.robot),
        "head": list(state.head),
        "mode": Mode(state.mode).name,
        "active_event": BehaviorKind(state.behavior).name,
        "human": pose_to_fields(state.human),
    }


def commands_message(t: float, cmd: CommandVector) -> dict:
    return {"type": "commands", "t": t, "c": [float(v) for v in cmd.values]}


# ---------------------------------------------------------------------------
# double-buffered controller


class DoubleBufferedController(Controller):
    """Controller whose replan runs on a worker thread.

    The pending window is swapped in atomically at a frame boundary; if the
    worker misses the replan deadline, the previous window's remaining
    frames are consumed and, once exhausted, the last command is held.
    """

    def __init__(self, *args, executor: ThreadPoolExecutor, **kwargs):
        super().__init__(*args, **kwargs)
        self.executor = executor
        self._future: Optional[Future] = None
        self._last_values = np.zeros(10)

    def tick(self, robot, human, human_stale: bool = False):
        s = self.state
        s.ticks += 1
        s.robot_hist.append(robot)
        s.human_hist.append(human)
        if len(s.robot_hist) > self.m:
            s.robot_hist.pop(0)
            s.human_hist.pop(0)

        if s.ticks <= self.m:
            cmd = CommandVector.zeros()
            self._record_executed(cmd.values)
            return cmd, Mode.STANDING, BehaviorKind.NONE

        event = BehaviorKind.NONE
        if s.pending is None:
            event = self._replan()  # first plan must block: nothing to emit yet
        else:
            if s.cursor >= self.replan_every and self._future is None:
                self._future = self.executor.submit(self._predict_snapshot)
            if self._future is not None and self._future.done():
                window, b_logits, m_logits = self._future.result()
                self._future = None
                event = self._install(window, b_logits, m_logits)

        if s.cursor < len(s.pending):
            values = s.pending[s.cursor].astype(np.float64)
            s.cursor += 1
        else:
            values = self._last_values  # worker late and window exhausted: hold
        if human_stale:
            values = values.copy()
            values[:3] = 0.0
        self._last_values = values
        cmd, _ = CommandVector.clamp(values)
        self._record_executed(cmd.values)
        s.emitted_stream.append(cmd.values.astype(np.float32))
        return cmd, s.debounce.mode, event

    def _predict_snapshot(self):
        s = self.state
        past_rel = relative_track(
            PoseTrack.from_poses(list(s.robot_hist), self.rate_hz),
            PoseTrack.from_poses(list(s.human_hist), self.rate_hz),
        ).as_array().astype(np.float32)
        past_cmd = np.stack(list(s.cmd_hist))
        return self.model.predict(past_rel, past_cmd, self.rng)

    def _install(self, window, b_logits, m_logits) -> BehaviorKind:
        s = self.state
        self.sample_calls += 1
        s.raw_stream.extend(np.asarray(window[:self.replan_every], dtype=np.float32))
        s.pending_raw = np.asarray(window, dtype=np.float32)
        s.pending = gaussian_smooth(s.pending_raw, s.tail, self.sigma)
        s.cursor = 0
        event, _ = debounce_discrete(b_logits, m_logits, s.debounce, self.clip_durations,
                                     self.replan_every / self.rate_hz)
        s.last_event = event
        return event


# ---------------------------------------------------------------------------
# session


@dataclass
class SessionConfig:
    mood_checkpoints: dict  # mood name -> checkpoint path
    profile_name: str = "bipod"
    lockstep: bool = False
    rate_hz: float = 50.0
    resume_window: float = 30.0


class Session:
    """One interactive world + controller, resettable and mood-switchable."""

    def __init__(self, cfg: SessionConfig):
        if not cfg.mood_checkpoints:
            raise ValidationError("serve needs at least one mood checkpoint")
        self.cfg = cfg
        self.profile = PROFILES[cfg.profile_name]()
        self.models = {mood: RuntimeModel(load_checkpoint(path))
                       for mood, path in cfg.mood_checkpoints.items()}
        self.mood = next(iter(self.models))
        self.executor = ThreadPoolExecutor(max_workers=1)
        self.seed = 0
        self.last_latency_ms = 0.0
        self.reset(0)

    def reset(self, seed: int) -> None:
        self.seed = seed
        self.world = WorldState(mode=Mode.WALKING)
        self.source = LiveSource()
        self._make_controller()

    def set_mood(self, mood: str) -> None:
        if mood not in self.models:
            raise ValidationError(
                f"unknown mood {mood!r}; have {sorted(self.models)}")
        self.mood = mood
        self._make_controller()

    def _make_controller(self) -> None:
        import zlib

        model = self.models[self.mood]
        mood_tag = zlib.crc32(self.mood.encode())  # stable across processes
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, mood_tag]))
        durations = {k: c.duration for k, c in self.profile.clips.items()}
        cls = Controller if self.cfg.lockstep else DoubleBufferedController
        kwargs = {} if self.cfg.lockstep else {"executor": self.executor}
        self.controller = cls(model, rng, clip_durations=durations, **kwargs)

    def push_pose(self, msg: dict) -> None:
        pose = Pose(
            np.array([msg["x"], msg["y"], msg["z"]]),
            np.array([msg["qw"], msg["qx"], msg["qy"], msg["qz"]]),
        )
        self.source.push(pose)

    def tick(self) -> tuple[dict, dict, Optional[dict]]:
        """One 50 Hz step; returns (world_msg, commands_msg, event_msg?)."""
        t0 = time.perf_counter()
        state, status = drive_human(self.world, self.source, DT)
        cmd, mode, event = self.controller.tick(state.robot, state.human,
                                                human_stale=status.stale)
        state, report = step_world(state, cmd, mode, event, self.profile, DT)
        self.world = state
        self.last_latency_ms = (time.perf_counter() - t0) * 1e3
        event_msg = None
        if report.started_event != BehaviorKind.NONE:
            event_msg = {"type": "event", "name": BehaviorKind(report.started_event).name}
        return world_message(state), commands_message(state.time, cmd), event_msg

    def status(self) -> dict:
        return {
            "type": "status",
            "model": self.mood,
            "profile": self.profile.name,
            "latency_ms": round(self.last_latency_ms, 3),
        }

    def hello(self) -> dict:
        return {
            "type": "hello",
            "schema": SCHEMA_VERSION,
            "moods": sorted(self.models),
            "profile": self.profile.name,
            "rate_hz": self.cfg.rate_hz,
            "lockstep": self.cfg.lockstep,
        }


async def _client_loop(ws, session: Session) -> None:
    """Reader: validate messages, update the pose cell / session controls."""
    async for raw in ws:
        try:
            msg = parse_message(raw)
        except ValidationError as e:
            await ws.send(canonical({"type": "error", "reason": str(e)}))
            continue
        if msg["type"] == "human_pose":
            session.push_pose(msg)
            if session.cfg.lockstep:
                world, commands, event = session.tick()
                await ws.send(canonical(world))
                await ws.send(canonical(commands))
                if event:
                    await ws.send(canonical(event))
        elif msg["type"] == "set_mood":
            try:
                session.set_mood(msg["mood"])
                await ws.send(canonical(session.status()))
            except ValidationError as e:
                await ws.send(canonical({"type": "error", "reason": str(e)}))
        elif msg["type"] == "reset":
            session.reset(int(msg["seed"]))
            await ws.send(canonical(session.status()))


async def _tick_loop(ws, session: Session) -> None:
    """Wall-clock 50 Hz pacing against absolute deadlines (no drift)."""
    period = 1.0 / session.cfg.rate_hz
    next_deadline = time.monotonic() + period
    last_status = time.monotonic()
    while True:
        delay = next_deadline - time.monotonic()
        if delay > 0:
            await asyncio.sleep(delay)
        next_deadline += period
        world, commands, event = session.tick()
        try:
            await ws.send(canonical(world))
            await ws.send(canonical(commands))
            if event:
                await ws.send(canonical(event))
            if time.monotonic() - last_status > 1.0:
                await ws.send(canonical(session.status()))
                last_status = time.monotonic()
        except Exception:
            return


async def serve(cfg: SessionConfig, host: str = "127.0.0.1", port: int = 8765,
                ready_event: Optional[asyncio.Event] = None) -> None:
    """Run the single-session server until cancelled.

    One interactive session per server instance; the world pauses on
    disconnect and the session stays resumable for ``resume_window``
    seconds before resetting.
    """
    import websockets

    session = Session(cfg)
    active: set = set()
    disconnect_at: list[float] = [0.0]

    async def handler(ws):
        if active:
            await ws.send(canonical({"type": "error",
                                     "reason": "session already in use"}))
            await ws.close()
            return
        if disconnect_at[0] and time.monotonic() - disconnect_at[0] > cfg.resume_window:
            session.reset(session.seed)  # resume window expired: fresh world
        active.add(ws)
        try:
            await ws.send(canonical(session.hello()))
            if cfg.lockstep:
                await _client_loop(ws, session)
            else:
                reader = asyncio.create_task(_client_loop(ws, session))
                ticker = asyncio.create_task(_tick_loop(ws, session))
                done, pending = await asyncio.wait(
                    {reader, ticker}, return_when=asyncio.FIRST_COMPLETED)
                for task in pending:
                    task.cancel()
        finally:
            active.discard(ws)
            disconnect_at[0] = time.monotonic()

    async with websockets.serve(handler, host, port, max_queue=4) as server:
        log.info("serving on ws://%s:%d (moods: %s)", host, port, sorted(session.models))
        if ready_event is not None:
            ready_event.set()
        await asyncio.Future()  # run until cancelled

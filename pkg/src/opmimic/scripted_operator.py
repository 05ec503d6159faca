"""Synthetic expert operator: mood-conditioned control laws that generate
training data in place of a human at the gamepad.

Each mood maps the current world into raw channel targets plus occasional
discrete events; targets pass through a first-order lag (tau = 0.15 s) so
emitted commands move like thumbs on sticks rather than step functions.
All constants live in :class:`OracleConstants` and are rollout-tested, not
derived from anything.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .geometry import Pose, relative_pose
from .world import (
    ARENA_HALF,
    BehaviorKind,
    C_EXPR_A,
    C_EXPR_B,
    C_FWD,
    C_HEAD_PITCH,
    C_HEAD_YAW,
    C_LAT,
    C_TURN,
    CommandVector,
    DT,
    EmbodimentProfile,
    Mode,
    N_CHANNELS,
    WaypointWalker,
    WorldState,
    bipod_profile,
    drive_human,
    step_world,
)

ORACLE_VERSION = "1"


class Mood(enum.Enum):
    DEFAULT = "default"
    ANGRY = "angry"
    SAD = "sad"
    SHY = "shy"
    HAPPY = "happy"


# canonical session lengths, minutes
SESSION_MINUTES = {
    Mood.DEFAULT: 8,
    Mood.ANGRY: 6,
    Mood.SAD: 8,
    Mood.SHY: 7,
    Mood.HAPPY: 8,
}


@dataclass(frozen=True)
class OracleConstants:
    """Tunable control-law constants; version bumps when behavior changes."""

    version: str = ORACLE_VERSION
    lag_tau: float = 0.15  # s, first-order stick lag
    heading_gain: float = 1.5
    # default mood
    follow_setpoint: float = 1.2  # m
    approach_gain: float = 0.7  # fwd per metre of distance error
    retreat_distance: float = 0.8  # m
    retreat_closing_speed: float = 0.3  # m/s
    retreat_command: float = -0.8
    stand_band: float = 0.3  # m around setpoint
    stand_dwell: float = 3.0  # s inside band before Standing
    mode_hysteresis: float = 2.0  # s minimum between mode switches
    # angry
    angry_personal_space: float = 2.6  # m, flee inside this
    angry_flee_speed: float = 1.0
    # sad
    sad_speed: float = 0.3
    sad_personal_space: float = 1.8  # m, drift away inside this
    sad_head_pitch: float = -0.75
    # shy
    shy_speed: float = 0.4
    shy_setpoint: float = 1.8
    shy_head_pitch: float = -0.6
    shy_gaze_avoid: float = 0.55
    shy_stop_rate: float = 10.0 / 60.0  # stops per second
    # happy
    happy_setpoint: float = 0.55
    happy_orbit_rate: float = 8.0 / 60.0  # orbit bursts per second
    happy_orbit_len: tuple[float, float] = (1.0, 2.0)
    # operator imperfections: brief distractions ease the sticks to neutral
    # and jitter adds human texture; both create the recovery states a real
    # operator's data naturally contains
    distraction_rate: float = 5.0 / 60.0  # per second
    distraction_len: tuple[float, float] = (0.5, 1.5)  # s
    stick_noise_std: float = 0.06
    # event rates, per second, per mood
    event_rates: tuple = (
        (Mood.ANGRY, BehaviorKind.HEAD_SHAKE, 4.0 / 60.0),
        (Mood.ANGRY, BehaviorKind.GROWL, 2.0 / 60.0),
        (Mood.SAD, BehaviorKind.HEAD_SHAKE, 2.0 / 60.0),
        (Mood.SAD, BehaviorKind.SIT, 1.0 / 60.0),
        (Mood.SHY, BehaviorKind.CHIRP, 1.5 / 60.0),
        (Mood.SHY, BehaviorKind.WAVE, 1.0 / 60.0),
        (Mood.HAPPY, BehaviorKind.SPIN, 3.0 / 60.0),
        (Mood.HAPPY, BehaviorKind.DANCE, 2.0 / 60.0),
        (Mood.HAPPY, BehaviorKind.JUMP, 2.0 / 60.0),
        (Mood.DEFAULT, BehaviorKind.WAVE, 0.8 / 60.0),
        (Mood.DEFAULT, BehaviorKind.CHIRP, 0.8 / 60.0),
    )
    event_cooldown_pad: float = 2.0  # s beyond clip duration


DEFAULT_CONSTANTS = OracleConstants()


def mood_event_rates(mood: Mood, constants: OracleConstants) -> dict[BehaviorKind, float]:
    return {kind: rate for m, kind, rate in constants.event_rates if m == mood}


@dataclass
class OperatorState:
    """Smoothed stick memory plus trigger bookkeeping; one per session."""

    cmd: np.ndarray = field(default_factory=lambda: np.zeros(N_CHANNELS))
    cooldowns: dict = field(default_factory=dict)  # BehaviorKind -> s remaining
    mode: Mode = Mode.WALKING
    mode_dwell: float = 0.0  # s the stand condition has held
    mode_lockout: float = 0.0  # s until next switch allowed
    stop_left: float = 0.0  # shy: current stop remaining
    distract_left: float = 0.0  # operator glancing away; sticks ease to neutral
    orbit_left: float = 0.0  # happy: current orbit burst remaining
    orbit_sign: float = 1.0
    prev_distance: float | None = None
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


def _bearing(world: WorldState) -> tuple[float, float, float]:
    """(distance, bearing angle in robot frame, closing speed helper input)."""
    rel = relative_pose(world.robot, world.human)
    d = float(np.hypot(rel.position[0], rel.position[1]))
    bearing = float(math.atan2(rel.position[1], rel.position[0]))
    return d, bearing, rel.position[2]


def _head_track(raw: np.ndarray, bearing: float, rel_z: float, d: float) -> None:
    raw[C_HEAD_YAW] = np.clip(bearing / 1.2, -1.0, 1.0)
    # look up/down toward the human head height
    pitch = math.atan2(rel_z, max(d, 0.3)) / 0.8
    raw[C_HEAD_PITCH] = np.clip(pitch, -1.0, 1.0)


def _raw_targets(mood: Mood, world: WorldState, op: OperatorState,
                 k: OracleConstants, dt: float) -> tuple[np.ndarray, Mode]:
    """Mood control law: raw channel targets plus the desired mode."""
    raw = np.zeros(N_CHANNELS)
    d, bearing, rel_z = _bearing(world)
    closing = 0.0 if op.prev_distance is None else (op.prev_distance - d) / dt
    desired_mode = Mode.WALKING

    if mood == Mood.DEFAULT:
        raw[C_TURN] = np.clip(k.heading_gain * bearing, -1.0, 1.0)
        err = d - k.follow_setpoint
        fwd = np.clip(k.approach_gain * err, -1.0, 1.0)
        raw[C_FWD] = fwd * max(0.0, math.cos(bearing))
        if d < k.retreat_distance and closing > k.retreat_closing_speed:
            raw[C_FWD] = k.retreat_command
        if abs(err) < k.stand_band:
            desired_mode = Mode.STANDING
        if op.mode == Mode.STANDING:
            _head_track(raw, bearing, rel_z, d)
        raw[C_EXPR_A] = 0.2

    elif mood == Mood.ANGRY:
        if d < k.angry_personal_space:
            away = _wrap(bearing + math.pi)
            raw[C_TURN] = np.clip(k.heading_gain * away, -1.0, 1.0)
            raw[C_FWD] = k.angry_flee_speed * max(0.0, math.cos(away))
        else:
            raw[C_FWD] = 0.15
            raw[C_TURN] = 0.3 * math.sin(0.4 * world.time)
        raw[C_HEAD_YAW] = float(np.clip(-math.copysign(0.7, bearing), -1.0, 1.0))
        raw[C_HEAD_PITCH] = 0.1
        raw[C_EXPR_B] = -0.8

    elif mood == Mood.SAD:
        if d < k.sad_personal_space:
            away = _wrap(bearing + math.pi)
            raw[C_TURN] = np.clip(0.8 * away, -1.0, 1.0)
            raw[C_FWD] = k.sad_speed * max(0.0, math.cos(away))
        else:
            raw[C_FWD] = 0.08
            raw[C_TURN] = 0.2 * math.sin(0.3 * world.time)
        raw[C_HEAD_PITCH] = k.sad_head_pitch
        raw[C_EXPR_B] = -0.5

    elif mood == Mood.SHY:
        if op.stop_left > 0.0:
            raw[C_FWD] = 0.0
            raw[C_TURN] = 0.0
        else:
            raw[C_TURN] = np.clip(k.heading_gain * bearing, -1.0, 1.0)
            err = d - k.shy_setpoint
            raw[C_FWD] = np.clip(k.shy_speed * np.sign(err) * min(1.0, abs(err)), -1.0, 1.0) \
                * max(0.0, math.cos(bearing))
        raw[C_HEAD_PITCH] = k.shy_head_pitch
        raw[C_HEAD_YAW] = float(np.clip(-math.copysign(k.shy_gaze_avoid, bearing), -1.0, 1.0))
        if abs(d - k.shy_setpoint) < k.stand_band:
            desired_mode = Mode.STANDING

    elif mood == Mood.HAPPY:
        if op.orbit_left > 0.0:
            raw[C_TURN] = op.orbit_sign * 1.0
            raw[C_FWD] = 0.4
        else:
            raw[C_TURN] = np.clip(2.0 * bearing, -1.0, 1.0)
            err = d - k.happy_setpoint
            raw[C_FWD] = np.clip(2.5 * err, -1.0, 1.0) * max(0.0, math.cos(bearing))
        _head_track(raw, bearing, rel_z, d)
        raw[C_EXPR_A] = 0.9

    _boundary_override(raw, world, k)
    return raw, desired_mode


def _boundary_override(raw: np.ndarray, world: WorldState, k: OracleConstants) -> None:
    """Steer back inside the arena; a real operator never leaves the capture
    space, so fleeing moods circle the boundary instead of drifting off."""
    pos = world.robot.position[:2]
    margin = ARENA_HALF - 0.4
    if abs(pos[0]) <= margin and abs(pos[1]) <= margin:
        return
    to_center = -pos
    target_yaw = math.atan2(to_center[1], to_center[0])
    err = _wrap(target_yaw - world.robot.yaw)
    raw[C_TURN] = np.clip(2.0 * err, -1.0, 1.0)
    raw[C_FWD] = 0.6 * max(0.0, math.cos(err))
    raw[C_LAT] = 0.0


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def operator_policy(
    mood: Mood,
    world: WorldState,
    op: OperatorState,
    dt: float = DT,
    constants: OracleConstants = DEFAULT_CONSTANTS,
) -> tuple[CommandVector, BehaviorKind, Mode, OperatorState]:
    """One 50 Hz decision of the scripted operator.

    Total function: any valid world yields a command; events are
    Poisson-timed and gated by per-event cooldowns plus world playback.
    """
    k = constants
    raw, desired_mode = _raw_targets(mood, world, op, k, dt)

    # operator imperfections: distraction pauses and stick jitter
    if op.distract_left > 0.0:
        op.distract_left = max(0.0, op.distract_left - dt)
        raw[:] = 0.0
    elif op.rng.uniform() < k.distraction_rate * dt:
        op.distract_left = float(op.rng.uniform(*k.distraction_len))
    raw = np.clip(raw + op.rng.normal(0.0, k.stick_noise_std, size=raw.shape), -1.0, 1.0)

    # timers
    d, _, _ = _bearing(world)
    if op.stop_left > 0.0:
        op.stop_left = max(0.0, op.stop_left - dt)
    elif mood == Mood.SHY and op.rng.uniform() < k.shy_stop_rate * dt:
        op.stop_left = float(op.rng.uniform(1.0, 3.0))
    if op.orbit_left > 0.0:
        op.orbit_left = max(0.0, op.orbit_left - dt)
    elif mood == Mood.HAPPY and d < 2.5 and op.rng.uniform() < k.happy_orbit_rate * dt:
        op.orbit_left = float(op.rng.uniform(*k.happy_orbit_len))
        op.orbit_sign = 1.0 if op.rng.uniform() < 0.5 else -1.0

    # first-order lag toward raw targets
    alpha = dt / k.lag_tau
    op.cmd = op.cmd + alpha * (raw - op.cmd)
    cmd = CommandVector(np.clip(op.cmd, -1.0, 1.0))

    # mode hysteresis: desired mode must hold stand_dwell seconds, and
    # switches are locked out for mode_hysteresis seconds
    op.mode_lockout = max(0.0, op.mode_lockout - dt)
    if desired_mode != op.mode:
        op.mode_dwell += dt
        dwell_needed = k.stand_dwell if desired_mode == Mode.STANDING else 0.5
        if op.mode_dwell >= dwell_needed and op.mode_lockout == 0.0:
            op.mode = desired_mode
            op.mode_dwell = 0.0
            op.mode_lockout = k.mode_hysteresis
    else:
        op.mode_dwell = 0.0

    # Poisson event triggers, gated by cooldowns and active playback
    event = BehaviorKind.NONE
    for kind in op.cooldowns:
        op.cooldowns[kind] = max(0.0, op.cooldowns[kind] - dt)
    if world.behavior == BehaviorKind.NONE:
        for kind, rate in mood_event_rates(mood, k).items():
            if op.cooldowns.get(kind, 0.0) > 0.0:
                continue
            if op.rng.uniform() < rate * dt:
                event = kind
                break

    op.prev_distance = d
    return cmd, event, op.mode, op


def start_cooldown(op: OperatorState, kind: BehaviorKind, clip_duration: float,
                   constants: OracleConstants = DEFAULT_CONSTANTS) -> None:
    op.cooldowns[kind] = clip_duration + constants.event_cooldown_pad


def sample_session(
    mood: Mood,
    duration_s: float,
    seed: int,
    profile: EmbodimentProfile | None = None,
    constants: OracleConstants = DEFAULT_CONSTANTS,
):
    """Record a full oracle session into an Episode at 50 Hz."""
    from .dataset import Episode, make_frames

    if duration_s <= 0:
        raise ValueError("duration must be positive")
    profile = profile or bipod_profile()
    n = int(round(duration_s / DT))
    frames = make_frames(n)
    for i, (state, cmd, event, mode, _report) in enumerate(
        rollout(mood, duration_s, seed, profile=profile, constants=constants)
    ):
        f = frames[i]
        f["time"] = state.time
        f["robot"] = state.robot.as_array().astype(np.float32)
        f["human"] = state.human.as_array().astype(np.float32)
        f["cmd"] = cmd.values.astype(np.float32)
        f["event"] = int(event)
        f["mode"] = int(mode)
    return Episode(
        mood=mood.value,
        seed=seed,
        frames=frames,
        rate_hz=1.0 / DT,
        metadata={"oracle_version": constants.version, "profile": profile.name},
    )


def rollout(
    mood: Mood,
    duration_s: float,
    seed: int,
    profile: EmbodimentProfile | None = None,
    constants: OracleConstants = DEFAULT_CONSTANTS,
    human_source=None,
):
    """Run walker + operator + world at 50 Hz; yields (state, cmd, event, mode, report)."""
    profile = profile or bipod_profile()
    seq = np.random.SeedSequence(seed)
    walker_rng, op_rng, init_rng = (np.random.default_rng(s) for s in seq.spawn(3))
    source = human_source if human_source is not None else WaypointWalker(walker_rng)
    op = OperatorState(rng=op_rng)
    state = WorldState(
        mode=Mode.WALKING,
        robot=Pose.from_xyyaw(*init_rng.uniform(-1.0, 1.0, size=2),
                              init_rng.uniform(-math.pi, math.pi), z=0.35),
    )
    state, _ = drive_human(state, source, DT)
    n = int(round(duration_s / DT))
    for _ in range(n):
        cmd, event, mode, op = operator_policy(mood, state, op, DT, constants)
        new_state, report = step_world(state, cmd, mode, event, profile, DT)
        if report.started_event != BehaviorKind.NONE:
            start_cooldown(op, report.started_event,
                           profile.clips[report.started_event].duration, constants)
        new_state, status = drive_human(new_state, source, DT)
        yield state, cmd, report.started_event, mode, report
        state = new_state
        if status.done:
            break

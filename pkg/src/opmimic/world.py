"""50 Hz kinematic arena: robot motion under gamepad-style commands,
behavior-clip playback, embodiment profiles, and human motion sources.

The robot is a unicycle-with-strafe base (yaw-only orientation) plus a
3-DoF head offset; there is no contact or balance physics. Commands act
through an :class:`EmbodimentProfile` so the same command interface can
drive differently limited bodies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ValidationError
from .geometry import Pose, PoseTrack, quat_from_yaw

RATE_HZ = 50.0
DT = 1.0 / RATE_HZ
N_CHANNELS = 10

# channel layout of a CommandVector
C_FWD, C_LAT, C_TURN, C_HEAD_YAW, C_HEAD_PITCH, C_HEAD_ROLL = 0, 1, 2, 3, 4, 5
C_HEIGHT, C_SPEED, C_EXPR_A, C_EXPR_B = 6, 7, 8, 9

CHANNEL_NAMES = (
    "fwd", "lat", "turn", "head_yaw", "head_pitch", "head_roll",
    "height", "speed_scale", "expr_a", "expr_b",
)

# head target ranges, rad, shared across profiles
HEAD_YAW_RANGE = 1.2
HEAD_PITCH_RANGE = 0.8
HEAD_ROLL_RANGE = 0.5
# body height channel maps to +-0.15 m around the nominal base height
BASE_HEIGHT = 0.35
HEIGHT_RANGE = 0.15

ARENA_HALF = 3.0  # 6x6 m arena


@dataclass(frozen=True)
class CommandVector:
    """10 continuous operator channels, each clamped to [-1, 1]."""

    values: np.ndarray = field(default_factory=lambda: np.zeros(N_CHANNELS))

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(N_CHANNELS)
        if not np.all(np.isfinite(v)):
            raise ValidationError("command vector has non-finite channels")
        if np.any(np.abs(v) > 1.0):
            raise ValidationError("command channels outside [-1, 1]; use CommandVector.clamp")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @staticmethod
    def zeros() -> "CommandVector":
        return CommandVector()

    @staticmethod
    def clamp(values: np.ndarray) -> tuple["CommandVector", bool]:
        """Clamp raw channel values; second element reports whether clamping bit."""
        v = np.asarray(values, dtype=np.float64).reshape(N_CHANNELS)
        if not np.all(np.isfinite(v)):
            raise ValidationError("command vector has non-finite channels")
        clipped = np.clip(v, -1.0, 1.0)
        return CommandVector(clipped), bool(np.any(clipped != v))

    def __getitem__(self, i: int) -> float:
        return float(self.values[i])


class Mode(enum.IntEnum):
    WALKING = 0
    STANDING = 1


class BehaviorKind(enum.IntEnum):
    """Discrete behavior events; NONE is the default no-event class."""

    NONE = 0
    HEAD_SHAKE = 1
    DANCE = 2
    JUMP = 3
    SPIN = 4
    WAVE = 5
    GROWL = 6
    SIT = 7
    CHIRP = 8


N_BEHAVIOR_CLASSES = len(BehaviorKind)


@dataclass(frozen=True)
class BehaviorClip:
    """A canned command overlay played verbatim while its event is active."""

    kind: BehaviorKind
    frames: np.ndarray  # (n, 10) command values at RATE_HZ
    walks: bool = False  # locomotion clips execute in Walking regardless of mode

    @property
    def duration(self) -> float:
        return len(self.frames) / RATE_HZ


def _clip(kind: BehaviorKind, seconds: float, fill) -> BehaviorClip:
    n = int(round(seconds * RATE_HZ))
    t = np.arange(n) / RATE_HZ
    frames = np.zeros((n, N_CHANNELS))
    walks = fill(t, frames)
    return BehaviorClip(kind, np.clip(frames, -1.0, 1.0), walks=bool(walks))


def default_behavior_clips() -> dict[BehaviorKind, BehaviorClip]:
    """1-3 s overlays, one per event kind; shapes are hand-authored."""

    def head_shake(t, f):
        f[:, C_HEAD_YAW] = 0.8 * np.sin(2.0 * np.pi * 2.5 * t)
        return False

    def dance(t, f):
        f[:, C_LAT] = 0.7 * np.sin(2.0 * np.pi * 1.0 * t)
        f[:, C_TURN] = 0.5 * np.sin(2.0 * np.pi * 0.5 * t)
        f[:, C_HEAD_ROLL] = 0.6 * np.sin(2.0 * np.pi * 2.0 * t)
        f[:, C_EXPR_A] = 0.8
        return True

    def jump(t, f):
        f[:, C_HEIGHT] = np.where(t < 0.3, -0.8, np.where(t < 0.6, 1.0, 0.0))
        f[:, C_EXPR_A] = 0.5
        return True

    def spin(t, f):
        f[:, C_TURN] = 1.0
        return True

    def wave(t, f):
        f[:, C_HEAD_ROLL] = 0.9 * np.sin(2.0 * np.pi * 1.5 * t)
        f[:, C_HEAD_PITCH] = 0.3
        return False

    def growl(t, f):
        f[:, C_HEAD_PITCH] = -0.6
        f[:, C_EXPR_B] = -0.9
        return False

    def sit(t, f):
        f[:, C_HEIGHT] = -1.0
        f[:, C_HEAD_PITCH] = -0.2
        return False

    def chirp(t, f):
        f[:, C_EXPR_A] = np.where(t < 0.5, 1.0, 0.0)
        f[:, C_EXPR_B] = 0.6
        return False

    spec = {
        BehaviorKind.HEAD_SHAKE: (1.6, head_shake),
        BehaviorKind.DANCE: (3.0, dance),
        BehaviorKind.JUMP: (1.0, jump),
        BehaviorKind.SPIN: (2.0, spin),
        BehaviorKind.WAVE: (1.6, wave),
        BehaviorKind.GROWL: (1.4, growl),
        BehaviorKind.SIT: (3.0, sit),
        BehaviorKind.CHIRP: (1.0, chirp),
    }
    return {k: _clip(k, secs, fn) for k, (secs, fn) in spec.items()}


@dataclass(frozen=True)
class EmbodimentProfile:
    """Kinematic limits plus the behavior playback table for one robot body."""

    name: str
    v_max: float  # m/s forward
    v_lat_max: float  # m/s lateral
    omega_max: float  # rad/s yaw
    head_rate: tuple[float, float, float] = (3.0, 2.5, 2.5)  # rad/s per head axis
    footprint_radius: float = 0.25
    clips: dict[BehaviorKind, BehaviorClip] = field(default_factory=default_behavior_clips)

    def __post_init__(self):
        limits = (self.v_max, self.v_lat_max, self.omega_max, *self.head_rate, self.footprint_radius)
        if any(x <= 0 for x in limits):
            raise ValidationError(f"profile {self.name!r} has non-positive limits")


def bipod_profile() -> EmbodimentProfile:
    return EmbodimentProfile("bipod", v_max=1.2, v_lat_max=0.6, omega_max=math.pi / 2,
                             footprint_radius=0.25)


def humanoid_profile() -> EmbodimentProfile:
    return EmbodimentProfile("humanoid", v_max=0.8, v_lat_max=0.35, omega_max=math.pi / 3,
                             head_rate=(2.0, 1.8, 1.8), footprint_radius=0.35)


PROFILES = {"bipod": bipod_profile, "humanoid": humanoid_profile}


@dataclass(frozen=True)
class WorldState:
    time: float = 0.0
    robot: Pose = field(default_factory=lambda: Pose(np.array([0.0, 0.0, BASE_HEIGHT])))
    head: np.ndarray = field(default_factory=lambda: np.zeros(3))  # yaw, pitch, roll rad
    mode: Mode = Mode.STANDING
    behavior: BehaviorKind = BehaviorKind.NONE
    behavior_remaining: float = 0.0
    human: Pose = field(default_factory=lambda: Pose(np.array([2.0, 0.0, 1.7])))

    def __post_init__(self):
        if self.behavior_remaining < 0:
            raise ValidationError("behavior_remaining must be >= 0")
        h = np.asarray(self.head, dtype=np.float64).reshape(3).copy()
        h.flags.writeable = False
        object.__setattr__(self, "head", h)


@dataclass(frozen=True)
class StepReport:
    clamped: bool = False
    rejected_event: BehaviorKind = BehaviorKind.NONE
    started_event: BehaviorKind = BehaviorKind.NONE
    executed: Optional[CommandVector] = None  # command actually applied (overlay during playback)
    footprint_overlap: bool = False


def step_world(
    state: WorldState,
    cmd: CommandVector,
    mode: Mode,
    event: BehaviorKind,
    profile: EmbodimentProfile,
    dt: float = DT,
) -> tuple[WorldState, StepReport]:
    """Advance the robot one tick under the given command.

    A non-NONE active behavior replaces the external command with its clip
    overlay until the clip ends; new events are rejected while one plays.
    Standing freezes the base pose bit-exactly; head channels always act.
    Raw arrays are accepted and clamped (flagged in the report, not fatal).
    """
    if isinstance(cmd, CommandVector):
        values = cmd.values
        clamped = False
    else:
        cmd, clamped = CommandVector.clamp(cmd)
        values = cmd.values
    rejected = BehaviorKind.NONE
    started = BehaviorKind.NONE

    behavior = state.behavior
    remaining = state.behavior_remaining
    if behavior != BehaviorKind.NONE and remaining > 0.0:
        if event != BehaviorKind.NONE:
            rejected = event
    elif event != BehaviorKind.NONE:
        if event not in profile.clips:
            rejected = event
        else:
            behavior = event
            remaining = profile.clips[event].duration
            started = event

    effective_mode = mode
    if behavior != BehaviorKind.NONE and remaining > 0.0:
        clip = profile.clips[behavior]
        idx = min(len(clip.frames) - 1, int(round((clip.duration - remaining) * RATE_HZ)))
        values = clip.frames[idx]
        if clip.walks:
            effective_mode = Mode.WALKING
        remaining = max(0.0, remaining - dt)
        if remaining == 0.0:
            behavior = BehaviorKind.NONE
    executed = CommandVector(values)

    # base kinematics
    if effective_mode == Mode.WALKING:
        mult = 1.0 + 0.5 * values[C_SPEED]
        v_fwd = float(np.clip(profile.v_max * values[C_FWD] * mult, -profile.v_max, profile.v_max))
        v_lat = float(np.clip(profile.v_lat_max * values[C_LAT] * mult,
                              -profile.v_lat_max, profile.v_lat_max))
        yaw = state.robot.yaw
        c, s = math.cos(yaw), math.sin(yaw)
        dx = (c * v_fwd - s * v_lat) * dt
        dy = (s * v_fwd + c * v_lat) * dt
        new_yaw = yaw + profile.omega_max * values[C_TURN] * dt
        z = BASE_HEIGHT + HEIGHT_RANGE * values[C_HEIGHT]
        pos = np.array([state.robot.position[0] + dx, state.robot.position[1] + dy, z])
        robot = Pose(pos, quat_from_yaw(new_yaw))
    else:
        robot = state.robot  # bit-exact freeze

    # head offsets slew toward channel targets
    targets = np.array([
        HEAD_YAW_RANGE * values[C_HEAD_YAW],
        HEAD_PITCH_RANGE * values[C_HEAD_PITCH],
        HEAD_ROLL_RANGE * values[C_HEAD_ROLL],
    ])
    max_step = np.asarray(profile.head_rate) * dt
    head = state.head + np.clip(targets - state.head, -max_step, max_step)

    overlap = (
        float(np.linalg.norm((state.human.position - robot.position)[:2]))
        < profile.footprint_radius
    )

    new_state = WorldState(
        time=state.time + dt,
        robot=robot,
        head=head,
        mode=effective_mode,
        behavior=behavior,
        behavior_remaining=remaining,
        human=state.human,
    )
    report = StepReport(clamped=clamped, rejected_event=rejected, started_event=started,
                        executed=executed, footprint_overlap=overlap)
    return new_state, report


# ---------------------------------------------------------------------------
# human motion sources


@dataclass
class SourceStatus:
    done: bool = False
    stale: bool = False


class WaypointWalker:
    """Synthetic human: walks between sampled arena goals with pauses and
    occasional direct approaches/retreats relative to the robot."""

    SPEED_LO, SPEED_HI = 0.3, 1.4

    def __init__(self, rng: np.random.Generator, arena_half: float = ARENA_HALF,
                 height: Optional[float] = None):
        self.rng = rng
        self.arena_half = arena_half
        self.height = float(height) if height is not None else float(rng.uniform(1.5, 1.9))
        self.pos = rng.uniform(-arena_half * 0.8, arena_half * 0.8, size=2)
        self.yaw = float(rng.uniform(-math.pi, math.pi))
        self.goal = self._sample_goal(None)
        self.speed = self.sample_speed()
        self.pause_left = 0.0

    def sample_speed(self) -> float:
        return float(self.rng.uniform(self.SPEED_LO, self.SPEED_HI))

    def _sample_goal(self, robot: Optional[Pose]) -> np.ndarray:
        if robot is not None:
            u = self.rng.uniform()
            if u < 0.20:  # direct approach
                d = self.rng.uniform(0.5, 1.2)
                ang = self.rng.uniform(-math.pi, math.pi)
                g = robot.position[:2] + d * np.array([math.cos(ang), math.sin(ang)])
                return np.clip(g, -self.arena_half, self.arena_half)
            if u < 0.30:  # retreat to a far corner-ish point
                away = self.pos - robot.position[:2]
                n = np.linalg.norm(away)
                away = away / n if n > 1e-6 else np.array([1.0, 0.0])
                g = self.pos + away * self.rng.uniform(2.0, 4.0)
                return np.clip(g, -self.arena_half, self.arena_half)
        return self.rng.uniform(-self.arena_half, self.arena_half, size=2)

    def step(self, world: WorldState, dt: float) -> tuple[Pose, SourceStatus]:
        if self.pause_left > 0.0:
            self.pause_left = max(0.0, self.pause_left - dt)
            # while paused, face the robot
            to_robot = world.robot.position[:2] - self.pos
            if np.linalg.norm(to_robot) > 1e-6:
                self.yaw = math.atan2(to_robot[1], to_robot[0])
            return self._pose(), SourceStatus()

        to_goal = self.goal - self.pos
        dist = float(np.linalg.norm(to_goal))
        if dist < 0.1:
            if self.rng.uniform() < 0.4:
                self.pause_left = float(self.rng.uniform(0.5, 2.5))
            self.goal = self._sample_goal(world.robot)
            self.speed = self.sample_speed()
            return self._pose(), SourceStatus()

        step_len = min(dist, self.speed * dt)
        direction = to_goal / dist
        self.pos = self.pos + direction * step_len
        self.yaw = math.atan2(direction[1], direction[0])
        return self._pose(), SourceStatus()

    def _pose(self) -> Pose:
        return Pose(np.array([self.pos[0], self.pos[1], self.height]), quat_from_yaw(self.yaw))


class ReplaySource:
    """Replays a recorded human PoseTrack frame by frame."""

    def __init__(self, track: PoseTrack):
        if len(track) == 0:
            raise ValidationError("replay track is empty")
        self.track = track
        self.i = 0

    def step(self, world: WorldState, dt: float) -> tuple[Pose, SourceStatus]:
        if self.i >= len(self.track):
            return self.track.pose(len(self.track) - 1), SourceStatus(done=True)
        pose = self.track.pose(self.i)
        self.i += 1
        return pose, SourceStatus(done=self.i >= len(self.track))


class LiveSource:
    """Consumes externally pushed poses (service module); holds the last pose
    and flags staleness when the feed gaps for more than ``stale_after`` s."""

    def __init__(self, stale_after: float = 0.5):
        self.stale_after = stale_after
        self.latest: Optional[Pose] = None
        self.age = 0.0

    def push(self, pose: Pose) -> None:
        self.latest = pose
        self.age = 0.0

    def step(self, world: WorldState, dt: float) -> tuple[Pose, SourceStatus]:
        if self.latest is None:
            return world.human, SourceStatus(stale=True)
        self.age += dt
        return self.latest, SourceStatus(stale=self.age > self.stale_after)


def drive_human(state: WorldState, source, dt: float = DT) -> tuple[WorldState, SourceStatus]:
    """Advance the human pose using the given source."""
    pose, status = source.step(state, dt)
    return replace(state, human=pose), status

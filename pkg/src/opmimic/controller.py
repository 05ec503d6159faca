"""50 Hz receding-horizon runtime: history buffers, window sampling every
K frames, Gaussian seam smoothing, and debounced discrete events.

The command history fed back into the model is the *executed* stream (what
the robot actually received), matching how a recorder taps a teleoperation
interface. Cold start emits zeros in Standing until the buffers warm up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import NormStats
from .errors import ValidationError
from .geometry import Pose, PoseTrack, relative_track
from .model.checkpoint import Checkpoint
from .model.diffusion import DiffusionSchedule, sample_window
from .model.network import ModelConfig, encode_conditions, forward_baseline, wrap_params
from .world import BehaviorKind, CommandVector, Mode, N_CHANNELS

REPLAN_EVERY = 10  # frames consumed before the next sample_window call
SMOOTH_SIGMA = 2.0  # frames
EVENT_PROB_THRESHOLD = 0.5
MODE_AGREE_WINDOWS = 3
EVENT_COOLDOWN_PAD = 1.0  # s past clip duration


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian truncated at 3 sigma, renormalized to sum 1."""
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    r = int(np.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(window: np.ndarray, tail: np.ndarray, sigma: float = SMOOTH_SIGMA) -> np.ndarray:
    """Per-channel Gaussian smoothing of an (N, j) window.

    ``tail`` supplies executed frames as left context so seams between
    consecutive windows are smoothed too; the right edge replicates the
    final frame. Output has the same shape as ``window``.
    """
    kernel = gaussian_kernel(sigma)
    r = (len(kernel) - 1) // 2
    n = len(window)
    if len(tail) >= r:
        left = tail[-r:]
    else:
        pad = np.repeat(window[:1], r - len(tail), axis=0)
        left = np.concatenate([pad, tail], axis=0) if len(tail) else pad
    right = np.repeat(window[-1:], r, axis=0)
    padded = np.concatenate([left, window, right], axis=0)
    out = np.empty_like(window)
    for c in range(window.shape[1]):
        out[:, c] = np.convolve(padded[:, c], kernel, mode="valid")[:n]
    return out


@dataclass
class DebounceState:
    cooldowns: dict = field(default_factory=dict)  # BehaviorKind -> s remaining
    mode: Mode = Mode.STANDING
    mode_votes: list = field(default_factory=list)


def debounce_discrete(
    behavior_logits: np.ndarray,
    mode_logits: np.ndarray,
    state: DebounceState,
    clip_durations: dict,
    dt_since_last: float,
) -> tuple[BehaviorKind, Mode]:
    """Trigger policy for the discrete heads.

    A behavior fires when its softmax probability exceeds 0.5 and it is not
    cooling down (cooldown = clip duration + 1 s). The mode switches only
    after three consecutive window predictions agree.
    """
    if not (np.all(np.isfinite(behavior_logits)) and np.all(np.isfinite(mode_logits))):
        raise ValidationError("non-finite logits")
    for k in list(state.cooldowns):
        state.cooldowns[k] = max(0.0, state.cooldowns[k] - dt_since_last)

    b = np.exp(behavior_logits - behavior_logits.max())
    probs = b / b.sum()
    event = BehaviorKind.NONE
    best = int(np.argmax(probs))
    if best != int(BehaviorKind.NONE) and probs[best] > EVENT_PROB_THRESHOLD:
        kind = BehaviorKind(best)
        if state.cooldowns.get(kind, 0.0) <= 0.0:
            event = kind
            state.cooldowns[kind] = clip_durations.get(kind, 2.0) + EVENT_COOLDOWN_PAD

    vote = Mode(int(np.argmax(mode_logits)))
    state.mode_votes.append(vote)
    if len(state.mode_votes) > MODE_AGREE_WINDOWS:
        state.mode_votes.pop(0)
    if (len(state.mode_votes) == MODE_AGREE_WINDOWS
            and all(v == vote for v in state.mode_votes)
            and vote != state.mode):
        state.mode = vote
    return event, state.mode


class RuntimeModel:
    """Checkpoint wrapper: builds condition tokens and samples one window."""

    def __init__(self, checkpoint: Checkpoint, guidance_scale: float | None = None):
        self.cfg: ModelConfig = checkpoint.config
        self.params = wrap_params(checkpoint.params, trainable=False)
        self.schedule: Optional[DiffusionSchedule] = checkpoint.schedule
        self.norm: NormStats = checkpoint.norm_stats
        self.guidance_scale = (self.cfg.guidance_scale if guidance_scale is None
                               else float(guidance_scale))
        if self.cfg.diffusion and self.schedule is None:
            raise ValidationError("diffusion checkpoint lacks its schedule")

    def predict(self, past_rel: np.ndarray, past_cmd: np.ndarray,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """past_rel (M, 7) in metres, past_cmd (M, j) -> (window, logits, logits)."""
        x = self.norm.normalize_positions(past_rel.astype(np.float32))[None]
        c = past_cmd.astype(np.float32)[None]
        if self.cfg.diffusion:
            cond = encode_conditions(self.params, self.cfg, x, c, drop_cmd=False)
            uncond = None
            if self.guidance_scale != 1.0 and self.cfg.use_cmd_tokens:
                uncond = encode_conditions(self.params, self.cfg, x, c, drop_cmd=True)
            scale = self.guidance_scale if uncond is not None else 1.0
            window, bl, ml = sample_window(self.params, self.cfg, self.schedule,
                                           cond, uncond, rng, guidance_scale=scale)
            return window[0], bl[0], ml[0]
        cond = encode_conditions(self.params, self.cfg, x, c, drop_cmd=False)
        out = forward_baseline(self.params, self.cfg, cond)
        window = np.clip(out.x0_hat.data[0], -1.0, 1.0)
        return window, out.behavior_logits.data[0], out.mode_logits.data[0]


@dataclass
class ControllerState:
    robot_hist: list = field(default_factory=list)  # last M poses
    human_hist: list = field(default_factory=list)
    cmd_hist: list = field(default_factory=list)  # last M executed commands
    pending: Optional[np.ndarray] = None  # smoothed (N, j) window
    pending_raw: Optional[np.ndarray] = None
    cursor: int = 0
    tail: np.ndarray = field(default_factory=lambda: np.zeros((0, N_CHANNELS), dtype=np.float32))
    debounce: DebounceState = field(default_factory=DebounceState)
    ticks: int = 0
    last_event: BehaviorKind = BehaviorKind.NONE
    raw_stream: list = field(default_factory=list)  # first-K frames of raw windows
    emitted_stream: list = field(default_factory=list)


class Controller:
    """Receding-horizon command source driven by a RuntimeModel."""

    def __init__(self, model: RuntimeModel, rng: np.random.Generator,
                 clip_durations: dict | None = None,
                 replan_every: int = REPLAN_EVERY, sigma: float = SMOOTH_SIGMA,
                 rate_hz: float = 50.0):
        if replan_every < 1:
            raise ValidationError("replan interval must be >= 1 frame")
        self.model = model
        self.rng = rng
        self.m = model.cfg.m_past
        self.n = model.cfg.n_future
        self.replan_every = min(replan_every, self.n)
        self.sigma = sigma
        self.rate_hz = rate_hz
        self.clip_durations = clip_durations or {}
        self.state = ControllerState()
        self.sample_calls = 0

    def tick(self, robot: Pose, human: Pose,
             human_stale: bool = False) -> tuple[CommandVector, Mode, BehaviorKind]:
        """One 50 Hz step: update histories, replan if due, emit a command."""
        s = self.state
        s.ticks += 1
        s.robot_hist.append(robot)
        s.human_hist.append(human)
        if len(s.robot_hist) > self.m:
            s.robot_hist.pop(0)
            s.human_hist.pop(0)

        if s.ticks <= self.m:  # first M ticks: zeros in Standing while buffers warm
            cmd = CommandVector.zeros()
            self._record_executed(cmd.values)
            return cmd, Mode.STANDING, BehaviorKind.NONE

        event = BehaviorKind.NONE
        if s.pending is None or s.cursor >= self.replan_every:
            event = self._replan()
        values = s.pending[s.cursor].astype(np.float64)
        s.cursor += 1
        if human_stale:
            values = values.copy()
            values[:3] = 0.0  # hold locomotion; head keeps tracking
        cmd, _ = CommandVector.clamp(values)
        self._record_executed(cmd.values)
        s.emitted_stream.append(cmd.values.astype(np.float32))
        return cmd, s.debounce.mode, event

    def _record_executed(self, values: np.ndarray) -> None:
        s = self.state
        arr = values.astype(np.float32)
        s.cmd_hist.append(arr)
        if len(s.cmd_hist) > self.m:
            s.cmd_hist.pop(0)
        s.tail = np.vstack([s.tail, arr[None]])[-16:]

    def _replan(self) -> BehaviorKind:
        s = self.state
        past_rel = relative_track(
            PoseTrack.from_poses(s.robot_hist, self.rate_hz),
            PoseTrack.from_poses(s.human_hist, self.rate_hz),
        ).as_array().astype(np.float32)
        past_cmd = np.stack(s.cmd_hist)
        window, b_logits, m_logits = self.model.predict(past_rel, past_cmd, self.rng)
        self.sample_calls += 1
        s.raw_stream.extend(np.asarray(window[:self.replan_every], dtype=np.float32))
        s.pending_raw = np.asarray(window, dtype=np.float32)
        s.pending = gaussian_smooth(s.pending_raw, s.tail, self.sigma)
        s.cursor = 0
        dt_between = self.replan_every / self.rate_hz
        event, _ = debounce_discrete(b_logits, m_logits, s.debounce,
                                     self.clip_durations, dt_between)
        s.last_event = event
        return event

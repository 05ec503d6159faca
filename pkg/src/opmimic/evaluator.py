"""Closed-loop evaluation on held-out replays, the FAE/TE/MSD metrics,
the ablation grid, the diversity probe, and teacher-forced classification
scoring for the discrete heads.

Absolute metric scales depend on the synthetic data, so cross-variant
comparisons are encoded as orderings/ratios (see the acceptance suite);
the metric definitions themselves are exact.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import Controller, RuntimeModel
from .dataset import (
    DatasetManifest,
    read_episode,
    stack_windows,
    windows_for_split,
)
from .errors import DataError, ValidationError
from .geometry import Pose, PoseTrack, quat_rotate
from .model.checkpoint import Checkpoint, load_checkpoint
from .model.diffusion import q_sample
from .model.network import encode_conditions, forward, forward_baseline, wrap_params
from .scripted_operator import (
    DEFAULT_CONSTANTS,
    Mood,
    OperatorState,
    operator_policy,
    start_cooldown,
)
from .world import (
    DT,
    BehaviorKind,
    EmbodimentProfile,
    Mode,
    ReplaySource,
    WorldState,
    bipod_profile,
    drive_human,
    step_world,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# metrics


def facing_angles_deg(robot: np.ndarray, human: np.ndarray) -> np.ndarray:
    """Per-frame angle between robot forward (+x body) and robot->human, degrees."""
    fwd = quat_rotate(robot[:, 3:7].astype(np.float64), np.array([1.0, 0.0, 0.0]))[:, :2]
    to_h = (human[:, :2] - robot[:, :2]).astype(np.float64)
    n1 = np.linalg.norm(fwd, axis=1)
    n2 = np.linalg.norm(to_h, axis=1)
    ok = (n1 > 1e-12) & (n2 > 1e-6)
    cosang = np.ones(len(robot))
    cosang[ok] = np.einsum("ij,ij->i", fwd[ok], to_h[ok]) / (n1[ok] * n2[ok])
    return np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))


def fae(robot: np.ndarray, human: np.ndarray) -> float:
    """Mean facing-angle error over frames, degrees (default-mood metric)."""
    return float(np.mean(facing_angles_deg(robot, human)))


def te(robot: np.ndarray, human: np.ndarray) -> float:
    """Mean x-y distance between robot and human, metres."""
    return float(np.mean(np.linalg.norm(robot[:, :2] - human[:, :2], axis=1)))


def msd(stream: np.ndarray) -> float:
    """Mean squared per-frame first difference, averaged over all channels."""
    stream = np.asarray(stream, dtype=np.float64)
    if stream.ndim != 2 or len(stream) < 2:
        raise ValidationError("msd needs an (F, j) stream with F >= 2")
    return float(np.mean(np.diff(stream, axis=0) ** 2))


# ---------------------------------------------------------------------------
# closed-loop rollouts


@dataclass
class RolloutTrace:
    robot: np.ndarray  # (F, 7)
    human: np.ndarray  # (F, 7)
    emitted: np.ndarray  # (F, j) commands driving the robot
    raw: np.ndarray  # raw sampled command frames (pre-smoothing)
    events: list = field(default_factory=list)

    def metrics(self) -> dict[str, float]:
        return {
            "fae": fae(self.robot, self.human),
            "te": te(self.robot, self.human),
            "msd": msd(self.emitted),
            "msd_raw": msd(self.raw),
        }


def _chunk_human_track(ref, cache) -> tuple[PoseTrack, np.ndarray]:
    if ref.episode_path not in cache:
        cache[ref.episode_path] = read_episode(ref.episode_path)
    chunk = cache[ref.episode_path].slice(ref.start, ref.length)
    return chunk.human_track(), chunk.robot[0].astype(np.float64)


def model_rollout(
    checkpoint: Checkpoint,
    human_track: PoseTrack,
    start_robot: np.ndarray,
    seed: int,
    profile: EmbodimentProfile | None = None,
    guidance_scale: float | None = None,
    rng_factory=None,
) -> RolloutTrace:
    """Drive the robot with the model while the human replays a track."""
    profile = profile or bipod_profile()
    model = RuntimeModel(checkpoint, guidance_scale=guidance_scale)
    rng = rng_factory(seed) if rng_factory else np.random.default_rng(seed)
    clip_durations = {k: c.duration for k, c in profile.clips.items()}
    ctrl = Controller(model, rng, clip_durations=clip_durations)
    source = ReplaySource(human_track)
    state = WorldState(robot=Pose.from_array(start_robot), mode=Mode.WALKING,
                       human=human_track.pose(0))
    robots, humans, events = [], [], []
    done = False
    while not done:
        cmd, mode, event = ctrl.tick(state.robot, state.human)
        state, report = step_world(state, cmd, mode, event, profile, DT)
        if report.started_event != BehaviorKind.NONE:
            events.append((state.time, report.started_event))
        robots.append(state.robot.as_array())
        humans.append(state.human.as_array())
        state, status = drive_human(state, source, DT)
        done = status.done
    return RolloutTrace(
        robot=np.stack(robots),
        human=np.stack(humans),
        emitted=np.stack(ctrl.state.emitted_stream),
        raw=np.stack(ctrl.state.raw_stream),
        events=events,
    )


def oracle_rollout(
    human_track: PoseTrack,
    start_robot: np.ndarray,
    seed: int,
    mood: Mood = Mood.DEFAULT,
    profile: EmbodimentProfile | None = None,
) -> RolloutTrace:
    """Scripted-oracle-in-the-loop reference on the same replayed human."""
    profile = profile or bipod_profile()
    op = OperatorState(rng=np.random.default_rng(seed))
    source = ReplaySource(human_track)
    state = WorldState(robot=Pose.from_array(start_robot), mode=Mode.WALKING,
                       human=human_track.pose(0))
    robots, humans, cmds, events = [], [], [], []
    done = False
    while not done:
        cmd, event, mode, op = operator_policy(mood, state, op, DT, DEFAULT_CONSTANTS)
        state, report = step_world(state, cmd, mode, event, profile, DT)
        if report.started_event != BehaviorKind.NONE:
            start_cooldown(op, report.started_event,
                           profile.clips[report.started_event].duration)
            events.append((state.time, report.started_event))
        robots.append(state.robot.as_array())
        humans.append(state.human.as_array())
        cmds.append(cmd.values)
        state, status = drive_human(state, source, DT)
        done = status.done
    stream = np.stack(cmds)
    return RolloutTrace(robot=np.stack(robots), human=np.stack(humans),
                        emitted=stream, raw=stream, events=events)


# ---------------------------------------------------------------------------
# aggregated evaluation


@dataclass
class MetricReport:
    variant: str
    seeds: list
    n_rollouts: int
    fae_mean: float
    fae_std: float
    te_mean: float
    te_std: float
    msd_mean: float
    msd_std: float
    msd_raw_mean: float
    per_rollout: list = field(default_factory=list)  # dicts with chunk/seed/metrics

    def row(self) -> str:
        return (f"{self.variant:22s} {self.fae_mean:7.2f} ± {self.fae_std:5.2f}  "
                f"{self.te_mean:5.2f} ± {self.te_std:4.2f}  "
                f"{self.msd_mean * 1e3:7.3f} ± {self.msd_std * 1e3:6.3f}")


REPORT_HEADER = (f"{'variant':22s} {'FAE [deg]':>15s}  {'TE [m]':>12s}  "
                 f"{'MSD [1e-3]':>16s}")


def _aggregate(variant, seeds, rows) -> MetricReport:
    faes = np.array([r["metrics"]["fae"] for r in rows])
    tes = np.array([r["metrics"]["te"] for r in rows])
    msds = np.array([r["metrics"]["msd"] for r in rows])
    raws = np.array([r["metrics"]["msd_raw"] for r in rows])
    return MetricReport(
        variant=variant, seeds=list(seeds), n_rollouts=len(rows),
        fae_mean=float(faes.mean()), fae_std=float(faes.std()),
        te_mean=float(tes.mean()), te_std=float(tes.std()),
        msd_mean=float(msds.mean()), msd_std=float(msds.std()),
        msd_raw_mean=float(raws.mean()),
        per_rollout=rows,
    )


def run_eval(
    checkpoint: Checkpoint | str | Path,
    manifest: DatasetManifest,
    seeds=(0, 1, 2),
    profile: EmbodimentProfile | None = None,
    variant: str | None = None,
    guidance_scale: float | None = None,
) -> MetricReport:
    """Replay every test chunk under every seed and aggregate the metrics."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    if len(seeds) < 1:
        raise ValidationError("need at least one evaluation seed")
    test_refs = manifest.select("test")
    if not test_refs:
        raise DataError("manifest has no test chunks")
    cache: dict = {}
    rows = []
    for ref in test_refs:
        track, start = _chunk_human_track(ref, cache)
        for seed in seeds:
            trace = model_rollout(checkpoint, track, start, seed, profile=profile,
                                  guidance_scale=guidance_scale)
            rows.append({"chunk": (ref.episode_path, ref.start), "seed": seed,
                         "metrics": trace.metrics()})
    name = variant or checkpoint.meta.get("variant", "model")
    return _aggregate(name, seeds, rows)


def oracle_reference(
    manifest: DatasetManifest,
    seeds=(0, 1, 2),
    mood: Mood = Mood.DEFAULT,
    profile: EmbodimentProfile | None = None,
) -> MetricReport:
    cache: dict = {}
    rows = []
    for ref in manifest.select("test"):
        track, start = _chunk_human_track(ref, cache)
        for seed in seeds:
            trace = oracle_rollout(track, start, seed, mood=mood, profile=profile)
            rows.append({"chunk": (ref.episode_path, ref.start), "seed": seed,
                         "metrics": trace.metrics()})
    return _aggregate("scripted_oracle", seeds, rows)


GRID_VARIANTS = ("ours", "window_50", "window_75", "baseline_transformer",
                 "no_human", "no_commands", "with_pe_dropout")


def ablation_grid(
    manifest: DatasetManifest,
    out_dir: str | Path,
    model_cfg=None,
    train_cfg=None,
    seeds=(0, 1, 2),
    variants=GRID_VARIANTS,
    reuse_existing: bool = True,
) -> dict[str, MetricReport]:
    """Train and evaluate every variant with shared data and seeds."""
    from dataclasses import replace as dc_replace

    from .model.network import ModelConfig
    from .trainer import TrainConfig, make_variant, train

    out_dir = Path(out_dir)
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    reports: dict[str, MetricReport] = {}
    for variant in variants:
        run_dir = out_dir / variant
        ckpt_path = run_dir / "model.ckpt"
        if not (reuse_existing and ckpt_path.exists()):
            cfg = make_variant(variant, model_cfg)
            t0 = time.perf_counter()
            train(manifest, cfg, dc_replace(train_cfg, variant=variant), run_dir)
            log.info("trained %s in %.1f min", variant, (time.perf_counter() - t0) / 60)
        reports[variant] = run_eval(ckpt_path, manifest, seeds=seeds, variant=variant)
    return reports


def grid_to_text(reports: dict[str, MetricReport]) -> str:
    lines = [REPORT_HEADER]
    lines += [reports[v].row() for v in reports]
    return "\n".join(lines)


def report_to_kv(reports: dict[str, MetricReport], path: str | Path) -> None:
    """Machine-readable key-value report document (versioned)."""
    lines = ["report_version = 1"]
    for v, r in reports.items():
        for k in ("fae_mean", "fae_std", "te_mean", "te_std", "msd_mean", "msd_std",
                  "msd_raw_mean"):
            lines.append(f"{v}.{k} = {getattr(r, k)!r}")
        lines.append(f"{v}.n_rollouts = {r.n_rollouts}")
        lines.append(f"{v}.seeds = {','.join(str(s) for s in r.seeds)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# diversity probe


class _ZeroNoise:
    """Generator stand-in that forces every Gaussian draw to zero."""

    def standard_normal(self, size=None, dtype=np.float64):
        return np.zeros(size if size is not None else (), dtype=dtype)


@dataclass
class DiversityResult:
    traces: list  # (F, 2) x-y robot paths
    endpoints: np.ndarray  # (n, 2)
    max_pairwise_endpoint_distance: float
    mean_pairwise_endpoint_distance: float


def diversity_probe(
    checkpoint: Checkpoint | str | Path,
    n_runs: int = 8,
    duration_s: float = 10.0,
    zero_noise: bool = False,
    start_xy_yaw=(0.0, 0.0, 0.0),
    human_xy=(2.0, 0.8),
) -> DiversityResult:
    """Fixed start pose and fixed human position; different sampling seeds."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    n_frames = int(round(duration_s / DT))
    human = Pose(np.array([human_xy[0], human_xy[1], 1.7]))
    track = PoseTrack.from_poses([human] * n_frames)
    start = Pose.from_xyyaw(*start_xy_yaw, z=0.35).as_array()
    factory = (lambda seed: _ZeroNoise()) if zero_noise else None
    traces = []
    for seed in range(n_runs):
        trace = model_rollout(checkpoint, track, start, seed, rng_factory=factory)
        traces.append(trace.robot[:, :2])
    endpoints = np.stack([t[-1] for t in traces])
    diffs = np.linalg.norm(endpoints[:, None] - endpoints[None, :], axis=-1)
    iu = np.triu_indices(n_runs, k=1)
    return DiversityResult(
        traces=traces,
        endpoints=endpoints,
        max_pairwise_endpoint_distance=float(diffs[iu].max()),
        mean_pairwise_endpoint_distance=float(diffs[iu].mean()),
    )


def write_traces(result: DiversityResult, out_dir: str | Path) -> None:
    """One frame-per-line text file per rollout, consumable by any plotter."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, tr in enumerate(result.traces):
        lines = [f"{j * DT:.3f} {x:.6f} {y:.6f}" for j, (x, y) in enumerate(tr)]
        (out_dir / f"trace_{i:02d}.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# discrete-head scoring (teacher-forced at the final reverse step)


@dataclass
class ClassificationReport:
    mode_accuracy: float
    behavior_macro_recall: float  # over non-NONE classes present in the split
    per_class_recall: dict
    n_windows: int


def classification_report(
    checkpoint: Checkpoint | str | Path,
    manifest: DatasetManifest,
    split: str = "test",
    stride: int = 5,
    seed: int = 0,
    batch_size: int = 256,
) -> ClassificationReport:
    """Teacher-forced readout: noise the true future to t=1 (the step the
    runtime reads logits at) and score the heads against window labels."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    cfg = checkpoint.config
    windows = windows_for_split(manifest, split, stride=stride,
                                m=cfg.m_past, n=cfg.n_future)
    if not windows:
        raise DataError(f"no {split} windows")
    tensors = stack_windows(windows)
    params = wrap_params(checkpoint.params, trainable=False)
    rng = np.random.default_rng(seed)
    n = len(tensors["behavior"])
    pred_b = np.empty(n, dtype=np.int64)
    pred_m = np.empty(n, dtype=np.int64)
    for lo in range(0, n, batch_size):
        sl = slice(lo, min(lo + batch_size, n))
        rel = checkpoint.norm_stats.normalize_positions(tensors["past_rel"][sl])
        cond = encode_conditions(params, cfg, rel, tensors["past_cmd"][sl])
        if cfg.diffusion:
            future = tensors["future_cmd"][sl]
            eps = rng.standard_normal(future.shape).astype(future.dtype)
            x1 = q_sample(future, 1, eps, checkpoint.schedule)
            out = forward(params, cfg, x1, 1, cond)
        else:
            out = forward_baseline(params, cfg, cond)
        pred_b[sl] = np.argmax(out.behavior_logits.data, axis=-1)
        pred_m[sl] = np.argmax(out.mode_logits.data, axis=-1)

    true_b = tensors["behavior"]
    true_m = tensors["mode"]
    mode_acc = float(np.mean(pred_m == true_m))
    recalls = {}
    for cls in sorted(set(true_b.tolist())):
        if cls == int(BehaviorKind.NONE):
            continue
        mask = true_b == cls
        recalls[BehaviorKind(cls).name] = float(np.mean(pred_b[mask] == cls))
    macro = float(np.mean(list(recalls.values()))) if recalls else float("nan")
    return ClassificationReport(
        mode_accuracy=mode_acc,
        behavior_macro_recall=macro,
        per_class_recall=recalls,
        n_windows=n,
    )

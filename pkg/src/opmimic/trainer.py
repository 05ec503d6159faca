"""Optimization loop, variant factory, and checkpointing.

Every variant trains through the identical loop; `make_variant` only
rewires the model config, so ablation deltas are attributable to the
wiring. Runs are reproducible: all randomness derives from
``TrainConfig.seed`` through named substreams, and single-thread mode pins
BLAS to one thread for bit-exact checkpoint hashes.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import (
    DatasetManifest,
    NormStats,
    stack_windows,
    windows_for_split,
)
from .errors import DataError, NumericError, ValidationError
from .model.autodiff import keep_large_allocations_on_heap
from .model.checkpoint import save_checkpoint
from .model.diffusion import make_schedule, q_sample
from .model.network import (
    ClassWeights,
    ModelConfig,
    encode_conditions,
    forward,
    forward_baseline,
    init_params,
    inverse_frequency_weights,
    losses,
    wrap_params,
)

log = logging.getLogger(__name__)

VARIANTS = (
    "ours",
    "baseline_transformer",
    "no_human",
    "no_commands",
    "with_pe_dropout",
    "window_25",
    "window_50",
    "window_75",
)


def make_variant(variant: str, base: ModelConfig | None = None) -> ModelConfig:
    """Model wiring for one ablation tag; everything else stays identical."""
    cfg = base or ModelConfig()
    if variant in ("ours", "window_25"):
        return cfg
    if variant == "window_50":
        return replace(cfg, n_future=50)
    if variant == "window_75":
        return replace(cfg, n_future=75)
    if variant == "no_human":
        return replace(cfg, use_human_tokens=False)
    if variant == "no_commands":
        # no command tokens: nothing to mask, so guidance degenerates
        return replace(cfg, use_cmd_tokens=False, cond_drop_prob=0.0, guidance_scale=1.0)
    if variant == "with_pe_dropout":
        return replace(cfg, pe_dropout=0.1)
    if variant == "baseline_transformer":
        # plain regression: no diffusion loop, no masking, no guidance
        return replace(cfg, diffusion=False, cond_drop_prob=0.0, guidance_scale=1.0)
    raise ValidationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500  # desk-scale default; the reference run used 5000
    batch_size: int = 128
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    variant: str = "ours"
    stride: int = 5
    val_fraction: float = 0.1  # of train chunks, for plateau detection
    val_every: int = 5  # epochs between held-out evaluations
    early_stop_patience: int = 50  # epochs without val improvement; 0 disables
    plateau_rel_delta: float = 0.003  # improvement below this fraction of best counts as plateau
    checkpoint_every: int = 50
    single_thread: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValidationError("epochs, batch size, and lr must be positive")


@dataclass
class TrainResult:
    checkpoint_path: Path
    checkpoint_hash: str
    epochs_run: int
    first_epoch_loss: float
    final_epoch_loss: float
    best_val_loss: float | None
    history: list = field(default_factory=list)  # (epoch, mean loss) pairs


class Adam:
    """Adaptive-moment estimation with bias correction.

    Moment state lives in one flat buffer; the update is a handful of
    vectorized passes instead of per-parameter numpy calls.
    """

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.names = sorted(params)
        self.slices: dict[str, slice] = {}
        off = 0
        for k in self.names:
            n = params[k].size
            self.slices[k] = slice(off, off + n)
            off += n
        dt = next(iter(params.values())).dtype
        self.m = np.zeros(off, dtype=dt)
        self.v = np.zeros(off, dtype=dt)
        self._g = np.zeros(off, dtype=dt)
        self.cfg = cfg
        self.step_count = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.step_count += 1
        bc1 = 1.0 - c.beta1 ** self.step_count
        bc2 = 1.0 - c.beta2 ** self.step_count
        g = self._g
        for k in self.names:
            gk = grads.get(k)
            sl = self.slices[k]
            if gk is None:
                g[sl] = 0.0
            else:
                g[sl] = gk.reshape(-1)
        self.m *= c.beta1
        self.m += (1.0 - c.beta1) * g
        self.v *= c.beta2
        np.multiply(g, g, out=g)
        self.v += (1.0 - c.beta2) * g
        np.divide(self.v, bc2, out=g)
        np.sqrt(g, out=g)
        g += c.adam_eps
        np.divide(self.m, g, out=g)
        g *= c.lr / bc1
        for k in self.names:
            params[k] -= g[self.slices[k]].reshape(params[k].shape)


def _train_val_chunks(manifest: DatasetManifest, cfg: TrainConfig):
    train_refs = manifest.select("train")
    if len(train_refs) >= 2 and cfg.val_fraction > 0 and cfg.early_stop_patience > 0:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7A1]))
        order = rng.permutation(len(train_refs))
        n_val = max(1, int(round(cfg.val_fraction * len(train_refs))))
        n_val = min(n_val, len(train_refs) - 1)
        val_idx = set(order[:n_val].tolist())
        fit = [r for i, r in enumerate(train_refs) if i not in val_idx]
        val = [r for i, r in enumerate(train_refs) if i in val_idx]
        return fit, val
    return list(train_refs), []


def _tensors_for(manifest: DatasetManifest, refs, stride, m, n):
    sub = DatasetManifest(chunks=refs, stats=manifest.stats, seed=manifest.seed,
                          fraction=manifest.fraction)
    for r in refs:
        if r.length < m + n:
            raise DataError("chunk too short for one window")
    windows = windows_for_split(sub, refs[0].split if refs else "train", stride=stride, m=m, n=n)
    return stack_windows(windows)


def _batch_loss(params_t, model_cfg, schedule, tensors, idx, rngs, stats, weights,
                train_mode=True):
    """Forward + loss for one batch of window indices; returns (loss, parts)."""
    past_rel = tensors["past_rel"][idx].copy()
    past_cmd = tensors["past_cmd"][idx]
    future = tensors["future_cmd"][idx]
    beh = tensors["behavior"][idx]
    mode = tensors["mode"][idx]
    b = len(idx)

    # height augmentation in metres, then fixed workspace normalization
    u = rngs["augment"].uniform(-0.3, 0.3, size=b).astype(past_rel.dtype)
    past_rel[:, :, 2] += u[:, None]
    past_rel = stats.normalize_positions(past_rel)

    pe_rng = rngs["pe_dropout"] if (train_mode and model_cfg.pe_dropout > 0) else None
    if model_cfg.diffusion:
        t = rngs["t"].integers(1, model_cfg.t_steps + 1, size=b)
        eps = rngs["eps"].standard_normal(future.shape).astype(future.dtype)
        x_t = q_sample(future, t, eps, schedule)
        drop = (rngs["drop"].uniform(size=b) < model_cfg.cond_drop_prob
                if model_cfg.use_cmd_tokens else False)
        cond = encode_conditions(params_t, model_cfg, past_rel, past_cmd,
                                 drop_cmd=drop, train_rng=pe_rng)
        out = forward(params_t, model_cfg, x_t, t, cond, train_rng=pe_rng, nan_guard=False)
    else:
        cond = encode_conditions(params_t, model_cfg, past_rel, past_cmd,
                                 drop_cmd=False, train_rng=pe_rng)
        out = forward_baseline(params_t, model_cfg, cond, train_rng=pe_rng, nan_guard=False)
    return losses(out, future, beh, mode, weights, model_cfg)


def _substreams(seed: int, names: tuple[str, ...]) -> dict[str, np.random.Generator]:
    seq = np.random.SeedSequence(seed)
    children = seq.spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


_STREAMS = ("init", "shuffle", "t", "eps", "drop", "augment", "pe_dropout", "val")


def class_weights_from_tensors(tensors, cfg: ModelConfig) -> ClassWeights:
    return ClassWeights(
        behavior=inverse_frequency_weights(tensors["behavior"], cfg.k_behavior),
        mode=inverse_frequency_weights(tensors["mode"], cfg.k_mode),
    )


def train(
    manifest: DatasetManifest,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir: str | Path,
    class_weights: ClassWeights | None = None,
) -> TrainResult:
    """Train one variant; writes checkpoints and an append-only loss log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    keep_large_allocations_on_heap()

    limiter = None
    if train_cfg.single_thread:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=1)
    try:
        return _train_inner(manifest, model_cfg, train_cfg, out_dir, class_weights)
    finally:
        if limiter is not None:
            limiter.unregister()


def _train_inner(manifest, model_cfg, train_cfg, out_dir, class_weights) -> TrainResult:
    fit_refs, val_refs = _train_val_chunks(manifest, train_cfg)
    tensors = _tensors_for(manifest, fit_refs, train_cfg.stride,
                           model_cfg.m_past, model_cfg.n_future)
    val_tensors = (_tensors_for(manifest, val_refs, train_cfg.stride,
                                model_cfg.m_past, model_cfg.n_future)
                   if val_refs else None)
    n_windows = len(tensors["behavior"])
    if n_windows < 1:
        raise DataError("manifest has no training windows")
    weights = class_weights or class_weights_from_tensors(tensors, model_cfg)

    rngs = _substreams(train_cfg.seed, _STREAMS)
    params = init_params(model_cfg, rngs["init"])
    schedule = make_schedule(model_cfg.t_steps) if model_cfg.diffusion else None
    adam = Adam(params, train_cfg)

    log_path = out_dir / "train_log.csv"
    log_file = open(log_path, "a", encoding="utf-8")
    log_file.write("epoch,step,loss,mse,wce_b,wce_m\n")
    val_file = open(out_dir / "val_log.csv", "a", encoding="utf-8")
    val_file.write("epoch,val_loss\n")

    history: list[tuple[int, float]] = []
    best_val = None
    epochs_since_best = 0
    first_epoch_loss = None
    epoch_loss = float("nan")
    epochs_run = 0
    t_start = time.perf_counter()

    try:
        for epoch in range(1, train_cfg.epochs + 1):
            order = rngs["shuffle"].permutation(n_windows)
            step_losses = []
            for step_i, lo in enumerate(range(0, n_windows, train_cfg.batch_size)):
                idx = order[lo:lo + train_cfg.batch_size]
                params_t = wrap_params(params, trainable=True)
                total, parts = _batch_loss(params_t, model_cfg, schedule, tensors, idx,
                                           rngs, manifest.stats, weights)
                if not np.isfinite(parts["loss"]):
                    info = {"seed": train_cfg.seed, "epoch": epoch, "step": step_i,
                            "variant": train_cfg.variant,
                            "batch_indices": idx.tolist()}
                    (out_dir / "abort_info.json").write_text(json.dumps(info, indent=2))
                    raise NumericError(
                        f"loss went non-finite at epoch {epoch} step {step_i}; "
                        f"replay info in {out_dir / 'abort_info.json'}")
                total.backward()
                adam.step(params, {k: t.grad for k, t in params_t.items()})
                step_losses.append(parts["loss"])
                log_file.write(f"{epoch},{step_i},{parts['loss']:.6f},{parts['mse']:.6f},"
                               f"{parts['wce_b']:.6f},{parts['wce_m']:.6f}\n")

            epoch_loss = float(np.mean(step_losses))
            history.append((epoch, epoch_loss))
            epochs_run = epoch
            if first_epoch_loss is None:
                first_epoch_loss = epoch_loss

            if val_tensors is not None and epoch % train_cfg.val_every == 0:
                val_loss = _validation_loss(params, model_cfg, schedule, val_tensors,
                                            manifest.stats, weights, train_cfg)
                val_file.write(f"{epoch},{val_loss:.6f}\n")
                val_file.flush()
                min_delta = (0.0 if best_val is None
                             else max(1e-6, train_cfg.plateau_rel_delta * abs(best_val)))
                if best_val is None or val_loss < best_val - min_delta:
                    best_val = val_loss
                    epochs_since_best = 0
                else:
                    epochs_since_best += train_cfg.val_every
                if (train_cfg.early_stop_patience > 0
                        and epochs_since_best >= train_cfg.early_stop_patience):
                    log.info("early stop at epoch %d (val plateau %.6f)", epoch, best_val)
                    break

            if epoch % train_cfg.checkpoint_every == 0 and epoch < train_cfg.epochs:
                _save(out_dir / f"ckpt_epoch{epoch:05d}.ckpt", params, model_cfg,
                      schedule, manifest, train_cfg, weights, epoch)
            if epoch % 10 == 0 or epoch == 1:
                log.info("epoch %d/%d loss %.5f (%.1f s)", epoch, train_cfg.epochs,
                         epoch_loss, time.perf_counter() - t_start)
    finally:
        log_file.close()
        val_file.close()

    final_path = out_dir / "model.ckpt"
    wall_minutes = (time.perf_counter() - t_start) / 60.0
    digest = _save(final_path, params, model_cfg, schedule, manifest, train_cfg,
                   weights, epochs_run, wall_minutes=wall_minutes)
    return TrainResult(
        checkpoint_path=final_path,
        checkpoint_hash=digest,
        epochs_run=epochs_run,
        first_epoch_loss=float(first_epoch_loss),
        final_epoch_loss=float(epoch_loss),
        best_val_loss=best_val,
        history=history,
    )


def _validation_loss(params, model_cfg, schedule, val_tensors, stats, weights,
                     train_cfg) -> float:
    """Held-out loss with a fixed rng so successive evaluations compare."""
    rngs = _substreams(train_cfg.seed ^ 0x5EED, _STREAMS)
    params_t = wrap_params(params, trainable=False)
    n = len(val_tensors["behavior"])
    total, count = 0.0, 0
    for lo in range(0, n, train_cfg.batch_size):
        idx = np.arange(lo, min(lo + train_cfg.batch_size, n))
        _, parts = _batch_loss(params_t, model_cfg, schedule, val_tensors, idx,
                               rngs, stats, weights, train_mode=False)
        total += parts["loss"] * len(idx)
        count += len(idx)
    return total / count


def _save(path, params, model_cfg, schedule, manifest, train_cfg, weights, epoch,
          wall_minutes: float | None = None) -> str:
    volatile = {"wall_minutes": round(wall_minutes, 3) if wall_minutes is not None else None}
    meta = {
        "variant": train_cfg.variant,
        "seed": train_cfg.seed,
        "epoch": epoch,
        "train_config": {
            "epochs": train_cfg.epochs, "batch_size": train_cfg.batch_size,
            "lr": train_cfg.lr, "beta1": train_cfg.beta1, "beta2": train_cfg.beta2,
            "adam_eps": train_cfg.adam_eps, "stride": train_cfg.stride,
        },
        "class_weights": {"behavior": weights.behavior.tolist(),
                          "mode": weights.mode.tolist()},
        "init": "trunc_normal(0.02) embeddings/heads, normal(1/sqrt(fan_in)) attn/ff",
    }
    return save_checkpoint(path, params, model_cfg, schedule, manifest.stats, meta,
                           volatile=volatile)

"""The conditional transformer: condition encoding, post-encoding masking,
forward pass, and the combined training loss.

Token layout (diffusion path):

    [ pose 0..M-1 | cmd 0..M-1 | step | q_behavior | q_mode | x_t 0..N-1 ]

The clean-window prediction is read from the x_t token outputs, the two
classification logits from the query-token outputs. The deterministic
baseline variant drops the diffusion machinery and reads the window from N
learned output-query tokens instead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from ..errors import NumericError, ValidationError
from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 128
    ff_dim: int = 256
    heads: int = 2
    layers: int = 2
    m_past: int = 15
    n_future: int = 25
    j_channels: int = 10
    t_steps: int = 8
    k_behavior: int = 9  # 8 event kinds + none
    k_mode: int = 2
    cond_drop_prob: float = 0.1
    guidance_scale: float = 2.0
    use_human_tokens: bool = True
    use_cmd_tokens: bool = True
    pe_dropout: float = 0.0
    diffusion: bool = True
    loss_behavior_weight: float = 0.1
    loss_mode_weight: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        if self.latent_dim <= 0 or self.ff_dim <= 0 or self.layers <= 0:
            raise ValidationError("model dimensions must be positive")
        if self.latent_dim % self.heads != 0:
            raise ValidationError("latent_dim must be divisible by heads")
        if not (self.use_human_tokens or self.use_cmd_tokens):
            raise ValidationError("at least one condition token group is required")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


@dataclass
class ConditionTokens:
    """Encoded condition tokens; command tokens already carry any masking."""

    pose_tokens: Optional[Tensor]  # (B, M, D) or None
    cmd_tokens: Optional[Tensor]  # (B, M, D) or None
    drop_mask: Optional[np.ndarray]  # (B,) bool, the mask that was applied
    batch: int


@dataclass
class ModelOutput:
    x0_hat: Tensor  # (B, N, j)
    behavior_logits: Tensor  # (B, K_b)
    mode_logits: Tensor  # (B, K_m)


def sinusoidal_positions(n: int, dim: int, dtype) -> np.ndarray:
    """Fixed sin/cos positional table, (n, dim)."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    out = np.zeros((n, dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out.astype(dtype)


def _trunc_normal(rng, shape, std, dtype):
    return np.clip(rng.normal(0.0, std, size=shape), -2.0 * std, 2.0 * std).astype(dtype)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Named parameter arrays; shapes are fixed by the config."""
    dt = cfg.np_dtype
    d, f = cfg.latent_dim, cfg.ff_dim
    p: dict[str, np.ndarray] = {}

    def linear(name, n_in, n_out, std=None):
        std = std if std is not None else 1.0 / np.sqrt(n_in)
        p[f"{name}.w"] = rng.normal(0.0, std, size=(n_in, n_out)).astype(dt)
        p[f"{name}.b"] = np.zeros(n_out, dtype=dt)

    if cfg.use_human_tokens:
        linear("encode.pose", 7, d, std=0.02)
    if cfg.use_cmd_tokens:
        linear("encode.cmd", 10, d, std=0.02)
        p["encode.cmd_null"] = _trunc_normal(rng, (d,), 0.02, dt)
    if cfg.diffusion:
        linear("encode.xt", cfg.j_channels, d, std=0.02)
        p["encode.step"] = _trunc_normal(rng, (cfg.t_steps, d), 0.02, dt)
    else:
        p["encode.out_queries"] = _trunc_normal(rng, (cfg.n_future, d), 0.02, dt)
    p["query.behavior"] = rng.normal(0.0, 0.02, size=(d,)).astype(dt)
    p["query.mode"] = rng.normal(0.0, 0.02, size=(d,)).astype(dt)

    for l in range(cfg.layers):
        for name in ("wq", "wk", "wv", "wo"):
            linear(f"layer{l}.attn.{name[1:]}", d, d)
        p[f"layer{l}.ln1.g"] = np.ones(d, dtype=dt)
        p[f"layer{l}.ln1.b"] = np.zeros(d, dtype=dt)
        linear(f"layer{l}.ff.in", d, f)
        linear(f"layer{l}.ff.out", f, d)
        p[f"layer{l}.ln2.g"] = np.ones(d, dtype=dt)
        p[f"layer{l}.ln2.b"] = np.zeros(d, dtype=dt)

    linear("head.x0", d, cfg.j_channels, std=0.02)
    linear("head.behavior", d, cfg.k_behavior, std=0.02)
    linear("head.mode", d, cfg.k_mode, std=0.02)
    return p


def parameter_groups(params: dict[str, np.ndarray]) -> dict[str, list[str]]:
    """Logical groups (encoder, per-layer attn/ff/norms, queries, heads)."""
    groups: dict[str, list[str]] = {}
    for name in params:
        head = name.rsplit(".", 1)[0]
        groups.setdefault(head, []).append(name)
    return groups


def wrap_params(params: dict[str, np.ndarray], trainable: bool) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=trainable) for k, v in params.items()}


def _nan_check(name: str, t: Tensor, enabled: bool) -> None:
    if enabled and not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite activations in {name}")


def _linear(p: dict[str, Tensor], name: str, x: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def encode_conditions(
    p: dict[str, Tensor],
    cfg: ModelConfig,
    past_human_rel: np.ndarray,
    past_cmd: np.ndarray,
    drop_cmd: np.ndarray | bool = False,
    train_rng: Optional[np.random.Generator] = None,
) -> ConditionTokens:
    """Embed condition histories into tokens.

    ``drop_cmd`` applies classifier-free-guidance masking: every command
    token is replaced, after encoding and positional offsets, by the single
    learned null embedding, so genuinely zero-valued command histories stay
    distinguishable from "no conditioning".
    """
    dt = cfg.np_dtype
    past_human_rel = np.asarray(past_human_rel, dtype=dt)
    past_cmd = np.asarray(past_cmd, dtype=dt)
    if past_human_rel.ndim == 2:
        past_human_rel = past_human_rel[None]
    if past_cmd.ndim == 2:
        past_cmd = past_cmd[None]
    b = max(past_human_rel.shape[0], past_cmd.shape[0])
    if past_human_rel.shape[1:] != (cfg.m_past, 7):
        raise ValidationError(f"expected pose history (B, {cfg.m_past}, 7), "
                              f"got {past_human_rel.shape}")
    if past_cmd.shape[1:] != (cfg.m_past, cfg.j_channels):
        raise ValidationError(f"expected command history (B, {cfg.m_past}, "
                              f"{cfg.j_channels}), got {past_cmd.shape}")

    pe = sinusoidal_positions(2 * cfg.m_past + 3 + cfg.n_future, cfg.latent_dim, dt)

    def with_pe(tokens: Tensor, offset: int, count: int) -> Tensor:
        out = ad.add(tokens, pe[offset:offset + count])
        if cfg.pe_dropout > 0.0 and train_rng is not None:
            out = ad.dropout(out, cfg.pe_dropout, train_rng)
        return out

    pose_tokens = None
    if cfg.use_human_tokens:
        pose_tokens = with_pe(_linear(p, "encode.pose", Tensor(past_human_rel)), 0, cfg.m_past)

    cmd_tokens = None
    mask = None
    if cfg.use_cmd_tokens:
        cmd_tokens = with_pe(_linear(p, "encode.cmd", Tensor(past_cmd)), cfg.m_past, cfg.m_past)
        mask = np.broadcast_to(np.asarray(drop_cmd, dtype=bool), (b,)).copy()
        if mask.any():
            cmd_tokens = ad.where_mask(mask[:, None, None], p["encode.cmd_null"], cmd_tokens)

    return ConditionTokens(pose_tokens=pose_tokens, cmd_tokens=cmd_tokens,
                           drop_mask=mask, batch=b)


def _encoder_stack(p: dict[str, Tensor], cfg: ModelConfig, x: Tensor,
                   nan_guard: bool) -> Tensor:
    b, s, d = x.shape
    h, dh = cfg.heads, cfg.latent_dim // cfg.heads
    inv_sqrt = float(1.0 / np.sqrt(dh))
    for l in range(cfg.layers):
        q = _linear(p, f"layer{l}.attn.q", x)
        k = _linear(p, f"layer{l}.attn.k", x)
        v = _linear(p, f"layer{l}.attn.v", x)

        def heads(t: Tensor) -> Tensor:
            return ad.swapaxes(ad.reshape(t, (b, s, h, dh)), 1, 2)

        scores = ad.mul(ad.matmul(heads(q), ad.swapaxes(heads(k), -1, -2)), inv_sqrt)
        att = ad.softmax(scores, axis=-1)
        mixed = ad.reshape(ad.swapaxes(ad.matmul(att, heads(v)), 1, 2), (b, s, d))
        attn_out = _linear(p, f"layer{l}.attn.o", mixed)
        x = ad.layer_norm(ad.add(x, attn_out), p[f"layer{l}.ln1.g"], p[f"layer{l}.ln1.b"])
        _nan_check(f"layer{l}.attn", x, nan_guard)

        ff = _linear(p, f"layer{l}.ff.out", ad.gelu(_linear(p, f"layer{l}.ff.in", x)))
        x = ad.layer_norm(ad.add(x, ff), p[f"layer{l}.ln2.g"], p[f"layer{l}.ln2.b"])
        _nan_check(f"layer{l}.ff", x, nan_guard)
    return x


def _tile(t: Tensor, b: int, d: int) -> Tensor:
    ones = np.ones((b, 1, 1), dtype=t.dtype)
    return ad.mul(ad.reshape(t, (1, 1, d)), Tensor(ones))


def forward(
    p: dict[str, Tensor],
    cfg: ModelConfig,
    x_t: np.ndarray,
    t: np.ndarray | int,
    cond: ConditionTokens,
    train_rng: Optional[np.random.Generator] = None,
    nan_guard: bool = True,
) -> ModelOutput:
    """Denoising pass: predict the clean window plus classification logits."""
    if not cfg.diffusion:
        raise ValidationError("forward() is the diffusion path; use forward_baseline")
    dt = cfg.np_dtype
    x_t = np.asarray(x_t, dtype=dt)
    if x_t.ndim == 2:
        x_t = x_t[None]
    b = x_t.shape[0]
    if x_t.shape[1:] != (cfg.n_future, cfg.j_channels):
        raise ValidationError(f"expected x_t (B, {cfg.n_future}, {cfg.j_channels}), "
                              f"got {x_t.shape}")
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (b,))
    if np.any(t_arr < 1) or np.any(t_arr > cfg.t_steps):
        raise ValidationError(f"diffusion step out of range 1..{cfg.t_steps}")

    d = cfg.latent_dim
    pe = sinusoidal_positions(2 * cfg.m_past + 3 + cfg.n_future, d, dt)
    xt_offset = 2 * cfg.m_past + 3

    parts: list[Tensor] = []
    if cond.pose_tokens is not None:
        parts.append(cond.pose_tokens)
    if cond.cmd_tokens is not None:
        parts.append(cond.cmd_tokens)
    parts.append(ad.embedding(p["encode.step"], t_arr - 1).reshape(b, 1, d))
    parts.append(_tile(p["query.behavior"], b, d))
    parts.append(_tile(p["query.mode"], b, d))
    xt_tokens = ad.add(_linear(p, "encode.xt", Tensor(x_t)),
                       pe[xt_offset:xt_offset + cfg.n_future])
    if cfg.pe_dropout > 0.0 and train_rng is not None:
        xt_tokens = ad.dropout(xt_tokens, cfg.pe_dropout, train_rng)
    parts.append(xt_tokens)

    seq = ad.concat(parts, axis=1)
    out = _encoder_stack(p, cfg, seq, nan_guard)

    s = out.shape[1]
    n = cfg.n_future
    x0_hat = _linear(p, "head.x0", ad.index(out, (slice(None), slice(s - n, s))))
    behavior = _linear(p, "head.behavior", ad.index(out, (slice(None), s - n - 2)))
    mode = _linear(p, "head.mode", ad.index(out, (slice(None), s - n - 1)))
    _nan_check("head", x0_hat, True)
    return ModelOutput(x0_hat=x0_hat, behavior_logits=behavior, mode_logits=mode)


def forward_baseline(
    p: dict[str, Tensor],
    cfg: ModelConfig,
    cond: ConditionTokens,
    train_rng: Optional[np.random.Generator] = None,
    nan_guard: bool = True,
) -> ModelOutput:
    """Deterministic regression path: no diffusion step, no noisy window."""
    if cfg.diffusion:
        raise ValidationError("forward_baseline() requires a diffusion=False config")
    b, d, n = cond.batch, cfg.latent_dim, cfg.n_future
    parts: list[Tensor] = []
    if cond.pose_tokens is not None:
        parts.append(cond.pose_tokens)
    if cond.cmd_tokens is not None:
        parts.append(cond.cmd_tokens)
    parts.append(_tile(p["query.behavior"], b, d))
    parts.append(_tile(p["query.mode"], b, d))
    parts.append(_tile_table(p["encode.out_queries"], b))
    seq = ad.concat(parts, axis=1)
    out = _encoder_stack(p, cfg, seq, nan_guard)
    s = out.shape[1]
    x0_hat = _linear(p, "head.x0", ad.index(out, (slice(None), slice(s - n, s))))
    behavior = _linear(p, "head.behavior", ad.index(out, (slice(None), s - n - 2)))
    mode = _linear(p, "head.mode", ad.index(out, (slice(None), s - n - 1)))
    _nan_check("head", x0_hat, True)
    return ModelOutput(x0_hat=x0_hat, behavior_logits=behavior, mode_logits=mode)


def _tile_table(t: Tensor, b: int) -> Tensor:
    n, d = t.shape
    ones = np.ones((b, 1, 1), dtype=t.dtype)
    return ad.mul(ad.reshape(t, (1, n, d)), Tensor(ones))


# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class ClassWeights:
    behavior: np.ndarray
    mode: np.ndarray

    @staticmethod
    def uniform(cfg: ModelConfig) -> "ClassWeights":
        return ClassWeights(np.ones(cfg.k_behavior), np.ones(cfg.k_mode))


def inverse_frequency_weights(labels: np.ndarray, n_classes: int,
                              clip: tuple[float, float] = (1.0, 50.0)) -> np.ndarray:
    """Inverse class frequency, clipped, renormalized to mean 1.

    Classes absent from the training split get the clip maximum (with a
    warning) before renormalization.
    """
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes).astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise ValidationError("no labels given")
    weights = np.empty(n_classes)
    present = counts > 0
    weights[present] = total / counts[present]
    if not np.all(present):
        missing = [int(i) for i in np.nonzero(~present)[0]]
        warnings.warn(f"classes {missing} absent from training split; "
                      f"weight set to clip maximum {clip[1]}")
        weights[~present] = clip[1]
    weights = np.clip(weights, clip[0], clip[1])
    return weights / weights.mean()


def losses(
    output: ModelOutput,
    target_x0: np.ndarray,
    behavior_labels: np.ndarray,
    mode_labels: np.ndarray,
    class_weights: ClassWeights,
    cfg: ModelConfig,
) -> tuple[Tensor, dict[str, float]]:
    """mse + 0.1 * WCE(behavior) + 0.1 * WCE(mode)."""
    dt = cfg.np_dtype
    mse = ad.mse_loss(output.x0_hat, np.asarray(target_x0, dtype=dt))
    wce_b = ad.weighted_cross_entropy(output.behavior_logits,
                                      np.asarray(behavior_labels, dtype=np.int64),
                                      class_weights.behavior)
    wce_m = ad.weighted_cross_entropy(output.mode_logits,
                                      np.asarray(mode_labels, dtype=np.int64),
                                      class_weights.mode)
    total = ad.add(mse, ad.add(ad.mul(wce_b, cfg.loss_behavior_weight),
                               ad.mul(wce_m, cfg.loss_mode_weight)))
    parts = {"mse": float(mse.data), "wce_b": float(wce_b.data),
             "wce_m": float(wce_m.data), "loss": float(total.data)}
    return total, parts

"""Flat key=value configuration with include support and env overrides.

Precedence: command-line ``--set key=value`` flags > ``OPMIMIC_<KEY>``
environment variables (dots become double underscores) > config file >
built-in defaults. Every tunable constant of the pipeline is addressable;
unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import os
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "OPMIMIC_"

# every documented tunable with its default; values are str/int/float/bool
DEFAULTS: dict[str, object] = {
    # arena / world
    "world.arena_half": 3.0,
    "world.profile": "bipod",
    # scripted operator
    "oracle.lag_tau": 0.15,
    "oracle.heading_gain": 1.5,
    "oracle.follow_setpoint": 1.2,
    "oracle.retreat_distance": 0.8,
    "oracle.retreat_closing_speed": 0.3,
    "oracle.stand_band": 0.3,
    "oracle.stand_dwell": 3.0,
    "oracle.mode_hysteresis": 2.0,
    # dataset
    "dataset.stride": 5,
    "dataset.split_fraction": 0.75,
    "dataset.chunk_seconds": 60.0,
    "dataset.norm_scale": 5.0,
    "dataset.norm_clip": 2.0,
    # model
    "model.latent_dim": 128,
    "model.ff_dim": 256,
    "model.heads": 2,
    "model.layers": 2,
    "model.m_past": 15,
    "model.n_future": 25,
    "model.t_steps": 8,
    "model.cond_drop_prob": 0.1,
    "model.guidance_scale": 2.0,
    # trainer
    "train.epochs": 500,
    "train.batch_size": 128,
    "train.lr": 1e-4,
    "train.seed": 0,
    "train.early_stop_patience": 50,
    "train.val_every": 5,
    "train.single_thread": False,
    # controller
    "controller.replan_every": 10,
    "controller.smooth_sigma": 2.0,
    # service
    "serve.port": 8765,
    "serve.host": "127.0.0.1",
    "serve.mood_checkpoints": "",  # "default=path,happy=path,..."
    "serve.lockstep": False,
    "serve.resume_window": 30.0,
}


def _parse_value(raw: str, like: object) -> object:
    if isinstance(like, bool):
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected boolean, got {raw!r}")
    if isinstance(like, int) and not isinstance(like, bool):
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"expected integer, got {raw!r}") from e
    if isinstance(like, float):
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"expected number, got {raw!r}") from e
    return raw


def _read_file(path: Path, seen: set[Path]) -> dict[str, str]:
    if path in seen:
        raise ConfigError(f"config include cycle at {path}")
    seen.add(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("include "):
            inc = (path.parent / line[len("include "):].strip()).resolve()
            out.update(_read_file(inc, seen))
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key = value")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


class Config:
    """Resolved configuration; access values with ``cfg["model.latent_dim"]``."""

    def __init__(self, values: dict[str, object]):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def resolved_text(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values)) + "\n"


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    env: dict | None = None,
) -> Config:
    """Merge defaults, file, environment, and --set overrides (in that order)."""
    env = os.environ if env is None else env
    values = dict(DEFAULTS)

    raw: dict[str, str] = {}
    if path is not None:
        raw.update(_read_file(Path(path).resolve(), set()))
    for key, rawval in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(rawval, DEFAULTS[key])

    for key in DEFAULTS:
        env_key = ENV_PREFIX + key.upper().replace(".", "__")
        if env_key in env:
            values[key] = _parse_value(env[env_key], DEFAULTS[key])

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, rawval = item.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(rawval.strip(), DEFAULTS[key])

    return Config(values)


def mood_checkpoint_map(spec: str) -> dict[str, str]:
    """Parse 'default=path,happy=path' into a mood -> checkpoint mapping."""
    out: dict[str, str] = {}
    if not spec.strip():
        return out
    for part in spec.split(","):
        if "=" not in part:
            raise ConfigError(f"bad mood checkpoint entry {part!r}")
        mood, _, p = part.partition("=")
        out[mood.strip()] = p.strip()
    return out

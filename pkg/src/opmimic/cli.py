"""Command-line entry points for the full pipeline.

Exit codes: 0 ok, 2 config/usage error, 3 data error, 4 numeric failure.
Every run writes a manifest of the resolved configuration and seeds next
to its outputs.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import Config, load_config, mood_checkpoint_map
from .errors import ConfigError, DataError, NumericError, ValidationError

log = logging.getLogger("opmimic")


def _write_run_manifest(out_dir: Path, cfg: Config, extra: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = cfg.resolved_text() + "".join(f"run.{k} = {v}\n" for k, v in extra.items())
    (out_dir / "run_manifest.txt").write_text(text, encoding="utf-8")


def _model_config(cfg: Config):
    from .model.network import ModelConfig

    return ModelConfig(
        latent_dim=cfg["model.latent_dim"],
        ff_dim=cfg["model.ff_dim"],
        heads=cfg["model.heads"],
        layers=cfg["model.layers"],
        m_past=cfg["model.m_past"],
        n_future=cfg["model.n_future"],
        t_steps=cfg["model.t_steps"],
        cond_drop_prob=cfg["model.cond_drop_prob"],
        guidance_scale=cfg["model.guidance_scale"],
    )


def _train_config(cfg: Config, args) -> "TrainConfig":
    from .trainer import TrainConfig

    return TrainConfig(
        epochs=args.epochs if args.epochs else cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        seed=args.seed if args.seed is not None else cfg["train.seed"],
        variant=getattr(args, "variant", "ours"),
        stride=cfg["dataset.stride"],
        early_stop_patience=cfg["train.early_stop_patience"],
        val_every=cfg["train.val_every"],
        single_thread=cfg["train.single_thread"],
    )


def cmd_gen_data(args, cfg: Config) -> int:
    from .dataset import write_episode
    from .scripted_operator import Mood, SESSION_MINUTES, sample_session
    from .world import PROFILES

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    moods = [Mood(args.mood)] if args.mood != "all" else list(Mood)
    profile = PROFILES[cfg["world.profile"]]()
    written = []
    for mood in moods:
        minutes = args.minutes if args.minutes else SESSION_MINUTES[mood]
        episode = sample_session(mood, minutes * 60.0, seed=args.seed, profile=profile)
        path = out_dir / f"{mood.value}_seed{args.seed}.ep"
        write_episode(path, episode)
        written.append(str(path))
        log.info("wrote %s (%d frames)", path, len(episode))
    _write_run_manifest(out_dir, cfg, {"command": "gen-data", "seed": args.seed,
                                       "episodes": ",".join(written)})
    print("\n".join(written))
    return 0


def cmd_split(args, cfg: Config) -> int:
    import glob as globmod

    from .dataset import split_dataset, write_manifest

    paths = sorted(p for pattern in args.episodes for p in globmod.glob(pattern))
    if not paths:
        raise DataError(f"no episodes match {args.episodes}")
    manifest = split_dataset(paths, fraction=cfg["dataset.split_fraction"],
                             seed=args.seed, chunk_seconds=cfg["dataset.chunk_seconds"])
    write_manifest(args.out, manifest)
    n_train = len(manifest.select("train"))
    n_test = len(manifest.select("test"))
    print(f"{args.out}: {n_train} train / {n_test} test chunks from {len(paths)} episodes")
    return 0


def cmd_train(args, cfg: Config) -> int:
    from .dataset import read_manifest
    from .trainer import make_variant, train

    manifest = read_manifest(args.manifest)
    model_cfg = make_variant(args.variant, _model_config(cfg))
    train_cfg = _train_config(cfg, args)
    out_dir = Path(args.out)
    result = train(manifest, model_cfg, train_cfg, out_dir)
    _write_run_manifest(out_dir, cfg, {
        "command": "train", "variant": args.variant, "seed": train_cfg.seed,
        "manifest": args.manifest, "epochs_run": result.epochs_run,
        "checkpoint_hash": result.checkpoint_hash,
    })
    print(f"{result.checkpoint_path} epochs={result.epochs_run} "
          f"loss={result.final_epoch_loss:.5f} hash={result.checkpoint_hash[:12]}")
    return 0


def _parse_seeds(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in raw.split(",") if s.strip() != "")
    except ValueError as e:
        raise ConfigError(f"bad seed list {raw!r}") from e


def cmd_eval(args, cfg: Config) -> int:
    from .dataset import read_manifest
    from .evaluator import grid_to_text, oracle_reference, report_to_kv, run_eval
    from .world import PROFILES

    manifest = read_manifest(args.manifest)
    seeds = _parse_seeds(args.seeds)
    profile = PROFILES[args.profile or cfg["world.profile"]]()
    reports = {}
    report = run_eval(args.checkpoint, manifest, seeds=seeds, profile=profile)
    reports[report.variant] = report
    if args.with_oracle:
        reports["scripted_oracle"] = oracle_reference(manifest, seeds=seeds, profile=profile)
    print(grid_to_text(reports))
    if args.out:
        report_to_kv(reports, args.out)
    return 0


def cmd_ablate(args, cfg: Config) -> int:
    from .dataset import read_manifest
    from .evaluator import GRID_VARIANTS, ablation_grid, grid_to_text, report_to_kv
    from .model.network import ModelConfig
    from .trainer import TrainConfig

    manifest = read_manifest(args.manifest)
    seeds = _parse_seeds(args.seeds)
    if args.smoke:
        model_cfg = ModelConfig(latent_dim=16, ff_dim=32, heads=2, layers=1)
        train_cfg = TrainConfig(epochs=2, batch_size=64, seed=args.seed or 0,
                                early_stop_patience=0)
        seeds = seeds[:1]
    else:
        model_cfg = _model_config(cfg)
        train_cfg = _train_config(cfg, args)
    out_dir = Path(args.out)
    reports = ablation_grid(manifest, out_dir, model_cfg, train_cfg, seeds=seeds)
    table = grid_to_text(reports)
    print(table)
    (out_dir / "ablation_table.txt").write_text(table + "\n")
    report_to_kv(reports, out_dir / "ablation_report.kv")
    _write_run_manifest(out_dir, cfg, {"command": "ablate", "seeds": args.seeds,
                                       "smoke": args.smoke,
                                       "variants": ",".join(GRID_VARIANTS)})
    return 0


def cmd_probe_diversity(args, cfg: Config) -> int:
    from .evaluator import diversity_probe, write_traces

    result = diversity_probe(args.checkpoint, n_runs=args.runs,
                             duration_s=args.seconds, zero_noise=args.zero_noise)
    print(f"max pairwise endpoint distance: "
          f"{result.max_pairwise_endpoint_distance:.3f} m over {args.runs} runs")
    if args.out:
        write_traces(result, args.out)
    return 0


def cmd_export_episode(args, cfg: Config) -> int:
    from .dataset import episode_to_json, read_episode

    episode = read_episode(args.input)
    doc = episode_to_json(episode)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".json")
    out.write_text(json.dumps(doc, indent=1))
    print(out)
    return 0


def cmd_serve(args, cfg: Config) -> int:
    from .service import SessionConfig, serve

    moods = mood_checkpoint_map(cfg["serve.mood_checkpoints"])
    if args.checkpoint:
        moods.setdefault("default", args.checkpoint)
    if not moods:
        raise ConfigError("serve needs --checkpoint or serve.mood_checkpoints")
    session_cfg = SessionConfig(
        mood_checkpoints=moods,
        profile_name=args.profile or cfg["world.profile"],
        lockstep=args.lockstep or cfg["serve.lockstep"],
        resume_window=cfg["serve.resume_window"],
    )
    host = args.host or cfg["serve.host"]
    port = args.port or cfg["serve.port"]
    try:
        asyncio.run(serve(session_cfg, host=host, port=port))
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opmimic",
        description="Human-robot interaction sandbox: data generation, "
                    "diffusion-transformer training, evaluation, and live serving.",
    )
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="record scripted-operator sessions")
    p.add_argument("--mood", default="default",
                   choices=["default", "angry", "sad", "shy", "happy", "all"])
    p.add_argument("--minutes", type=float, default=None,
                   help="override the canonical per-mood session length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="episodes")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("split", help="chunk episodes and write a train/test manifest")
    p.add_argument("episodes", nargs="+", help="episode file globs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="manifest.txt")
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", default="ours")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="runs/ours")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="closed-loop evaluation on test replays")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--profile", default=None)
    p.add_argument("--with-oracle", action="store_true",
                   help="also report the scripted-oracle reference")
    p.add_argument("--out", default=None, help="write machine-readable report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train + evaluate the full variant grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--smoke", action="store_true",
                   help="tiny model, 2 epochs: validates wiring in minutes")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("probe-diversity", help="repeat rollouts from a fixed start")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--runs", type=int, default=8)
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--zero-noise", action="store_true")
    p.add_argument("--out", default=None, help="directory for x-y trace files")
    p.set_defaults(fn=cmd_probe_diversity)

    p = sub.add_parser("serve", help="run the interactive session service")
    p.add_argument("--checkpoint", default=None, help="default-mood checkpoint")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--profile", default=None)
    p.add_argument("--lockstep", action="store_true",
                   help="one tick per received pose (determinism/testing)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("export-episode", help="convert an episode to JSON")
    p.add_argument("input")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_export_episode)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors, 0 on --help
        return int(e.code) if e.code in (0, 2) else 2
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = load_config(args.config, overrides=args.set)
        return args.fn(args, cfg)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except (DataError,) as e:
        print(f"error: data: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: numeric: {e}", file=sys.stderr)
        return 4
    except ValidationError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

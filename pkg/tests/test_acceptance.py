"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Fast numerical criteria run inline. Criteria that need trained models pull
them from the shared artifact cache (built on demand; see _artifacts.py),
so the first run trains at desk scale and later runs score instantly.
Ordering criteria follow the reference comparison table as orderings with
margin, not absolute values, which do not transfer across datasets.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))
import _artifacts as art

from opmimic.controller import gaussian_kernel
from opmimic.dataset import read_manifest
from opmimic.evaluator import (
    classification_report,
    diversity_probe,
    fae,
    msd,
    oracle_reference,
    run_eval,
    te,
)
from opmimic.geometry import quat_from_yaw
from opmimic.model.checkpoint import load_checkpoint
from opmimic.model.diffusion import make_schedule, q_sample, sample_window
from opmimic.model.network import (
    ClassWeights,
    ModelConfig,
    encode_conditions,
    forward,
    init_params,
    losses,
    parameter_groups,
    wrap_params,
)
from opmimic.world import humanoid_profile


def criterion(number: int, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, f"criterion {number}: {detail}"


# ---------------------------------------------------------------------------
# shared artifacts


@pytest.fixture(scope="session")
def default_manifest():
    return read_manifest(art.ensure_default_manifest())


@pytest.fixture(scope="session")
def ours_ckpt():
    return art.ensure_variant("ours")


@pytest.fixture(scope="session")
def ours_report(ours_ckpt, default_manifest):
    return run_eval(ours_ckpt, default_manifest, seeds=(0, 1, 2), variant="ours")


@pytest.fixture(scope="session")
def oracle_report(default_manifest):
    return oracle_reference(default_manifest, seeds=(0, 1, 2))


# ---------------------------------------------------------------------------
# 1. forward-process correctness


def test_criterion_1_forward_process_moments():
    schedule = make_schedule(8)
    rng = np.random.default_rng(1234)
    c = 10.0
    x0 = np.full((25, 10), c, dtype=np.float32)
    n_draws, chunk = 100_000, 10_000
    t_start = time.perf_counter()
    worst = 0.0
    for t in range(1, 9):
        total, total_sq, count = 0.0, 0, 0
        for _ in range(n_draws // chunk):
            eps = rng.standard_normal((chunk, 25, 10), dtype=np.float32)
            xt = q_sample(np.broadcast_to(x0, (chunk, 25, 10)), np.full(chunk, t), eps,
                          schedule)
            total += float(xt.sum())
            total_sq += float((xt.astype(np.float64) ** 2).sum())
            count += xt.size
        mean = total / count
        std = np.sqrt(total_sq / count - mean**2)
        want_mean = np.sqrt(schedule.alpha_bars[t - 1]) * c
        want_std = np.sqrt(1.0 - schedule.alpha_bars[t - 1])
        rel_mean = abs(mean - want_mean) / abs(want_mean)
        rel_std = abs(std - want_std) / want_std
        worst = max(worst, rel_mean, rel_std)
        assert rel_mean <= 0.01 and rel_std <= 0.01, f"t={t}: {rel_mean:.4f}/{rel_std:.4f}"
    elapsed = time.perf_counter() - t_start
    criterion(1, elapsed < 10.0,
              f"q_sample moments within 1% for all t (worst {worst:.2%}), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. schedule identity


def test_criterion_2_schedule_identity():
    s = make_schedule(8)
    gap = float(np.max(np.abs(s.alpha_bars - np.cumprod(1.0 - s.betas))))
    decreasing = bool(np.all(np.diff(s.alpha_bars) < 0))
    tail = float(s.alpha_bars[-1])
    ok = gap <= 1e-12 and decreasing and tail < 0.05
    criterion(2, ok, f"product identity gap {gap:.2e}, strictly decreasing "
                     f"{decreasing}, abar_8 {tail:.4f} < 0.05")


# ---------------------------------------------------------------------------
# 3. gradient check


def test_criterion_3_gradient_check():
    t_start = time.perf_counter()
    cfg = ModelConfig(latent_dim=8, ff_dim=16, heads=1, layers=1, m_past=3, n_future=4,
                      k_behavior=4, k_mode=2, dtype="float64")
    rng = np.random.default_rng(0)
    raw = init_params(cfg, rng)
    batch = {
        "past_rel": rng.normal(size=(3, 3, 7)),
        "past_cmd": rng.uniform(-1, 1, size=(3, 3, 10)),
        "x_t": rng.normal(size=(3, 4, 10)),
        "x0": rng.uniform(-1, 1, size=(3, 4, 10)),
        "t": np.array([1, 4, 8]),
        "drop": np.array([True, False, False]),
        "behavior": np.array([0, 2, 3]),
        "mode": np.array([0, 1, 0]),
    }
    weights = ClassWeights(np.array([0.5, 1.0, 1.5, 1.0]), np.array([0.8, 1.2]))

    def loss_of(p_raw, want_grads=False):
        p = wrap_params(p_raw, trainable=want_grads)
        cond = encode_conditions(p, cfg, batch["past_rel"], batch["past_cmd"],
                                 drop_cmd=batch["drop"])
        out = forward(p, cfg, batch["x_t"], batch["t"], cond)
        total, _ = losses(out, batch["x0"], batch["behavior"], batch["mode"], weights, cfg)
        return p, total

    p, total = loss_of(raw, want_grads=True)
    total.backward()
    analytic = {k: p[k].grad for k in raw}

    h = 1e-4
    pick_rng = np.random.default_rng(1)
    worst = 0.0
    n_checked = 0
    for group, names in parameter_groups(raw).items():
        entries = [(n, i) for n in names for i in range(raw[n].size)]
        for pick in pick_rng.choice(len(entries), size=min(20, len(entries)), replace=False):
            name, i = entries[int(pick)]
            work = {k: v.copy() for k, v in raw.items()}
            flat = work[name].reshape(-1)
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_of(work)[1].data)
            flat[i] = orig - h
            fm = float(loss_of(work)[1].data)
            numeric = (fp - fm) / (2 * h)
            ana = 0.0 if analytic[name] is None else float(analytic[name].reshape(-1)[i])
            rel = abs(numeric - ana) / max(abs(numeric), abs(ana), 1e-8)
            worst = max(worst, rel)
            assert rel < 1e-3, f"{name}[{i}] rel err {rel:.2e}"
            n_checked += 1
    elapsed = time.perf_counter() - t_start
    criterion(3, elapsed < 60.0,
              f"{n_checked} gradients across {len(parameter_groups(raw))} groups, "
              f"worst rel err {worst:.2e} < 1e-3, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. post-encoding masking invariance


def test_criterion_4_masking_invariance():
    t_start = time.perf_counter()
    cfg = ModelConfig()
    params = wrap_params(init_params(cfg, np.random.default_rng(3)), trainable=False)
    rng = np.random.default_rng(4)
    past_rel = rng.normal(size=(2, 15, 7)).astype(np.float32)
    x_t = rng.normal(size=(2, 25, 10)).astype(np.float32)
    worst = 0.0
    for trial in range(5):
        cmd_a = rng.uniform(-1, 1, (2, 15, 10)).astype(np.float32)
        cmd_b = rng.uniform(-1, 1, (2, 15, 10)).astype(np.float32)
        out_a = forward(params, cfg, x_t, 3,
                        encode_conditions(params, cfg, past_rel, cmd_a, drop_cmd=True))
        out_b = forward(params, cfg, x_t, 3,
                        encode_conditions(params, cfg, past_rel, cmd_b, drop_cmd=True))
        worst = max(worst,
                    float(np.max(np.abs(out_a.x0_hat.data - out_b.x0_hat.data))),
                    float(np.max(np.abs(out_a.behavior_logits.data - out_b.behavior_logits.data))),
                    float(np.max(np.abs(out_a.mode_logits.data - out_b.mode_logits.data))))
    elapsed = time.perf_counter() - t_start
    criterion(4, worst <= 1e-9 and elapsed < 10.0,
              f"masked outputs identical across command histories "
              f"(max abs diff {worst:.1e}), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 5. metric unit tests


def test_criterion_5_metric_trivial_cases():
    def pose_rows(n, x=0.0, y=0.0, yaw=0.0, z=0.35):
        row = np.concatenate([[x, y, z], quat_from_yaw(yaw)])
        return np.tile(row, (n, 1))

    robot = pose_rows(10)
    checks = [
        abs(fae(robot, pose_rows(10, x=2.0, z=1.7)) - 0.0),
        abs(fae(robot, pose_rows(10, x=-2.0, z=1.7)) - 180.0),
        abs(fae(robot, pose_rows(10, x=1.0, y=1.0, z=1.7)) - 45.0),
        abs(te(robot, pose_rows(10, z=1.7)) - 0.0),
        abs(te(robot, pose_rows(10, x=3.0, y=4.0, z=1.7)) - 5.0),
        abs(msd(np.full((50, 10), 0.25)) - 0.0),
    ]
    stream = np.zeros((50, 10))
    stream[:, 0] = np.arange(50) % 2
    checks.append(abs(msd(stream) - 0.1))
    worst = max(checks)
    criterion(5, worst <= 1e-9,
              f"FAE 0/180/45, TE 0/5, MSD 0/0.1 exact (worst dev {worst:.1e})")


# ---------------------------------------------------------------------------
# 6. trained-model competence


def test_criterion_6_competence(ours_ckpt, ours_report, oracle_report):
    ck = load_checkpoint(ours_ckpt)
    wall_min = ck.meta.get("wall_minutes", float("nan"))
    bound = 1.5 * oracle_report.te_mean
    ok = ours_report.te_mean <= bound and ours_report.fae_mean <= 60.0
    criterion(6, ok,
              f"TE {ours_report.te_mean:.2f} m <= 1.5 x oracle {oracle_report.te_mean:.2f} "
              f"(bound {bound:.2f}); FAE {ours_report.fae_mean:.1f} <= 60 deg "
              f"[{ck.meta.get('epoch', '?')} epochs, {wall_min:.1f} min train]")
    assert wall_min <= 60.0, f"desk-scale training took {wall_min:.1f} min > 60"


# ---------------------------------------------------------------------------
# 7. ablation orderings


@pytest.fixture(scope="session")
def grid_reports(default_manifest, ours_report):
    paths = art.ensure_grid()
    reports = {"ours": ours_report}
    for variant, path in paths.items():
        if variant == "ours":
            continue
        reports[variant] = run_eval(path, default_manifest, seeds=(0, 1, 2),
                                    variant=variant)
    return reports


def test_criterion_7_ablation_orderings(grid_reports):
    r = grid_reports
    checks = [
        ("TE(no_human) >= 1.5 x TE(ours)",
         r["no_human"].te_mean >= 1.5 * r["ours"].te_mean,
         f"{r['no_human'].te_mean:.2f} vs {r['ours'].te_mean:.2f}"),
        ("MSD(no_commands) >= 2 x MSD(ours)",
         r["no_commands"].msd_mean >= 2.0 * r["ours"].msd_mean,
         f"{r['no_commands'].msd_mean:.5f} vs {r['ours'].msd_mean:.5f}"),
        ("MSD(baseline) >= 1.2 x MSD(ours)",
         r["baseline_transformer"].msd_mean >= 1.2 * r["ours"].msd_mean,
         f"{r['baseline_transformer'].msd_mean:.5f} vs {r['ours'].msd_mean:.5f}"),
        ("FAE(ours-75) >= FAE(ours-25)",
         r["window_75"].fae_mean >= r["ours"].fae_mean,
         f"{r['window_75'].fae_mean:.1f} vs {r['ours'].fae_mean:.1f}"),
    ]
    detail = "; ".join(f"{name} [{vals}]" for name, ok, vals in checks)
    criterion(7, all(ok for _, ok, _ in checks), detail)


# ---------------------------------------------------------------------------
# 8. smoothing contract


def test_criterion_8_smoothing_contract(ours_report):
    kernel_gap = max(abs(gaussian_kernel(s).sum() - 1.0) for s in (0.7, 2.0, 5.0))
    violations = [row for row in ours_report.per_rollout
                  if row["metrics"]["msd"] > row["metrics"]["msd_raw"] + 1e-12]
    ok = kernel_gap <= 1e-9 and not violations
    criterion(8, ok,
              f"MSD(emitted) <= MSD(raw) on all {len(ours_report.per_rollout)} "
              f"rollouts; kernel sum gap {kernel_gap:.1e}")


# ---------------------------------------------------------------------------
# 9. diversity


def test_criterion_9_diversity(ours_ckpt):
    res = diversity_probe(ours_ckpt, n_runs=8, duration_s=10.0)
    frozen = diversity_probe(ours_ckpt, n_runs=8, duration_s=10.0, zero_noise=True)
    ok = (res.max_pairwise_endpoint_distance > 0.3
          and frozen.max_pairwise_endpoint_distance <= 1e-12)
    criterion(9, ok,
              f"8-seed max endpoint spread {res.max_pairwise_endpoint_distance:.2f} m "
              f"> 0.3; zero-noise spread {frozen.max_pairwise_endpoint_distance:.1e}")


# ---------------------------------------------------------------------------
# 10. discrete heads


def test_criterion_10_discrete_heads():
    mixed = read_manifest(art.ensure_mixed_manifest())
    weighted, uniform = [], []
    for seed in art.CLS_SEEDS:
        w = classification_report(art.ensure_classifier(seed, weighted=True), mixed,
                                  stride=art.CLS_STRIDE)
        u = classification_report(art.ensure_classifier(seed, weighted=False), mixed,
                                  stride=art.CLS_STRIDE)
        weighted.append(w)
        uniform.append(u)
    acc = float(np.mean([w.mode_accuracy for w in weighted]))
    recall_w = float(np.mean([w.behavior_macro_recall for w in weighted]))
    recall_u = float(np.mean([u.behavior_macro_recall for u in uniform]))
    ok = acc >= 0.9 and recall_w >= 0.5 and recall_w > recall_u
    criterion(10, ok,
              f"mode accuracy {acc:.3f} >= 0.9; non-None macro-recall weighted "
              f"{recall_w:.3f} >= 0.5 and > unweighted {recall_u:.3f} (3 seeds)")


# ---------------------------------------------------------------------------
# 11. determinism


def test_criterion_11_determinism(tmp_path):
    from opmimic.trainer import TrainConfig, train

    manifest = read_manifest(art.ensure_default_manifest())
    cfg = ModelConfig(latent_dim=16, ff_dim=32, heads=2, layers=1)
    tc = TrainConfig(epochs=2, batch_size=64, seed=5, early_stop_patience=0,
                     single_thread=True)
    h1 = train(manifest, cfg, tc, tmp_path / "a").checkpoint_hash
    h2 = train(manifest, cfg, tc, tmp_path / "b").checkpoint_hash
    same_train = h1 == h2

    params = wrap_params(init_params(ModelConfig(), np.random.default_rng(0)),
                         trainable=False)
    mcfg = ModelConfig()
    rng = np.random.default_rng(9)
    past_rel = rng.normal(size=(1, 15, 7)).astype(np.float32)
    past_cmd = rng.uniform(-1, 1, (1, 15, 10)).astype(np.float32)
    cond = encode_conditions(params, mcfg, past_rel, past_cmd)
    uncond = encode_conditions(params, mcfg, past_rel, past_cmd, drop_cmd=True)
    s = make_schedule(8)
    a = sample_window(params, mcfg, s, cond, uncond, np.random.default_rng(77))
    b = sample_window(params, mcfg, s, cond, uncond, np.random.default_rng(77))
    same_sample = all(np.array_equal(x, y) for x, y in zip(a, b))
    criterion(11, same_train and same_sample,
              f"checkpoint hash bit-identical ({h1[:10]}); fixed-seed sample_window "
              f"bit-identical ({same_sample})")


# ---------------------------------------------------------------------------
# 12. cross-embodiment


def test_criterion_12_cross_embodiment(ours_ckpt, default_manifest, ours_report):
    humanoid = run_eval(ours_ckpt, default_manifest, seeds=(0, 1, 2),
                        profile=humanoid_profile(), variant="ours@humanoid")
    ok = humanoid.te_mean <= 2.0 * ours_report.te_mean
    criterion(12, ok,
              f"zero-shot humanoid TE {humanoid.te_mean:.2f} <= 2 x bipod TE "
              f"{ours_report.te_mean:.2f}")


# ---------------------------------------------------------------------------
# 13. real-time budget


def test_criterion_13_realtime_budget():
    from threadpoolctl import threadpool_limits

    cfg = ModelConfig()
    params = wrap_params(init_params(cfg, np.random.default_rng(0)), trainable=False)
    rng = np.random.default_rng(1)
    past_rel = rng.normal(size=(1, 15, 7)).astype(np.float32)
    past_cmd = rng.uniform(-1, 1, (1, 15, 10)).astype(np.float32)
    cond = encode_conditions(params, cfg, past_rel, past_cmd)
    uncond = encode_conditions(params, cfg, past_rel, past_cmd, drop_cmd=True)
    schedule = make_schedule(8)
    with threadpool_limits(limits=1):  # one commodity desktop core
        sample_window(params, cfg, schedule, cond, uncond, rng)  # warm-up
        times = []
        for _ in range(20):
            t0 = time.perf_counter()
            sample_window(params, cfg, schedule, cond, uncond, rng)
            times.append(time.perf_counter() - t0)
    worst = max(times) * 1e3
    median = float(np.median(times)) * 1e3
    criterion(13, worst < 200.0,
              f"sample_window (CFG on, T=8, single core): median {median:.1f} ms, "
              f"worst {worst:.1f} ms < 200 ms")

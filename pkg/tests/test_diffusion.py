import numpy as np
import pytest

from opmimic.errors import ValidationError
from opmimic.model.autodiff import Tensor
from opmimic.model.diffusion import (
    DiffusionSchedule,
    make_schedule,
    posterior_mean_var,
    q_sample,
    sample_window,
)
from opmimic.model.network import (
    ConditionTokens,
    ModelConfig,
    ModelOutput,
    encode_conditions,
    init_params,
    wrap_params,
)


def test_schedule_basic_shape_and_monotonicity():
    s = make_schedule(8)
    assert len(s.betas) == 8
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all((s.betas > 0) & (s.betas < 1))


def test_schedule_closed_form_tail():
    # oracle: evaluate the cosine closed form directly
    def f(u, eps=0.008):
        return np.cos((u + eps) / (1 + eps) * np.pi / 2) ** 2

    s = make_schedule(8)
    assert s.alpha_bars[-1] < 0.05
    assert s.alpha_bars[0] > 0.9
    # the unclipped closed form matches wherever no beta was clipped
    raw = f(np.arange(1, 9) / 8) / f(0.0)
    unclipped = (1.0 - s.betas) > 1e-3  # beta < 0.999 -> not clipped
    np.testing.assert_allclose(s.alpha_bars[unclipped][:1], raw[unclipped][:1], rtol=1e-12)


def test_schedule_product_identity():
    s = make_schedule(8)
    np.testing.assert_allclose(s.alpha_bars, np.cumprod(1.0 - s.betas), rtol=0, atol=1e-12)
    for t_steps in (1, 2, 4, 16):
        s = make_schedule(t_steps)
        np.testing.assert_allclose(s.alpha_bars, np.cumprod(1.0 - s.betas), rtol=0, atol=1e-12)


def test_schedule_validation_rejects_inconsistency():
    s = make_schedule(4)
    with pytest.raises(ValidationError):
        DiffusionSchedule(s.betas, s.alpha_bars * 0.9)
    with pytest.raises(ValidationError):
        DiffusionSchedule(np.array([0.5, 0.5]), np.array([0.5, 0.5]))  # not decreasing


def test_q_sample_noiseless_limit():
    betas = np.full(8, 1e-9)
    s = DiffusionSchedule(betas, np.cumprod(1.0 - betas))
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(25, 10))
    eps = rng.normal(size=(25, 10))
    for t in range(1, 9):
        np.testing.assert_allclose(q_sample(x0, t, eps, s), x0, atol=1e-3)


def test_q_sample_zero_signal_is_scaled_noise():
    s = make_schedule(8)
    rng = np.random.default_rng(1)
    eps = rng.normal(size=(25, 10))
    for t in (1, 4, 8):
        expected = np.sqrt(1.0 - s.alpha_bars[t - 1]) * eps
        np.testing.assert_array_equal(q_sample(np.zeros((25, 10)), t, eps, s), expected)


def test_q_sample_rejects_bad_t():
    s = make_schedule(8)
    x = np.zeros((25, 10))
    with pytest.raises(ValidationError):
        q_sample(x, 0, x, s)
    with pytest.raises(ValidationError):
        q_sample(x, 9, x, s)


def test_q_sample_monte_carlo_moments():
    # Monte Carlo check of the closed-form moments at every step:
    # mean -> sqrt(abar_t) * x0, std -> sqrt(1 - abar_t), within 1% relative
    s = make_schedule(8)
    rng = np.random.default_rng(2)
    c = 10.0
    x0 = np.full((25, 10), c, dtype=np.float32)
    n_draws, chunk = 100_000, 10_000
    for t in range(1, 9):
        total, total_sq, count = 0.0, 0.0, 0
        for _ in range(n_draws // chunk):
            eps = rng.standard_normal((chunk, 25, 10), dtype=np.float32)
            xt = q_sample(np.broadcast_to(x0, (chunk, 25, 10)), np.full(chunk, t), eps, s)
            total += float(xt.sum())
            total_sq += float((xt.astype(np.float64) ** 2).sum())
            count += xt.size
        mean = total / count
        std = np.sqrt(total_sq / count - mean**2)
        want_mean = np.sqrt(s.alpha_bars[t - 1]) * c
        want_std = np.sqrt(1.0 - s.alpha_bars[t - 1])
        assert abs(mean - want_mean) <= 0.01 * abs(want_mean)
        assert abs(std - want_std) <= 0.01 * want_std


def test_q_sample_batched_t():
    s = make_schedule(8)
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(4, 25, 10))
    eps = rng.normal(size=(4, 25, 10))
    t = np.array([1, 3, 5, 8])
    batched = q_sample(x0, t, eps, s)
    for i in range(4):
        np.testing.assert_array_equal(batched[i], q_sample(x0[i], int(t[i]), eps[i], s))


# ---------------------------------------------------------------------------
# posterior + sampler


def test_posterior_collapses_to_x0_at_t1():
    s = make_schedule(8)
    rng = np.random.default_rng(4)
    x_t = rng.normal(size=(25, 10))
    x0 = rng.normal(size=(25, 10))
    mean, var = posterior_mean_var(x_t, x0, 1, s)
    np.testing.assert_allclose(mean, x0, rtol=0, atol=1e-12)
    assert var == pytest.approx(0.0, abs=1e-15)


def test_posterior_matches_textbook_coefficients():
    s = make_schedule(8)
    t = 5
    beta = s.betas[t - 1]
    abar, abar_prev = s.alpha_bars[t - 1], s.alpha_bars[t - 2]
    x_t = np.ones((2, 3))
    x0 = 2 * np.ones((2, 3))
    mean, var = posterior_mean_var(x_t, x0, t, s)
    want = (np.sqrt(abar_prev) * beta / (1 - abar) * 2.0
            + np.sqrt(1 - beta) * (1 - abar_prev) / (1 - abar) * 1.0)
    np.testing.assert_allclose(mean, want)
    assert var == pytest.approx((1 - abar_prev) / (1 - abar) * beta)


def tiny_setup(seed=0, guidance=2.0):
    cfg = ModelConfig(latent_dim=16, ff_dim=32, heads=2, layers=1, m_past=5,
                      n_future=6, guidance_scale=guidance)
    rng = np.random.default_rng(seed)
    params = wrap_params(init_params(cfg, rng), trainable=False)
    past_rel = rng.normal(size=(1, 5, 7)).astype(np.float32)
    past_cmd = rng.uniform(-1, 1, size=(1, 5, 10)).astype(np.float32)
    cond = encode_conditions(params, cfg, past_rel, past_cmd, drop_cmd=False)
    uncond = encode_conditions(params, cfg, past_rel, past_cmd, drop_cmd=True)
    return cfg, params, cond, uncond


def test_sampler_with_oracle_stub_returns_true_window():
    cfg, params, cond, uncond = tiny_setup()
    s = make_schedule(8)
    true_x0 = np.random.default_rng(7).uniform(-0.9, 0.9, size=(1, 6, 10)).astype(np.float32)

    def stub(params, cfg, x, t, cond):
        return ModelOutput(
            x0_hat=Tensor(true_x0.copy()),
            behavior_logits=Tensor(np.zeros((1, cfg.k_behavior), dtype=np.float32)),
            mode_logits=Tensor(np.zeros((1, cfg.k_mode), dtype=np.float32)),
        )

    for seed in (0, 1, 2):
        x0, _, _ = sample_window(params, cfg, s, cond, uncond,
                                 np.random.default_rng(seed), forward_fn=stub)
        np.testing.assert_allclose(x0, true_x0, rtol=0, atol=1e-6)


def test_sampler_deterministic_given_seed():
    cfg, params, cond, uncond = tiny_setup()
    s = make_schedule(8)
    a = sample_window(params, cfg, s, cond, uncond, np.random.default_rng(42))
    b = sample_window(params, cfg, s, cond, uncond, np.random.default_rng(42))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    c = sample_window(params, cfg, s, cond, uncond, np.random.default_rng(43))
    assert np.max(np.abs(a[0] - c[0])) > 1e-3  # diversity across seeds


def test_guidance_scale_one_equals_pure_conditional():
    cfg, params, cond, uncond = tiny_setup(guidance=1.0)
    s = make_schedule(8)
    with_pair = sample_window(params, cfg, s, cond, uncond, np.random.default_rng(0))
    cond_only = sample_window(params, cfg, s, cond, None, np.random.default_rng(0))
    np.testing.assert_array_equal(with_pair[0], cond_only[0])


def test_guidance_scale_changes_output():
    cfg, params, cond, uncond = tiny_setup()
    s = make_schedule(8)
    a = sample_window(params, cfg, s, cond, uncond, np.random.default_rng(0), guidance_scale=1.0)
    b = sample_window(params, cfg, s, cond, uncond, np.random.default_rng(0), guidance_scale=3.0)
    assert np.max(np.abs(a[0] - b[0])) > 1e-4


def test_sampler_output_clamped():
    cfg, params, cond, uncond = tiny_setup()
    s = make_schedule(8)

    def wild_stub(params, cfg, x, t, cond):
        return ModelOutput(
            x0_hat=Tensor(np.full((1, 6, 10), 3.0, dtype=np.float32)),
            behavior_logits=Tensor(np.zeros((1, cfg.k_behavior), dtype=np.float32)),
            mode_logits=Tensor(np.zeros((1, cfg.k_mode), dtype=np.float32)),
        )

    x0, _, _ = sample_window(params, cfg, s, cond, uncond, np.random.default_rng(0),
                             forward_fn=wild_stub)
    assert np.max(x0) <= 1.0

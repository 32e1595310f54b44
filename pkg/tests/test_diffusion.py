import math

import pytest
import torch

from ssdiff.diffusion import (
    build_schedule,
    ddim_step,
    ddim_subsequence,
    ddpm_step,
    posterior_mean,
    q_posterior_mean,
    q_sample,
    residual_unwrap,
    residual_wrap,
    x0_to_eps,
)
from ssdiff.errors import ScheduleError, ShapeError


@pytest.fixture(scope="module")
def linear_schedule():
    return build_schedule(1000, 1e-4, 0.02)


@pytest.fixture(scope="module")
def two_step():
    return build_schedule(2, 0.5, 0.5)


class TestBuildSchedule:
    def test_alpha_bar_end_matches_sequential_product(self, linear_schedule):
        product = 1.0
        for beta in linear_schedule.betas.tolist():
            product *= 1.0 - beta
        assert float(linear_schedule.alpha_bars[-1]) == pytest.approx(product, rel=1e-9)
        assert product < 1e-4

    def test_two_step_values(self, two_step):
        assert two_step.alpha_bars.tolist() == pytest.approx([0.5, 0.25])
        assert float(two_step.posterior_variances[1]) == pytest.approx(1.0 / 3.0)

    def test_posterior_variance_at_first_step_is_zero(self, linear_schedule):
        assert float(linear_schedule.posterior_variances[0]) == 0.0

    def test_invariants(self, linear_schedule):
        assert bool(((linear_schedule.betas > 0) & (linear_schedule.betas < 1)).all())
        assert torch.equal(linear_schedule.alphas, 1.0 - linear_schedule.betas)
        assert bool((linear_schedule.alpha_bars[1:] < linear_schedule.alpha_bars[:-1]).all())
        assert float(linear_schedule.alpha_bars[0]) == float(linear_schedule.alphas[0])

    @pytest.mark.parametrize(
        "T,start,end",
        [(1, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)],
    )
    def test_rejects_bad_bounds(self, T, start, end):
        with pytest.raises(ScheduleError):
            build_schedule(T, start, end)


class TestForwardNoising:
    def test_noise_free_and_zero_signal_limits(self, linear_schedule):
        x0 = torch.randn(2, 4, 8, 8, dtype=torch.float64)
        eps = torch.randn_like(x0)
        t = 500
        alpha_bar = float(linear_schedule.alpha_bars[t - 1])
        assert torch.allclose(q_sample(x0, t, torch.zeros_like(x0), linear_schedule), math.sqrt(alpha_bar) * x0)
        assert torch.allclose(q_sample(torch.zeros_like(x0), t, eps, linear_schedule), math.sqrt(1 - alpha_bar) * eps)

    def test_hand_value(self, two_step):
        out = q_sample(torch.ones(1, 1, 1, 1), 2, torch.ones(1, 1, 1, 1), two_step)
        assert float(out) == pytest.approx(0.5 + math.sqrt(0.75), abs=1e-6)

    def test_per_sample_steps_broadcast(self, linear_schedule):
        x0 = torch.randn(3, 2, 4, 4, dtype=torch.float64)
        eps = torch.randn_like(x0)
        t = torch.tensor([1, 400, 1000])
        batched = q_sample(x0, t, eps, linear_schedule)
        for i, step in enumerate(t.tolist()):
            assert torch.allclose(batched[i], q_sample(x0[i : i + 1], step, eps[i : i + 1], linear_schedule)[0])

    def test_rejects_out_of_range_step_and_shape(self, linear_schedule):
        x0 = torch.zeros(1, 2, 4, 4)
        with pytest.raises(ScheduleError):
            q_sample(x0, 0, x0, linear_schedule)
        with pytest.raises(ScheduleError):
            q_sample(x0, 1001, x0, linear_schedule)
        with pytest.raises(ShapeError):
            q_sample(x0, 5, torch.zeros(1, 3, 4, 4), linear_schedule)


class TestInversion:
    def test_round_trip_recovers_noise_at_every_step(self, linear_schedule):
        generator = torch.Generator().manual_seed(3)
        x0 = torch.randn(1, 4, 8, 8, dtype=torch.float64, generator=generator)
        eps = torch.randn(1, 4, 8, 8, dtype=torch.float64, generator=generator)
        for t in range(1, linear_schedule.T + 1):
            x_t = q_sample(x0, t, eps, linear_schedule)
            recovered = x0_to_eps(x0, x_t, t, linear_schedule)
            assert float((recovered - eps).norm() / eps.norm()) < 1e-5
            assert bool(torch.isfinite(posterior_mean(x_t, recovered, t, linear_schedule)).all())

    def test_zero_prediction(self, linear_schedule):
        x_t = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        t = 250
        expected = x_t / math.sqrt(1 - float(linear_schedule.alpha_bars[t - 1]))
        assert torch.allclose(x0_to_eps(torch.zeros_like(x_t), x_t, t, linear_schedule), expected)

    def test_posterior_mean_zero_noise(self, linear_schedule):
        x_t = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        t = 10
        expected = x_t / math.sqrt(float(linear_schedule.alphas[t - 1]))
        assert torch.allclose(posterior_mean(x_t, torch.zeros_like(x_t), t, linear_schedule), expected)

    def test_posterior_mean_matches_closed_form_posterior(self, linear_schedule):
        x0 = torch.randn(2, 3, 4, 4, dtype=torch.float64)
        eps = torch.randn_like(x0)
        for t in (2, 50, 999):
            x_t = q_sample(x0, t, eps, linear_schedule)
            assert torch.allclose(
                posterior_mean(x_t, eps, t, linear_schedule),
                q_posterior_mean(x0, x_t, t, linear_schedule),
                atol=1e-9,
            )

    def test_tiny_beta_mean_is_identity(self):
        sched = build_schedule(4, 1e-12, 1e-12)
        x_t = torch.randn(1, 1, 2, 2, dtype=torch.float64)
        assert torch.allclose(posterior_mean(x_t, torch.randn_like(x_t), 2, sched), x_t, atol=1e-5)


class TestSamplingSteps:
    def test_ddpm_last_step_is_posterior_mean(self, linear_schedule):
        x_t = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        x0_hat = torch.randn_like(x_t)
        noise = torch.randn_like(x_t)
        eps_hat = x0_to_eps(x0_hat, x_t, 1, linear_schedule)
        assert torch.equal(ddpm_step(x_t, x0_hat, 1, linear_schedule, noise), posterior_mean(x_t, eps_hat, 1, linear_schedule))

    def test_ddpm_adds_scaled_noise(self, two_step):
        x_t = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
        x0_hat = torch.zeros_like(x_t)
        noise = torch.ones_like(x_t)
        assert torch.allclose(ddpm_step(x_t, x0_hat, 2, two_step, noise), torch.full_like(x_t, math.sqrt(1.0 / 3.0)))

    def test_subsequence(self, linear_schedule):
        steps = ddim_subsequence(linear_schedule, 100)
        assert len(steps) == 100
        assert steps[0] == 991 and steps[-1] == 1
        assert all(a - b == 10 for a, b in zip(steps, steps[1:]))
        assert ddim_subsequence(linear_schedule, 1000) == list(range(1000, 0, -1))
        assert ddim_subsequence(linear_schedule, 1) == [1]
        with pytest.raises(ScheduleError):
            ddim_subsequence(linear_schedule, 0)

    def test_ddim_jump_to_zero_returns_prediction(self, linear_schedule):
        x_t = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        x0_hat = torch.randn_like(x_t)
        assert torch.allclose(ddim_step(x_t, x0_hat, 500, 0, linear_schedule), x0_hat)

    def test_ddim_consistent_trajectory_stays_on_forward_path(self, linear_schedule):
        x0 = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        eps = torch.randn_like(x0)
        x_t = q_sample(x0, 800, eps, linear_schedule)
        assert torch.allclose(ddim_step(x_t, x0, 800, 400, linear_schedule), q_sample(x0, 400, eps, linear_schedule))

    def test_deterministic_loop_is_reproducible(self, linear_schedule):
        def run() -> torch.Tensor:
            x = torch.zeros(1, 2, 4, 4, dtype=torch.float64)
            steps = ddim_subsequence(linear_schedule, 20)
            for i, t in enumerate(steps):
                t_prev = steps[i + 1] if i + 1 < len(steps) else 0
                x = ddim_step(x, torch.full_like(x, 0.25), t, t_prev, linear_schedule)
            return x

        assert torch.equal(run(), run())


class TestResidual:
    def test_identity_and_round_trip(self):
        hrms = torch.rand(2, 8, 16, 16, dtype=torch.float64)
        lms = torch.rand_like(hrms)
        assert torch.equal(residual_wrap(lms, lms), torch.zeros_like(lms))
        restored = residual_unwrap(residual_wrap(hrms, lms), lms)
        assert torch.allclose(restored, hrms, atol=1e-15)
        assert torch.allclose(restored.mean(dim=(-1, -2)), hrms.mean(dim=(-1, -2)), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            residual_wrap(torch.zeros(1, 4, 8, 8), torch.zeros(1, 8, 8, 8))

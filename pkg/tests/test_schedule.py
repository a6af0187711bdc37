import numpy as np
import pytest

import diffrestore as dr
from diffrestore.schedule import (
    NoiseSchedule,
    ScheduleError,
    build_schedules,
    ddim_step,
    forward_sample,
    linear_schedule,
    loss_eval,
    noisy_step,
    predict_x0,
    reschedule,
)
from diffrestore.video import VideoTensor


class TestNoiseSchedule:
    def test_deblur_setting_endpoints(self):
        s = linear_schedule(1000, 1e-4, 0.02)
        assert s.beta(1) == 1e-4
        assert s.beta(1000) == 0.02
        assert s.alpha_bar(1) == 1.0 - 1e-4

    def test_sr_setting(self):
        s = linear_schedule(2000, 1e-6, 0.01)
        assert s.num_steps == 2000
        assert s.beta(1) == 1e-6
        assert s.beta(2000) == 0.01

    def test_alpha_bar_matches_brute_force_product(self):
        s = linear_schedule(500, 1e-4, 0.02)
        prod = 1.0
        for t in range(1, 501):
            prod *= 1.0 - s.beta(t)
            stored = s.alpha_bar(t)
            assert abs(stored - prod) <= 1e-14 * prod

    def test_alpha_bar_strictly_decreasing(self):
        s = linear_schedule(1000, 1e-4, 0.02)
        assert np.all(np.diff(s.alpha_bars) < 0)
        assert s.alpha_bar(1000) < s.alpha_bar(1) < 1.0

    def test_alpha_bar_zero_convention(self):
        assert linear_schedule(10, 0.01, 0.02).alpha_bar(0) == 1.0

    def test_rejects_invalid_range(self):
        with pytest.raises(ScheduleError):
            linear_schedule(10, 0.0, 0.02)
        with pytest.raises(ScheduleError):
            linear_schedule(10, 0.03, 0.02)
        with pytest.raises(ScheduleError):
            NoiseSchedule(np.array([0.5, 1.5]))

    def test_timestep_bounds(self):
        s = linear_schedule(10, 0.01, 0.02)
        with pytest.raises(ScheduleError, match="outside"):
            s.alpha_bar(11)


class TestForwardSample:
    def test_zero_noise(self, rng, deblur_schedule):
        x0 = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        eps = VideoTensor(np.zeros((1, 4, 4, 1)))
        out = forward_sample(x0, 600, eps, deblur_schedule)
        ab = deblur_schedule.alpha_bar(600)
        assert np.allclose(out.data, np.sqrt(ab) * x0.data)

    def test_zero_signal(self, rng, deblur_schedule):
        x0 = VideoTensor(np.zeros((1, 4, 4, 1)))
        eps = VideoTensor(rng.standard_normal((1, 4, 4, 1)), unclamped=True)
        out = forward_sample(x0, 600, eps, deblur_schedule)
        ab = deblur_schedule.alpha_bar(600)
        assert np.allclose(out.data, np.sqrt(1 - ab) * eps.data)

    def test_marginal_moments_monte_carlo(self, deblur_schedule):
        t = 400
        x0 = VideoTensor(np.full((1, 4, 4, 1), 0.3))
        rng = np.random.default_rng(0)
        draws = np.empty((100_000, 16))
        for i in range(draws.shape[0]):
            eps = VideoTensor(rng.standard_normal((1, 4, 4, 1)), unclamped=True)
            draws[i] = forward_sample(x0, t, eps, deblur_schedule).data.ravel()
        ab = deblur_schedule.alpha_bar(t)
        assert abs(draws.mean() - np.sqrt(ab) * 0.3) <= 0.02 * max(abs(np.sqrt(ab) * 0.3), 1e-6) + 0.005
        assert abs(draws.std() - np.sqrt(1 - ab)) <= 0.02 * np.sqrt(1 - ab)

    def test_rejects_out_of_range_t(self, rng, deblur_schedule):
        x0 = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        with pytest.raises(ScheduleError):
            forward_sample(x0, 0, x0, deblur_schedule)


class TestPredictX0:
    def test_inverts_forward_sample(self, rng, deblur_schedule):
        x0 = VideoTensor(rng.uniform(-1, 1, (2, 4, 4, 1)))
        for t in (1, 500, 1000):
            eps = VideoTensor(rng.standard_normal(x0.shape), unclamped=True)
            x_t = forward_sample(x0, t, eps, deblur_schedule)
            rec = predict_x0(x_t, eps, t, deblur_schedule)
            assert np.max(np.abs(rec.data - x0.data)) <= 1e-12

    def test_zero_eps_rescales(self, rng, deblur_schedule):
        x_t = VideoTensor(rng.standard_normal((1, 4, 4, 1)), unclamped=True)
        zero = VideoTensor(np.zeros(x_t.shape))
        out = predict_x0(x_t, zero, 700, deblur_schedule)
        assert np.allclose(out.data, x_t.data / np.sqrt(deblur_schedule.alpha_bar(700)))

    def test_against_scalar_loop(self, rng, deblur_schedule):
        x_t = VideoTensor(rng.standard_normal((1, 3, 3, 1)), unclamped=True)
        eps = VideoTensor(rng.standard_normal((1, 3, 3, 1)), unclamped=True)
        t = 321
        out = predict_x0(x_t, eps, t, deblur_schedule)
        ab = deblur_schedule.alpha_bar(t)
        for idx in np.ndindex(*x_t.shape):
            expected = (x_t.data[idx] - np.sqrt(1 - ab) * eps.data[idx]) / np.sqrt(ab)
            assert abs(out.data[idx] - expected) <= 1e-15


class TestDdimStep:
    def test_deterministic_when_eta_zero(self, rng, deblur_schedule):
        x0t = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        eps = VideoTensor(rng.standard_normal(x0t.shape), unclamped=True)
        a = ddim_step(x0t, eps, 500, 450, 0.0, None, deblur_schedule)
        b = ddim_step(x0t, eps, 500, 450, 0.0, None, deblur_schedule)
        assert np.array_equal(a.data, b.data)
        ab_prev = deblur_schedule.alpha_bar(450)
        expected = np.sqrt(ab_prev) * x0t.data + np.sqrt(1 - ab_prev) * eps.data
        assert np.allclose(a.data, expected)

    def test_endpoint_returns_estimate(self, rng, deblur_schedule):
        x0t = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        eps = VideoTensor(rng.standard_normal(x0t.shape), unclamped=True)
        out = ddim_step(x0t, eps, 40, 0, 0.7, eps, deblur_schedule)
        assert np.array_equal(out.data, x0t.data)

    def test_marginal_conformance_monte_carlo(self, deblur_schedule):
        # with the exact noise, a stochastic step from the forward marginal at t
        # must land on the forward marginal at t_prev
        t, t_prev, eta = 600, 480, 1.0
        x0 = VideoTensor(np.full((1, 4, 4, 1), -0.2))
        rng = np.random.default_rng(1)
        draws = np.empty((10_000, 16))
        for i in range(draws.shape[0]):
            eps = VideoTensor(rng.standard_normal(x0.shape), unclamped=True)
            x_t = forward_sample(x0, t, eps, deblur_schedule)
            fresh = VideoTensor(rng.standard_normal(x0.shape), unclamped=True)
            draws[i] = ddim_step(x0, eps, t, t_prev, eta, fresh, deblur_schedule).data.ravel()
            del x_t
        ab_prev = deblur_schedule.alpha_bar(t_prev)
        assert abs(draws.mean() - np.sqrt(ab_prev) * -0.2) <= 0.02 * abs(np.sqrt(ab_prev) * 0.2) + 0.005
        assert abs(draws.std() - np.sqrt(1 - ab_prev)) <= 0.02 * np.sqrt(1 - ab_prev)

    def test_eta_requires_draw(self, rng, deblur_schedule):
        x0t = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        with pytest.raises(ScheduleError, match="fresh noise"):
            ddim_step(x0t, x0t, 500, 400, 1.0, None, deblur_schedule)

    def test_rejects_bad_order(self, rng, deblur_schedule):
        x0t = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        with pytest.raises(ScheduleError, match="must be <"):
            ddim_step(x0t, x0t, 400, 400, 0.0, None, deblur_schedule)


class TestNoisyStep:
    def test_small_rho_limit_matches_recalculated_form(self, rng, deblur_schedule):
        # substituting the exact noise estimate reduces to the deterministic
        # update with the current-step noise scale
        t, t_prev = 500, 450
        x0 = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        eps = VideoTensor(rng.standard_normal(x0.shape), unclamped=True)
        x_t = forward_sample(x0, t, eps, deblur_schedule)
        x0t = predict_x0(x_t, eps, t, deblur_schedule)
        rho = 1e-12
        fresh = VideoTensor(rng.standard_normal(x0.shape), unclamped=True)
        out = noisy_step(x_t, x0t, t, t_prev, rho, fresh, deblur_schedule)
        ab_t = deblur_schedule.alpha_bar(t)
        ab_prev = deblur_schedule.alpha_bar(t_prev)
        expected = np.sqrt(ab_prev) * x0t.data + np.sqrt(1 - ab_t) * eps.data
        assert np.max(np.abs(out.data - expected)) <= 1e-5

    def test_rho_one_uses_only_fresh_noise(self, rng, deblur_schedule):
        t, t_prev = 500, 450
        x_t = VideoTensor(rng.standard_normal((1, 4, 4, 1)), unclamped=True)
        x0t = VideoTensor(rng.uniform(-1, 1, x_t.shape))
        fresh = VideoTensor(rng.standard_normal(x_t.shape), unclamped=True)
        out = noisy_step(x_t, x0t, t, t_prev, 1.0, fresh, deblur_schedule)
        ab_t = deblur_schedule.alpha_bar(t)
        ab_prev = deblur_schedule.alpha_bar(t_prev)
        expected = np.sqrt(ab_prev) * x0t.data + np.sqrt(1 - ab_t) * fresh.data
        assert np.allclose(out.data, expected)

    def test_rejects_bad_rho(self, rng, deblur_schedule):
        x = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        with pytest.raises(ScheduleError, match="rho_t"):
            noisy_step(x, x, 500, 450, 0.0, x, deblur_schedule)


class TestReschedule:
    def test_single_step_sits_at_top(self):
        plan = reschedule(1000, 1)
        assert plan.steps.tolist() == [1000]

    def test_sr_preset_plan(self):
        plan = reschedule(1000, 25)
        assert plan.num_steps == 25
        assert plan.steps[0] == 1000
        assert plan.steps[-1] == 1

    def test_random_plans_are_strictly_decreasing_injections(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            T = int(rng.integers(10, 3000))
            K = int(rng.integers(1, T))
            plan = reschedule(T, K)
            steps = plan.steps
            assert steps.size == K
            assert np.all(np.diff(steps) < 0)
            assert steps[0] <= T and steps[-1] >= 1
            assert len(set(steps.tolist())) == K

    def test_rejects_bad_k(self):
        with pytest.raises(ScheduleError):
            reschedule(100, 0)
        with pytest.raises(ScheduleError):
            reschedule(100, 100)


class TestBuildSchedules:
    def test_noiseless_gamma_is_one(self, deblur_schedule):
        plan = reschedule(1000, 25)
        s = build_schedules(plan, deblur_schedule, zeta=1000.0, sigma_e=0.0,
                            rho=0.25, w_tau=0.75, tau=5)
        assert np.all(s.gamma == 1.0)

    def test_gaussian_task_parameters_accepted(self, deblur_schedule):
        plan = reschedule(1000, 100)
        s = build_schedules(plan, deblur_schedule, zeta=1000.0, sigma_e=0.02,
                            rho=0.25, w_tau=0.75, tau=5)
        assert np.all((s.gamma >= 0.0) & (s.gamma <= 1.0))
        assert np.all(s.rho == 0.25)

    def test_w_profile(self, deblur_schedule):
        plan = reschedule(1000, 25)
        K, tau, w_tau = 25, 5, 0.75
        s = build_schedules(plan, deblur_schedule, 0.0, 0.0, 0.85, w_tau, tau)
        positions = K - 1 - np.arange(K)
        for i, p in enumerate(positions):
            if p < tau:
                assert s.w[i] == 0.0
            else:
                assert abs(s.w[i] - np.exp(-(p - tau) / (K - tau)) * w_tau) <= 1e-15
        # value at position tau is exactly w_tau; non-increasing in position
        assert s.w[K - 1 - tau] == w_tau
        on_ramp = s.w[: K - tau]
        assert np.all(np.diff(on_ramp) >= 0)  # increases along the loop

    def test_sigma_total_formula(self, deblur_schedule):
        plan = reschedule(1000, 10)
        zeta, sigma_e, rho = 30.0, 0.1, 0.4
        s = build_schedules(plan, deblur_schedule, zeta, sigma_e, rho, 0.0, 0)
        for i in range(10):
            t_prev = int(plan.steps[i + 1]) if i + 1 < 10 else 0
            ab_prev = deblur_schedule.alpha_bar(t_prev)
            expected = np.sqrt(ab_prev * s.gamma[i] ** 2 * sigma_e**2 + rho)
            assert abs(s.sigma_total[i] - expected) <= 1e-15

    def test_range_validation(self, deblur_schedule):
        plan = reschedule(1000, 10)
        with pytest.raises(ScheduleError):
            build_schedules(plan, deblur_schedule, -1.0, 0.0, 0.5, 0.0, 0)
        with pytest.raises(ScheduleError):
            build_schedules(plan, deblur_schedule, 0.0, 0.0, 0.0, 0.0, 0)
        with pytest.raises(ScheduleError):
            build_schedules(plan, deblur_schedule, 0.0, 0.0, 0.5, 1.5, 0)
        with pytest.raises(ScheduleError):
            build_schedules(plan, deblur_schedule, 0.0, 0.0, 0.5, 0.0, 10)


class TestLossEval:
    def test_oracle_denoiser_scores_zero(self, rng, deblur_schedule):
        x0 = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        oracle = dr.OracleDenoiser(x0, deblur_schedule)
        loss = loss_eval(oracle, x0, None, deblur_schedule, seeds=range(50))
        assert loss <= 1e-20

    def test_zero_denoiser_scores_dimension(self, rng, deblur_schedule):
        # E ||eps||^2 = number of tensor entries
        x0 = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        loss = loss_eval(dr.ZeroDenoiser(), x0, None, deblur_schedule, seeds=range(10_000))
        assert abs(loss - 16.0) / 16.0 <= 0.05

    def test_deterministic_given_seed_list(self, rng, deblur_schedule):
        x0 = VideoTensor(rng.uniform(-1, 1, (1, 4, 4, 1)))
        d = dr.ShrinkageDenoiser(1.0, deblur_schedule)
        a = loss_eval(d, x0, None, deblur_schedule, seeds=[3, 5, 7])
        b = loss_eval(d, x0, None, deblur_schedule, seeds=[3, 5, 7])
        assert a == b

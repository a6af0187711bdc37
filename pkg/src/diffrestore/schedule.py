"""Noise schedules, forward/backward diffusion algebra, and inference plans.

Timestep convention: timesteps run 1..T; ``alpha_bar(0)`` is defined as 1 so
the final reverse step has a well-defined endpoint. A :class:`TimestepPlan`
holds K strictly decreasing timesteps; entry ``i`` of every per-step array in
:class:`InferenceSchedules` belongs to plan entry ``i`` (sampling order, from
the noisiest step down). The plan *position* of entry ``i`` is ``K - 1 - i``:
position K-1 is visited first and position 0 produces the output. The
enhancement weight is parameterized by position: ``w = exp(-(p - tau)/(K -
tau)) * w_tau`` for positions ``p >= tau`` and 0 below, so enhancement ramps
up along the loop and switches off for the last ``tau`` steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .video import VideoTensor


class ScheduleError(ValueError):
    """Invalid schedule configuration."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule beta_1..beta_T with cached alpha and alpha-bar arrays."""

    betas: np.ndarray

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64, copy=True)
        if betas.ndim != 1 or betas.size < 1:
            raise ScheduleError(f"betas must be a non-empty 1-d array, got shape {betas.shape}")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ScheduleError("betas must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        for arr in (betas, alphas, alpha_bars):
            arr.flags.writeable = False
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def num_steps(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product of alphas up to t; alpha_bar(0) == 1 by convention."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.num_steps:
            raise ScheduleError(f"timestep {t} outside [1, {self.num_steps}]")


def linear_schedule(T: int, beta1: float, betaT: float) -> NoiseSchedule:
    """Betas linearly interpolated between beta1 and betaT, endpoints included."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not 0 < beta1 <= betaT < 1:
        raise ScheduleError(f"need 0 < beta1 <= betaT < 1, got ({beta1}, {betaT})")
    return NoiseSchedule(np.linspace(beta1, betaT, T))


def forward_sample(x0: VideoTensor, t: int, eps: VideoTensor, sched: NoiseSchedule) -> VideoTensor:
    """Draw x_t given x_0 and the noise realization eps."""
    if eps.shape != x0.shape:
        raise ScheduleError(f"eps shape {eps.shape} does not match x0 shape {x0.shape}")
    if not 1 <= t <= sched.num_steps:
        raise ScheduleError(f"timestep {t} outside [1, {sched.num_steps}]")
    ab = sched.alpha_bar(t)
    return VideoTensor(np.sqrt(ab) * x0.data + np.sqrt(1.0 - ab) * eps.data, unclamped=True)


def predict_x0(x_t: VideoTensor, eps_pred: VideoTensor, t: int, sched: NoiseSchedule) -> VideoTensor:
    """First prediction of the clean signal from the noisy state."""
    if eps_pred.shape != x_t.shape:
        raise ScheduleError(f"eps shape {eps_pred.shape} does not match x_t shape {x_t.shape}")
    ab = sched.alpha_bar(t)
    return VideoTensor((x_t.data - np.sqrt(1.0 - ab) * eps_pred.data) / np.sqrt(ab), unclamped=True)


def ddim_step(
    x0t: VideoTensor,
    eps_t: VideoTensor,
    t: int,
    t_prev: int,
    eta: float,
    eps_draw: VideoTensor | None,
    sched: NoiseSchedule,
) -> VideoTensor:
    """One reverse update toward t_prev; eta = 0 is fully deterministic.

    The stochasticity knob mixes the predicted and fresh noise with weights
    sqrt(1 - eta_t) and sqrt(eta_t), where eta_t = eta * sigma_t^2 / (1 -
    alpha_bar_prev) and sigma_t^2 is the posterior variance generalized to
    non-adjacent steps: (1 - ab_prev)/(1 - ab_t) * (1 - ab_t/ab_prev).
    """
    if eta < 0:
        raise ScheduleError(f"eta must be >= 0, got {eta}")
    if not t_prev < t:
        raise ScheduleError(f"t_prev {t_prev} must be < t {t}")
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    if ab_prev >= 1.0:
        return VideoTensor(x0t.data, unclamped=True)
    if eta == 0:
        mix = np.sqrt(1.0) * eps_t.data
        eta_t = 0.0
    else:
        sigma2 = (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)
        eta_t = eta * sigma2 / (1.0 - ab_prev)
        if eta_t > 1.0:
            raise ScheduleError(f"eta_t = {eta_t} exceeds 1; reduce eta")
        if eps_draw is None:
            raise ScheduleError("eta > 0 requires a fresh noise draw")
        mix = np.sqrt(1.0 - eta_t) * eps_t.data + np.sqrt(eta_t) * eps_draw.data
    return VideoTensor(
        np.sqrt(ab_prev) * x0t.data + np.sqrt(1.0 - ab_prev) * mix, unclamped=True
    )


def noisy_step(
    x_t: VideoTensor,
    x0t_tilde: VideoTensor,
    t: int,
    t_prev: int,
    rho_t: float,
    eps_draw: VideoTensor,
    sched: NoiseSchedule,
) -> VideoTensor:
    """Reverse update that recomputes the noise estimate from the corrected signal.

    Note the sqrt(1 - alpha_bar_t) factor on the noise mix (not t_prev): the
    corrected estimate replaces the raw one, so the noise implied by x_t is
    recalculated against it before mixing with a fresh draw.
    """
    if not 0 < rho_t <= 1:
        raise ScheduleError(f"rho_t must be in (0, 1], got {rho_t}")
    if not t_prev < t:
        raise ScheduleError(f"t_prev {t_prev} must be < t {t}")
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    eps_tilde = (x_t.data - np.sqrt(ab_t) * x0t_tilde.data) / np.sqrt(1.0 - ab_t)
    mix = np.sqrt(1.0 - rho_t) * eps_tilde + np.sqrt(rho_t) * eps_draw.data
    return VideoTensor(
        np.sqrt(ab_prev) * x0t_tilde.data + np.sqrt(1.0 - ab_t) * mix, unclamped=True
    )


@dataclass(frozen=True)
class TimestepPlan:
    """K strictly decreasing timesteps; entry 0 is visited first."""

    steps: np.ndarray

    def __post_init__(self):
        steps = np.array(self.steps, dtype=np.int64, copy=True)
        if steps.ndim != 1 or steps.size < 1:
            raise ScheduleError("plan must hold at least one timestep")
        if np.any(np.diff(steps) >= 0):
            raise ScheduleError("plan timesteps must be strictly decreasing")
        if steps[-1] < 1:
            raise ScheduleError("plan timesteps must be >= 1")
        steps.flags.writeable = False
        object.__setattr__(self, "steps", steps)

    @property
    def num_steps(self) -> int:
        return self.steps.size


def reschedule(T: int, K: int) -> TimestepPlan:
    """K evenly spaced timesteps over [1, T], rounded to nearest integers.

    Rounding collisions are resolved by shifting the later duplicate down one
    step, preserving strict decrease. K=1 keeps the single step at T.
    """
    if K < 1:
        raise ScheduleError(f"K must be >= 1, got {K}")
    if K >= T and K > 1:
        raise ScheduleError(f"K must be < T, got K={K}, T={T}")
    values = np.linspace(T, 1, K)
    steps = np.floor(values + 0.5).astype(np.int64)
    for i in range(1, K):
        if steps[i] >= steps[i - 1]:
            steps[i] = steps[i - 1] - 1
    return TimestepPlan(steps)


@dataclass(frozen=True)
class InferenceSchedules:
    """Per-plan-step inference coefficients, aligned with TimestepPlan.steps."""

    plan: TimestepPlan
    gamma: np.ndarray
    rho: np.ndarray
    w: np.ndarray
    sigma_total: np.ndarray

    def __post_init__(self):
        for name in ("gamma", "rho", "w", "sigma_total"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if arr.shape != (self.plan.num_steps,):
                raise ScheduleError(f"{name} must have one entry per plan step")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def build_schedules(
    plan: TimestepPlan,
    sched: NoiseSchedule,
    zeta: float,
    sigma_e: float,
    rho: float,
    w_tau: float,
    tau: int,
) -> InferenceSchedules:
    """Data-consistency strengths, noise mixes, and enhancement weights per step."""
    if zeta < 0:
        raise ScheduleError(f"zeta must be >= 0, got {zeta}")
    if sigma_e < 0:
        raise ScheduleError(f"sigma_e must be >= 0, got {sigma_e}")
    if not 0 < rho <= 1:
        raise ScheduleError(f"rho must be in (0, 1], got {rho}")
    if not 0 <= w_tau <= 1:
        raise ScheduleError(f"w_tau must be in [0, 1], got {w_tau}")
    K = plan.num_steps
    if not 0 <= tau <= K - 1:
        raise ScheduleError(f"tau must be in [0, K-1] = [0, {K - 1}], got {tau}")
    gamma = np.empty(K)
    w = np.empty(K)
    sigma_total = np.empty(K)
    for i, t in enumerate(plan.steps):
        t_prev = int(plan.steps[i + 1]) if i + 1 < K else 0
        ab_t = sched.alpha_bar(int(t))
        ab_prev = sched.alpha_bar(t_prev)
        gamma[i] = np.clip(1.0 - zeta * sigma_e**2 * ab_t / ab_prev, 0.0, 1.0)
        position = K - 1 - i
        if position >= tau:
            w[i] = np.exp(-(position - tau) / (K - tau)) * w_tau
        else:
            w[i] = 0.0
        sigma_total[i] = np.sqrt(ab_prev * gamma[i] ** 2 * sigma_e**2 + rho)
    return InferenceSchedules(plan, gamma, np.full(K, rho), w, sigma_total)


def loss_eval(denoiser, x0: VideoTensor, c: VideoTensor | None, sched: NoiseSchedule,
              seeds) -> float:
    """Monte Carlo forward-loss diagnostic: mean squared noise-prediction error.

    Each seed draws one (t, eps) pair; the loss is the average over seeds of
    the squared 2-norm of (eps - denoiser(x_t, c, t)). Deterministic for a
    fixed seed list. Diagnostic only: no gradients.
    """
    seeds = list(seeds)
    if not seeds:
        raise ScheduleError("loss_eval needs at least one seed")
    total = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        t = int(rng.integers(1, sched.num_steps + 1))
        eps = VideoTensor(rng.standard_normal(x0.shape), unclamped=True)
        x_t = forward_sample(x0, t, eps, sched)
        eps_hat = denoiser(x_t, c, t)
        total += float(np.sum((eps.data - eps_hat.data) ** 2))
    return total / len(seeds)

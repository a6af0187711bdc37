"""Conditional iterative refinement with two-stage correction at every step.

Each reverse step predicts the clean sequence, projects it toward the
measurements (data consistency), optionally blends in a spatial enhancement
inside the mask, recomputes the implied noise, and takes a stochastic step
toward the next timestep. Consistency modes:

- ``projection``: hard projection onto the measurement constraint (gamma
  forced to 1); for noiseless linear degradations the projected estimate
  reproduces the measurements exactly.
- ``scaled``: the correction is scaled by the per-step gamma so measurement
  noise is not copied verbatim into the estimate.
- ``composite``: the residual is formed through the codec stage (transcoded
  forward pass) and routed through the linear pseudo-inverse.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bicubic import upscale_bicubic
from .schedule import (
    NoiseSchedule,
    build_schedules,
    noisy_step,
    predict_x0,
    reschedule,
)
from .video import VideoTensor, clamp_model_range

MODES = ("projection", "scaled", "composite")
HARD_CONSISTENCY_TOL = 1e-6
CONDITION_MATCH_TOL = 1e-9


class RestoreError(RuntimeError):
    """A restoration run failed; the message carries the step index."""


@dataclass(frozen=True)
class SamplerConfig:
    """Every inference hyperparameter for one restoration run."""

    steps: int
    rho: float = 0.85
    zeta: float = 0.0
    sigma_e: float = 0.0
    w_tau: float = 0.0
    tau: int = 0
    guidance: float = 1.0
    eta: float = 0.0
    seed: int = 0
    mode: str = "projection"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.guidance <= 0:
            raise ValueError(f"guidance weight must be > 0, got {self.guidance}")
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class RestorationProblem:
    """A degradation operator, its measurements, and the conditioning tensor.

    The condition must equal the bicubic upscale of the measurements (or the
    clamped pseudo-inverse reconstruction); this is checked at construction so
    a sampler never runs against a stale condition. The mask weights the
    enhancement region and defaults to all-ones.
    """

    operator: object
    measurement: VideoTensor
    condition: VideoTensor
    mask: VideoTensor | None = None
    truth: VideoTensor | None = None

    def __post_init__(self):
        op = self.operator
        if (self.measurement.height, self.measurement.width) != tuple(op.out_frame_shape):
            raise ValueError(
                f"measurement frame shape {(self.measurement.height, self.measurement.width)} "
                f"does not match operator output {op.out_frame_shape}"
            )
        if (self.condition.height, self.condition.width) != tuple(op.in_frame_shape):
            raise ValueError(
                f"condition frame shape {(self.condition.height, self.condition.width)} "
                f"does not match operator input {op.in_frame_shape}"
            )
        if self.condition.num_frames != self.measurement.num_frames:
            raise ValueError("condition and measurement frame counts differ")
        expected = build_condition(self.measurement, op)
        matches_upscale = np.allclose(
            self.condition.data, expected.data, atol=CONDITION_MATCH_TOL, rtol=0.0
        )
        pseudo = clamp_model_range(op.pseudo_apply(self.measurement))
        matches_pseudo = np.allclose(
            self.condition.data, pseudo.data, atol=CONDITION_MATCH_TOL, rtol=0.0
        )
        if not (matches_upscale or matches_pseudo):
            raise ValueError(
                "condition does not match the upscaled or pseudo-inverse form of the measurement"
            )
        if self.mask is not None:
            if (self.mask.height, self.mask.width) != (self.condition.height, self.condition.width):
                raise ValueError("mask spatial shape does not match the restoration dims")
            if np.any(self.mask.data < 0) or np.any(self.mask.data > 1):
                raise ValueError("mask values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.condition.shape

    def mask_array(self) -> np.ndarray:
        """Mask broadcast against the restoration shape (all-ones when absent)."""
        if self.mask is None:
            return np.ones((1, 1, 1, 1))
        m = self.mask.data
        if m.shape[0] not in (1, self.condition.num_frames):
            raise ValueError("mask frame count must be 1 or match the sequence")
        return m


def build_condition(y: VideoTensor, op) -> VideoTensor:
    """Upscale measurements to restoration dims (cubic), clamped to model range."""
    in_h, in_w = op.in_frame_shape
    out_h, out_w = op.out_frame_shape
    if in_h % out_h or in_w % out_w or in_h // out_h != in_w // out_w:
        raise ValueError(
            f"operator dims {op.out_frame_shape} -> {op.in_frame_shape} are not an integer upscale"
        )
    factor = in_h // out_h
    return clamp_model_range(upscale_bicubic(y, factor))


def data_consistency(
    x0t: VideoTensor, problem: RestorationProblem, gamma_t: float, mode: str = "scaled"
) -> VideoTensor:
    """Correct the clean-signal estimate toward the measurements.

    The residual is formed with the operator's own forward map (which includes
    the codec stage in composite mode) and routed through the chained
    pseudo-inverse; the correction is scaled by gamma (forced to 1 for hard
    projection).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if not 0.0 <= gamma_t <= 1.0:
        raise ValueError(f"gamma_t must be in [0, 1], got {gamma_t}")
    if mode == "projection":
        gamma_t = 1.0
    if gamma_t == 0.0:
        return x0t
    op = problem.operator
    residual = VideoTensor(op.apply(x0t).data - problem.measurement.data, unclamped=True)
    correction = op.pseudo_apply(residual)
    return VideoTensor(x0t.data - gamma_t * correction.data, unclamped=True)


def enhance_blend(
    x0t_dc: VideoTensor, enhanced: VideoTensor, mask: np.ndarray, w_t: float
) -> VideoTensor:
    """Masked convex blend: (1 - w m) x + w m G(x), elementwise."""
    if enhanced.shape != x0t_dc.shape:
        raise ValueError(
            f"enhanced shape {enhanced.shape} does not match estimate shape {x0t_dc.shape}"
        )
    if not 0.0 <= w_t <= 1.0:
        raise ValueError(f"w_t must be in [0, 1], got {w_t}")
    wm = w_t * np.asarray(mask)
    return VideoTensor((1.0 - wm) * x0t_dc.data + wm * enhanced.data, unclamped=True)


def guided_epsilon(eps_cond: VideoTensor, eps_uncond: VideoTensor, lam: float) -> VideoTensor:
    """Guidance-weighted noise prediction: lam * conditional + (1 - lam) * unconditional."""
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError("conditional and unconditional predictions differ in shape")
    return VideoTensor(
        lam * eps_cond.data + (1.0 - lam) * eps_uncond.data, unclamped=True
    )


@dataclass
class TraceRow:
    step: int
    t: int
    consistency_inf: float
    w: float
    gamma: float


def restore(
    problem: RestorationProblem,
    denoiser,
    enhancer,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    trace_path: str | Path | None = None,
    debug_consistency: bool = False,
) -> VideoTensor:
    """Run the full iterative refinement loop; deterministic per config seed.

    Starts from pure Gaussian noise, and at each plan step: predicts the clean
    sequence from the (guidance-combined) noise prediction, applies data
    consistency, blends the enhancement inside the mask, recomputes the noise
    estimate, and steps toward the next timestep. The final step returns the
    corrected estimate directly. Output is clamped to model range.
    """
    plan = reschedule(schedule.num_steps, config.steps)
    schedules = build_schedules(
        plan, schedule, config.zeta, config.sigma_e, config.rho, config.w_tau, config.tau
    )
    rng = np.random.default_rng(config.seed)
    shape = problem.shape
    mask = problem.mask_array()
    x = VideoTensor(rng.standard_normal(shape), unclamped=True)
    rows: list[TraceRow] = []
    K = plan.num_steps
    for i, t_np in enumerate(plan.steps):
        t = int(t_np)
        try:
            eps_fresh = VideoTensor(rng.standard_normal(shape), unclamped=True)
            eps_hat = denoiser(x, problem.condition, t)
            if config.guidance != 1.0:
                eps_uncond = denoiser(x, None, t)
                eps_hat = guided_epsilon(eps_hat, eps_uncond, config.guidance)
            x0t = predict_x0(x, eps_hat, t, schedule)
            x_dc = data_consistency(x0t, problem, float(schedules.gamma[i]), config.mode)
            if debug_consistency and config.mode == "projection":
                residual = np.max(
                    np.abs(problem.operator.apply(x_dc).data - problem.measurement.data)
                )
                if residual > HARD_CONSISTENCY_TOL:
                    raise RestoreError(
                        f"hard projection violated: |A x - y| = {residual:.3e}"
                    )
            w = float(schedules.w[i])
            if w > 0.0:
                enhanced = enhancer(x_dc)
                x_dc = enhance_blend(x_dc, enhanced, mask, w)
            if trace_path is not None or debug_consistency:
                resid = float(
                    np.max(np.abs(problem.operator.apply(x_dc).data - problem.measurement.data))
                )
                rows.append(TraceRow(i, t, resid, w, float(schedules.gamma[i])))
            if i + 1 < K:
                x = noisy_step(
                    x, x_dc, t, int(plan.steps[i + 1]), float(schedules.rho[i]), eps_fresh, schedule
                )
            else:
                x = x_dc
        except RestoreError:
            raise
        except Exception as exc:
            raise RestoreError(f"restoration failed at step {i} (t={t}): {exc}") from exc
    if trace_path is not None:
        _write_trace(rows, Path(trace_path))
    return clamp_model_range(x)


def _write_trace(rows: list[TraceRow], path: Path) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "t", "consistency_inf", "w", "gamma"])
        for row in rows:
            writer.writerow(
                [row.step, row.t, repr(row.consistency_inf), repr(row.w), repr(row.gamma)]
            )

"""End-to-end restoration of a noisy, blurred, downsampled sequence.

Degrades a synthetic 10-frame clip (4x decimation, Gaussian blur, noise),
then runs the iterative refinement loop with the analytic shrinkage denoiser
and compares against the raw pseudo-inverse reconstruction baseline.
"""

from pathlib import Path

import diffrestore as dr

out_dir = Path("demo_out/restoration")
out_dir.mkdir(parents=True, exist_ok=True)

truth = dr.smooth_motion_video(10, 64, 64, seed=3)
sigma_e = 0.1  # model-range units (half of an 8-bit sigma of ~12.75)

op = dr.DegradationOperator(
    (64, 64), kernels=[dr.make_gaussian_kernel(25, 2.0, 2.0)], scale=4, sigma_e=sigma_e
)
y = op.apply(truth, noise_seed=99)
print(f"degraded {truth.shape} -> {y.shape} with blur, 4x decimation, noise {sigma_e}")

# Baseline: pseudo-inverse reconstruction. It is exactly measurement-consistent
# but copies the measurement noise and leaves the null space empty.
baseline = dr.clamp_model_range(op.pseudo_apply(y))
base_psnr = dr.psnr(baseline, truth).mean()

# The conditional refinement loop: scaled data consistency (gamma < 1 keeps
# the loop from copying the noise verbatim) plus the shrinkage denoiser.
schedule = dr.linear_schedule(1000, 1e-4, 0.02)
problem = dr.RestorationProblem(op, y, dr.build_condition(y, op))
denoiser = dr.ShrinkageDenoiser(16.0, schedule)
config = dr.SamplerConfig(steps=200, rho=1.0, zeta=80.0, sigma_e=sigma_e,
                          mode="scaled", seed=11)
restored = dr.restore(problem, denoiser, dr.IdentityEnhancer(), config, schedule,
                      trace_path=out_dir / "trace.csv")
rest_psnr = dr.psnr(restored, truth).mean()

print(f"baseline pseudo-inverse: {base_psnr:6.2f} dB")
print(f"iterative restoration:   {rest_psnr:6.2f} dB  (+{rest_psnr - base_psnr:.2f} dB)")

flow = dr.translation_flow(10, 64, 64, (1, 0))
print(f"temporal warping error:  baseline {dr.warping_error(baseline, flow):.2e}, "
      f"restored {dr.warping_error(restored, flow):.2e}")

for name, video in (("truth", truth), ("baseline", baseline), ("restored", restored)):
    dr.write_video(video, out_dir / name, "png-sequence")
print(f"frames written under {out_dir}/")

"""Noise schedules, timestep plans, and inference coefficient tables.

Shows the two stock diffusion settings, a rescheduled 25-step plan, and the
per-step consistency/enhancement coefficients derived from them.
"""

import numpy as np

import diffrestore as dr

deblur = dr.linear_schedule(1000, 1e-4, 0.02)
sr = dr.linear_schedule(2000, 1e-6, 0.01)
print("deblur schedule: T=1000, beta", deblur.beta(1), "..", deblur.beta(1000))
print("sr schedule:     T=2000, beta", sr.beta(1), "..", sr.beta(2000))
print(f"alpha_bar endpoints: deblur {deblur.alpha_bar(1000):.3e}, sr {sr.alpha_bar(2000):.3e}")

# 25 evenly spaced reverse steps out of 2000.
plan = dr.reschedule(2000, 25)
print(f"\n25-step plan over [1, 2000]: {plan.steps[:5].tolist()} ... {plan.steps[-3:].tolist()}")

# Inference coefficients for a noisy task: consistency strength gamma,
# noise mix rho, enhancement weight w, and the per-step noise contract.
schedules = dr.build_schedules(plan, sr, zeta=80.0, sigma_e=0.1, rho=0.85, w_tau=0.85, tau=5)
print("\n step    t   gamma     w      sigma_total")
for i in (0, 5, 10, 15, 19, 20, 24):
    print(f"  {i:3d} {plan.steps[i]:5d}  {schedules.gamma[i]:.4f}  {schedules.w[i]:.4f}  "
          f"{schedules.sigma_total[i]:.4f}")
print("(w ramps up along the loop and is zero for the last tau=5 steps)")

# Forward marginal and its algebraic inverse.
rng = np.random.default_rng(1)
x0 = dr.VideoTensor(rng.uniform(-1, 1, (1, 8, 8, 1)))
eps = dr.VideoTensor(rng.standard_normal(x0.shape), unclamped=True)
x_t = dr.forward_sample(x0, 1500, eps, sr)
back = dr.predict_x0(x_t, eps, 1500, sr)
print(f"\npredict_x0(forward_sample(x0)) max error: {np.max(np.abs(back.data - x0.data)):.2e}")

# A forward-loss diagnostic: the exact-noise predictor scores zero.
oracle = dr.OracleDenoiser(x0, sr)
print(f"loss_eval(oracle) = {dr.loss_eval(oracle, x0, None, sr, seeds=range(20)):.3e}")
print(f"loss_eval(zero)   = {dr.loss_eval(dr.ZeroDenoiser(), x0, None, sr, seeds=range(200)):.1f}"
      f"  (expected about {x0.data.size} = tensor size)")

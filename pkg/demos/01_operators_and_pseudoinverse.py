"""Degradation operators and their analytic pseudo-inverses.

Builds blur/decimation operators, checks the adjoint and pseudo-inverse
identities numerically, and cross-checks the Fourier-domain pseudo-inverse
against an explicit dense Moore-Penrose inverse on a small grid.
"""

import numpy as np

import diffrestore as dr

rng = np.random.default_rng(0)

# An anisotropic Gaussian point-spread function, 25x25 taps.
kernel = dr.make_gaussian_kernel(25, sigma_x=2.0, sigma_y=1.2, theta=0.4)
print(f"gaussian kernel: {kernel.size}x{kernel.size}, sum = {kernel.weights.sum():.12f}")

# A random camera-shake trajectory kernel, deterministic per seed.
shake = dr.make_motion_kernel(25, seed=7, intensity=0.8)
print(f"motion kernel:   {shake.size}x{shake.size}, sum = {shake.weights.sum():.12f}")

# Blur + 4-fold decimation on 64x64 frames. The correction spectrum for the
# pseudo-inverse is precomputed at construction.
op = dr.DegradationOperator((64, 64), kernels=[kernel], scale=4)
x = dr.VideoTensor(rng.uniform(-1, 1, (2, 64, 64, 1)))
y = op.apply(x)
print(f"\nforward: {x.shape} -> {y.shape}")

# Adjoint identity <A x, y> = <x, A^T y>.
probe = dr.VideoTensor(rng.standard_normal(y.shape), unclamped=True)
lhs = float(np.sum(op.apply(x).data * probe.data))
rhs = float(np.sum(x.data * op.adjoint(probe).data))
print(f"adjoint identity relative error: {abs(lhs - rhs) / abs(lhs):.2e}")

# Pseudo-inverse identity A A+ A = A.
ax = op.apply(x)
axx = op.apply(dr.VideoTensor(op.pseudo_apply(ax).data, unclamped=True))
rel = np.max(np.abs(axx.data - ax.data)) / np.max(np.abs(ax.data))
print(f"A A+ A = A relative error:       {rel:.2e}")

# On a small grid the same operator can be materialized as a matrix and
# compared against numpy's dense pseudo-inverse, column by column.
small = dr.DegradationOperator((8, 8), kernels=[dr.make_gaussian_kernel(5, 0.8, 0.8)], scale=2)
A = np.zeros((16, 64))
for j in range(64):
    e = np.zeros(64)
    e[j] = 1.0
    A[:, j] = small.apply(dr.VideoTensor(e.reshape(1, 8, 8, 1), unclamped=True)).data.ravel()
A_plus = np.zeros((64, 16))
for j in range(16):
    e = np.zeros(16)
    e[j] = 1.0
    A_plus[:, j] = small.pseudo_apply(
        dr.VideoTensor(e.reshape(1, 4, 4, 1), unclamped=True)
    ).data.ravel()
diff = np.max(np.abs(np.linalg.pinv(A) - A_plus))
print(f"dense Moore-Penrose cross-check: {diff:.2e} max entry difference")

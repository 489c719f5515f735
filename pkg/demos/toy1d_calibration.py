"""GPR on the 1D sine toy problem: hyperparameters, calibration and sparsification.

Run: python demos/toy1d_calibration.py
"""

import numpy as np

from uqml import data, gpr
from uqml import evaluation as ev
from uqml.kernels import KernelSpec
from uqml.numerics import make_rng

train = data.gen_toy_1d(8, (-5, 5), seed=0)
xt = np.linspace(-5, 5, 100)
yt = data.toy_1d_true(xt) + 0.1 * make_rng(0, 99).standard_normal(100)

print("hand-set hyperparameters (l, sigma_f, sigma_eps) and their log marginal likelihood")
for l, sf, sn in [(1.0, 1.0, 0.1), (0.1, 1.0, 0.1), (1.0, 3.0, 0.1), (1.0, 1.0, 0.05)]:
    m = gpr.fit(train.X, train.y, KernelSpec.squared_exponential(l, sf), sn, optimize=False)
    print(f"  ({l:4}, {sf:4}, {sn:5}) -> {gpr.log_marginal_likelihood(m):8.3f}")
opt = gpr.fit(train.X, train.y, KernelSpec.squared_exponential(), 0.1, restarts=3, rng=make_rng(0, 5))
print(f"  optimized {opt.kernel.length_scales[0]:.3f}, {opt.kernel.sigma_f:.3f}, {opt.noise_std:.4f}"
      f" -> {gpr.log_marginal_likelihood(opt):8.3f}")

model = gpr.fit(train.X, train.y, KernelSpec.squared_exponential(1.0, 1.0), 0.1, optimize=False)
pred = gpr.predict(model, xt[:, None])
curve = ev.regression_calibration(pred, yt)
print("\nexpected vs observed confidence")
for c, o in zip(curve.levels, curve.observed):
    print(f"  {c:4.1f}  {o:5.2f}")
print(f"ECE {ev.ece(curve):.3f}, miscalibration area {ev.miscalibration_area(curve):.3f}, "
      f"u-pool area {ev.u_pool(pred, yt)[1]:.3f}, NLL {ev.nll(pred, yt, include_constant=True):.3f}")

rep = ev.sparsification(pred.std, yt - pred.mean)
print(f"sparsification: AUSE {rep.ause:.4f}, AURG {rep.aurg:.4f}")

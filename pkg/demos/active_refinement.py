"""Active refinement of a GP surrogate with EI (minimization) and U (level set).

Run: python demos/active_refinement.py
"""

import numpy as np

from uqml import acquisition as acq
from uqml import gpr
from uqml.kernels import KernelSpec
from uqml.numerics import make_rng


def quartic(x):
    return x**4 - 3 * x**2 + x


cand = np.linspace(-2, 2, 401)[:, None]
X0 = make_rng(0).uniform(-2, 2, (3, 1))
model = gpr.fit(X0, quartic(X0[:, 0]), KernelSpec.squared_exponential(), 1e-6,
                optimize_noise=False, restarts=3, rng=make_rng(0, 5))
_, trace = acq.refine(model, lambda x: quartic(x[0]), acq.AcquisitionSpec("ei"), cand, 15,
                      rng=make_rng(0, 6), restarts=3)
print("EI on x^4 - 3x^2 + x")
for it, x, a, f in zip(trace.iteration, trace.x[:, 0], trace.acquisition, trace.observed):
    print(f"  {it:2d}  x={x:+.3f}  EI={a:.2e}  f={f:+.4f}")
print(f"best found {trace.observed.min():+.5f}, grid minimum {quartic(cand).min():+.5f}")

cand = np.linspace(-3, 3, 121)[:, None]
X0 = np.array([[-2.5], [0.3], [2.0]])
model = gpr.fit(X0, np.sin(X0[:, 0]), KernelSpec.squared_exponential(), 1e-3, optimize=False)
_, trace = acq.refine(model, lambda x: np.sin(x[0]), acq.AcquisitionSpec("u", threshold=0.5), cand, 8, optimize=False)
print("\nU on sin(x) = 0.5: chosen points", np.round(trace.x[:, 0], 2))

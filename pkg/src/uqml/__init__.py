"""Uncertainty quantification for regression with numpy and scipy.

Submodules
----------
numerics     Cholesky with nugget escalation, seeded RNG streams, power iteration.
kernels      Stationary covariance functions and their gradients.
gpr          Exact Gaussian process regression.
nnet         Feedforward networks with manual backpropagation.
bnn          Bayesian neural networks: MC dropout, MH, MFVI, SVGD.
ensemble     Deep ensembles and variance decomposition.
sngp         Spectral-normalized networks with a random-feature GP head.
evaluation   Calibration, NLL, sparsification and recalibration metrics.
acquisition  EFF, U and EI acquisition functions and GP refinement.
data         Toy generators, CSV ingestion and standardization.
pipeline     Config-driven training and model bundles used by the CLI.
"""

__version__ = "0.1.0"

from . import acquisition, bnn, data, ensemble, evaluation, gpr, kernels, nnet, numerics, sngp  # noqa: E402
from .prediction import GaussianPrediction  # noqa: E402

__all__ = [
    "__version__",
    "GaussianPrediction",
    "acquisition",
    "bnn",
    "data",
    "ensemble",
    "evaluation",
    "gpr",
    "kernels",
    "nnet",
    "numerics",
    "sngp",
]

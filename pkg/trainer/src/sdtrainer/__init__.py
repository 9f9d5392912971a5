"""Structure-guided piecewise network training for dominance-constrained
quantile optimization.

Consumes the solver's export file (partition, multiplier, market and
preference descriptors) and trains one sub-network per partition segment
on top of analytic priors, with penalty terms enforcing the budget and
the cumulative-dominance constraint.
"""

from .model import NetworkSpec, QuantileNetwork, fourier_features, prior
from .training import Divergence, TrainRun, load_export, loss_terms, train

__all__ = [
    "NetworkSpec",
    "QuantileNetwork",
    "fourier_features",
    "prior",
    "Divergence",
    "TrainRun",
    "load_export",
    "loss_terms",
    "train",
]

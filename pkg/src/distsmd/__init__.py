"""Distributed stochastic mirror descent for Bayesian estimation on networks."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .density import (GaussianDensity, VariableLayout, condition, conditional_marginal_product,
                      geometric_mean, kl_divergence, marginalize, tv_distance)
from .engine import RoundTrace, run_rounds
from .estimators import (AdaptiveOracle, Constant, RobbinsMonro, centralized_step, distributed_step,
                         marginal_step)
from .grid import Axis, GridDensity
from .network import Network, contraction_rate, sinkhorn_normalize

__all__ = [
    "__version__", "GaussianDensity", "VariableLayout", "condition", "conditional_marginal_product",
    "geometric_mean", "kl_divergence", "marginalize", "tv_distance", "RoundTrace", "run_rounds",
    "AdaptiveOracle", "Constant", "RobbinsMonro", "centralized_step", "distributed_step",
    "marginal_step", "Axis", "GridDensity", "Network", "contraction_rate", "sinkhorn_normalize",
]

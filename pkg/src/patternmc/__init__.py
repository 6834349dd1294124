"""patternmc: energy-model Monte Carlo inference for spatial patterns.

Subpackages cover the shared machinery (energy models, samplers) and three
pipelines built on it: segment-pattern detection in 3-D point catalogs,
three-component heavy-tail mixture fitting with simulation-based
validation, and Bayesian relative-orbit determination for binary
asteroids.
"""

__version__ = "0.1.0"

from .energy import AnnealingSchedule, EnergyModel, ParameterVector, annealing_target, total_energy
from .errors import (
    AllRejectedError,
    ChainAbortError,
    NonConvergenceError,
    PatternMCError,
    RejectedInputError,
)
from .samplers import (
    ChainRecord,
    MoveMix,
    ProposalSpace,
    TupleConfig,
    anneal,
    birth_death_change_step,
    mh_fixed_dim_step,
    stream,
)

__all__ = [
    "__version__",
    "AnnealingSchedule",
    "EnergyModel",
    "ParameterVector",
    "annealing_target",
    "total_energy",
    "AllRejectedError",
    "ChainAbortError",
    "NonConvergenceError",
    "PatternMCError",
    "RejectedInputError",
    "ChainRecord",
    "MoveMix",
    "ProposalSpace",
    "TupleConfig",
    "anneal",
    "birth_death_change_step",
    "mh_fixed_dim_step",
    "stream",
]

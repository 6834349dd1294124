"""Energy-based posterior models.

The probability of a pattern ``x`` given data ``d`` and parameters ``theta``
is taken proportional to ``exp(-(U_i(x|theta) + U_d(x|theta, d)))`` with an
intractable normalizing constant that is never evaluated; all inference works
with energy differences.  ``U_i`` shapes the internal geometry of the pattern
(the interaction energy) and ``U_d`` anchors it to the observed data (the
data energy).  A ``+inf`` energy marks a hard-core violation and means
"reject outright", never arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import RejectedInputError

__all__ = [
    "ParameterVector",
    "EnergyModel",
    "AnnealingSchedule",
    "total_energy",
    "annealing_target",
]


def _flat_prior(theta: Any) -> float:
    return 0.0


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Named real parameters with per-parameter closed bounds.

    Parameters
    ----------
    names : tuple of str
        Unique parameter names, one per entry of ``values``.
    values : array
        Current parameter values; each must lie within its bounds.
    lower, upper : array
        Closed interval bounds.  Infinite bounds are allowed.
    """

    names: tuple[str, ...]
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        values = np.asarray(self.values, dtype=float).copy()
        lower = np.asarray(self.lower, dtype=float).copy()
        upper = np.asarray(self.upper, dtype=float).copy()
        if len(set(names)) != len(names):
            raise RejectedInputError("parameter names must be unique")
        if not (values.shape == lower.shape == upper.shape == (len(names),)):
            raise RejectedInputError(
                "names, values and bounds must all have the same length"
            )
        if np.any(np.isnan(values)):
            raise RejectedInputError("parameter values must not be NaN")
        if np.any(lower > upper):
            raise RejectedInputError("lower bound exceeds upper bound")
        if np.any(values < lower) or np.any(values > upper):
            bad = [
                names[i]
                for i in range(len(names))
                if values[i] < lower[i] or values[i] > upper[i]
            ]
            raise RejectedInputError(f"values out of bounds for: {', '.join(bad)}")
        values.flags.writeable = False
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def with_values(self, values: Sequence[float]) -> "ParameterVector":
        """Return a copy holding ``values`` under the same names and bounds."""
        return ParameterVector(self.names, np.asarray(values, float), self.lower, self.upper)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def flatten(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class EnergyModel:
    """Pairing of interaction- and data-energy evaluators.

    ``interaction(state, theta)`` and ``data(state, theta, dataset)`` must
    return finite floats for every valid state; ``+inf`` is reserved for
    hard-core rejection.  ``prior_log_density(theta)`` defaults to a flat
    (improper) prior.  ``validate_state``, when given, raises
    :class:`RejectedInputError` for malformed states.
    """

    interaction: Callable[[Any, Any], float]
    data: Callable[[Any, Any, Any], float]
    prior_log_density: Callable[[Any], float] = _flat_prior
    validate_state: Callable[[Any], None] | None = None


@dataclass(frozen=True)
class AnnealingSchedule:
    """Geometric cooling ladder.

    Temperatures run from ``initial_temperature`` down to
    ``final_temperature`` (inclusive, clamped), multiplying by
    ``cooling_factor`` between levels; ``steps_per_level`` moves are made at
    each level.  Equal initial and final temperatures give a single level,
    i.e. plain Metropolis-Hastings at that temperature.
    """

    initial_temperature: float
    cooling_factor: float
    steps_per_level: int
    final_temperature: float

    def __post_init__(self):
        if not (self.initial_temperature > 0 and math.isfinite(self.initial_temperature)):
            raise RejectedInputError("initial_temperature must be positive and finite")
        if not (self.final_temperature > 0 and math.isfinite(self.final_temperature)):
            raise RejectedInputError("final_temperature must be positive and finite")
        if self.final_temperature > self.initial_temperature:
            raise RejectedInputError("final_temperature must not exceed initial_temperature")
        if not (0.0 < self.cooling_factor < 1.0):
            raise RejectedInputError("cooling_factor must lie in (0, 1)")
        if int(self.steps_per_level) < 1:
            raise RejectedInputError("steps_per_level must be a positive integer")
        object.__setattr__(self, "steps_per_level", int(self.steps_per_level))

    def temperatures(self):
        """Yield the temperature of each level, highest first."""
        t = float(self.initial_temperature)
        while True:
            yield t
            if t <= self.final_temperature:
                return
            t = max(t * self.cooling_factor, self.final_temperature)

    @property
    def n_levels(self) -> int:
        return sum(1 for _ in self.temperatures())

    @classmethod
    def default(cls, dimension: int = 1) -> "AnnealingSchedule":
        """Conventional schedule: geometric 0.95 cooling, 10*dimension
        (at least 100) steps per level."""
        return cls(
            initial_temperature=5.0,
            cooling_factor=0.95,
            steps_per_level=max(100, 10 * int(dimension)),
            final_temperature=0.01,
        )

    def as_dict(self) -> dict[str, float]:
        return {
            "initial_temperature": self.initial_temperature,
            "cooling_factor": self.cooling_factor,
            "steps_per_level": self.steps_per_level,
            "final_temperature": self.final_temperature,
        }


def total_energy(state: Any, theta: Any, dataset: Any, model: EnergyModel) -> float:
    """Total energy ``U_i(state|theta) + U_d(state|theta, dataset)``.

    Deterministic for fixed inputs.  Raises
    :class:`~patternmc.errors.RejectedInputError` for invalid states or if an
    energy evaluator returns NaN.
    """
    if model.validate_state is not None:
        model.validate_state(state)
    u_i = float(model.interaction(state, theta))
    u_d = float(model.data(state, theta, dataset))
    if math.isnan(u_i) or math.isnan(u_d):
        raise RejectedInputError("energy evaluator returned NaN")
    return u_i + u_d


def annealing_target(
    state: Any,
    theta: Any,
    dataset: Any,
    model: EnergyModel,
    temperature: float,
) -> float:
    """Tempered objective ``(U_i + U_d - log p(theta)) / temperature``.

    At temperature 1 this is the unnormalized negative log-posterior (up to
    the constant from the never-evaluated normalizing factor); simulated
    annealing minimizes it along a cooling ladder.
    """
    if not (temperature > 0) or math.isnan(temperature):
        raise RejectedInputError("temperature must be positive")
    energy = total_energy(state, theta, dataset, model)
    return (energy - float(model.prior_log_density(theta))) / float(temperature)

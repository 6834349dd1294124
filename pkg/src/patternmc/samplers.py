"""Metropolis-Hastings kernels and the simulated-annealing driver.

Two kinds of state are supported: fixed-dimension parameter vectors
(symmetric Gaussian random walk, reflected or wrapped at the bounds) and
variable-dimension object configurations (birth / death / change moves with
the Geyer-Moller acceptance ratios for a rate-``intensity`` Poisson
reference process).  All randomness flows through counter-based Philox
generators so that a seed fully determines a chain.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .energy import AnnealingSchedule, EnergyModel, ParameterVector, total_energy
from .errors import ChainAbortError, RejectedInputError

__all__ = [
    "ChainRecord",
    "MoveMix",
    "DEFAULT_MOVE_MIX",
    "ProposalSpace",
    "TupleConfig",
    "AnnealResult",
    "stream",
    "mh_fixed_dim_step",
    "birth_death_change_step",
    "anneal",
]


def stream(seed: int, *labels) -> np.random.Generator:
    """Named Philox substream of the master ``seed``.

    Distinct label tuples give statistically independent streams, so adding
    a new consumer never perturbs existing ones.
    """
    key = tuple(zlib.crc32(repr(label).encode()) for label in labels)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(rng))))


@dataclass(frozen=True)
class MoveMix:
    """Probabilities of the birth, death and change moves."""

    birth: float = 0.4
    death: float = 0.4
    change: float = 0.2

    def __post_init__(self):
        probs = (self.birth, self.death, self.change)
        if any(p < 0 for p in probs):
            raise RejectedInputError("move probabilities must be nonnegative")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise RejectedInputError("move probabilities must sum to 1 within 1e-12")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.birth, self.death, self.change)


DEFAULT_MOVE_MIX = MoveMix(0.4, 0.4, 0.2)


@dataclass(frozen=True)
class ProposalSpace:
    """Object-level proposals for a variable-dimension sampler.

    ``volume`` is the measure of the window the birth move samples uniformly
    from (marks are drawn from their normalized reference law and cancel in
    the acceptance ratio).  ``perturb`` must be a symmetric proposal.
    """

    volume: float
    sample: Callable[[np.random.Generator], Any]
    perturb: Callable[[Any, np.random.Generator], Any]

    def __post_init__(self):
        if not (self.volume > 0 and math.isfinite(self.volume)):
            raise RejectedInputError("proposal-space volume must be positive and finite")


class TupleConfig:
    """Minimal immutable object configuration backed by a tuple."""

    __slots__ = ("items",)

    def __init__(self, items: Sequence[Any] = ()):
        self.items = tuple(items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def __iter__(self):
        return iter(self.items)

    def __eq__(self, other):
        return isinstance(other, TupleConfig) and self.items == other.items

    def add(self, obj) -> "TupleConfig":
        return TupleConfig(self.items + (obj,))

    def remove(self, i: int) -> "TupleConfig":
        return TupleConfig(self.items[:i] + self.items[i + 1 :])

    def replace(self, i: int, obj) -> "TupleConfig":
        return TupleConfig(self.items[:i] + (obj,) + self.items[i + 1 :])

    def flatten(self) -> np.ndarray:
        return np.asarray([float(x) for x in self.items], dtype=float)


def _flatten_state(state) -> np.ndarray:
    if isinstance(state, np.ndarray):
        return np.asarray(state, float).ravel()
    flat = getattr(state, "flatten", None)
    if flat is not None:
        return np.asarray(flat(), float).ravel()
    return np.asarray(state, float).ravel()


@dataclass
class ChainRecord:
    """Ordered record of sampled states with acceptance bookkeeping.

    Replaying the producing routine with the same seed and inputs
    reproduces the record exactly.
    """

    seed: int | None
    states: list = field(default_factory=list)
    log_targets: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    moves: list = field(default_factory=list)

    def append(self, state, log_target: float, accepted: bool, move: str = "mh"):
        self.states.append(state)
        self.log_targets.append(float(log_target))
        self.accepted.append(bool(accepted))
        self.moves.append(str(move))

    def __len__(self):
        return len(self.states)

    def __post_init__(self):
        n = len(self.states)
        if not (len(self.log_targets) == len(self.accepted) == len(self.moves) == n):
            raise RejectedInputError("record columns must have equal lengths")

    @property
    def acceptance_rate(self) -> float:
        if not self.accepted:
            return float("nan")
        return float(np.mean(self.accepted))

    def save(self, csv_path, meta_path=None, extra_meta: dict | None = None):
        """One CSV row per recorded step plus a JSON sidecar.

        Row layout: step index, move kind, accepted flag, log target and the
        flattened state (space-separated floats, shortest round-trip repr).
        """
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "move", "accepted", "log_target", "state"])
            for i, (state, lt, acc, move) in enumerate(
                zip(self.states, self.log_targets, self.accepted, self.moves)
            ):
                flat = _flatten_state(state)
                writer.writerow(
                    [i, move, int(acc), repr(float(lt)), " ".join(repr(float(v)) for v in flat)]
                )
        if meta_path is not None:
            meta = {"seed": self.seed, "n_steps": len(self)}
            if extra_meta:
                meta.update(extra_meta)
            with open(meta_path, "w") as fh:
                json.dump(meta, fh, sort_keys=True, indent=2)
                fh.write("\n")

    @staticmethod
    def load(csv_path, meta_path=None) -> "ChainRecord":
        """Load a saved chain; states come back as flat float arrays."""
        seed = None
        if meta_path is not None:
            with open(meta_path) as fh:
                seed = json.load(fh).get("seed")
        record = ChainRecord(seed=seed)
        with open(csv_path, newline="") as fh:
            for row in csv.DictReader(fh):
                state = np.asarray(
                    [float(tok) for tok in row["state"].split()] if row["state"] else [],
                    dtype=float,
                )
                record.append(state, float(row["log_target"]), bool(int(row["accepted"])), row["move"])
        return record


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Fold values into [lo, hi] by repeated reflection (a symmetric map)."""
    x = np.asarray(x, float).copy()
    finite = np.isfinite(lo) & np.isfinite(hi)
    width = hi - lo
    zero = finite & (width == 0)
    x[zero] = lo[zero]
    mask = finite & (width > 0)
    if np.any(mask):
        period = 2.0 * width[mask]
        y = np.mod(x[mask] - lo[mask], period)
        x[mask] = lo[mask] + np.where(y > width[mask], period - y, y)
    return x


def _wrap(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Fold values into [lo, hi) periodically."""
    width = hi - lo
    return lo + np.mod(x - lo, width)


def _propose_reflected(
    values: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    scale: np.ndarray,
    rng: np.random.Generator,
    circular: np.ndarray | None,
) -> np.ndarray:
    prop = values + scale * rng.standard_normal(values.shape)
    if circular is not None and np.any(circular):
        out = prop.copy()
        out[circular] = _wrap(prop[circular], lower[circular], upper[circular])
        notc = ~circular
        out[notc] = _reflect(prop[notc], lower[notc], upper[notc])
        return out
    return _reflect(prop, lower, upper)


def mh_fixed_dim_step(
    current: ParameterVector,
    target: Callable[[ParameterVector], float],
    proposal_scale,
    rng,
    circular: Sequence[bool] | None = None,
    full_output: bool = False,
):
    """One random-walk Metropolis step on a bounded parameter vector.

    The proposal is a symmetric Gaussian step, reflected at the bounds (or
    wrapped, for dimensions flagged ``circular``) so it stays symmetric;
    acceptance probability is ``min(1, exp(logT(prop) - logT(cur)))``.

    Returns ``(next, accepted)``; with ``full_output=True`` also returns the
    proposal, which is useful for acceptance-rate diagnostics.
    """
    rng = _as_generator(rng)
    scale = np.broadcast_to(np.asarray(proposal_scale, float), (current.dim,)).copy()
    if np.any(scale < 0) or np.any(np.isnan(scale)):
        raise RejectedInputError("proposal scales must be nonnegative")
    circ = None
    if circular is not None:
        circ = np.asarray(circular, bool)
        if circ.shape != (current.dim,):
            raise RejectedInputError("circular mask must have one flag per parameter")

    lt_cur = float(target(current))
    if math.isnan(lt_cur):
        raise ChainAbortError("target is NaN at the current state", state=current)
    if math.isinf(lt_cur) and lt_cur < 0:
        raise ChainAbortError("target is -inf at the current state", state=current)

    prop_values = _propose_reflected(current.values, current.lower, current.upper, scale, rng, circ)
    proposal = current.with_values(prop_values)
    lt_prop = float(target(proposal))
    if math.isnan(lt_prop):
        raise ChainAbortError("target returned NaN at a proposal", state=proposal)

    log_ratio = lt_prop - lt_cur
    accept = log_ratio >= 0 or math.log(rng.uniform()) < log_ratio
    nxt = proposal if accept else current
    if full_output:
        return nxt, accept, proposal
    return nxt, accept


def _config_energy(config, model: EnergyModel, theta, dataset) -> float:
    return total_energy(config, theta, dataset, model)


def _log_prob_ratio(p_forward: float, p_reverse: float) -> float:
    """log(p_reverse / p_forward); -inf when the move is not reversible."""
    if p_forward == p_reverse:
        return 0.0
    if p_reverse == 0.0:
        return -math.inf
    return math.log(p_reverse) - math.log(p_forward)


def _bdc_step(
    config,
    energy_current: float,
    model: EnergyModel,
    theta,
    dataset,
    mix: MoveMix,
    temperature: float,
    rng: np.random.Generator,
    space: ProposalSpace,
    intensity: float,
):
    """One birth/death/change move; returns (config, energy, accepted, kind)."""
    n = len(config)
    u = rng.uniform()
    if u < mix.birth:
        kind = "birth"
        obj = space.sample(rng)
        new = config.add(obj)
        e_new = _config_energy(new, model, theta, dataset)
        if math.isinf(e_new):
            return config, energy_current, False, kind
        log_ratio = (
            math.log(intensity * space.volume)
            - math.log(n + 1)
            - (e_new - energy_current) / temperature
            + _log_prob_ratio(mix.birth, mix.death)
        )
    elif u < mix.birth + mix.death:
        kind = "death"
        if n == 0:
            return config, energy_current, False, kind
        i = int(rng.integers(n))
        new = config.remove(i)
        e_new = _config_energy(new, model, theta, dataset)
        if math.isinf(e_new):
            return config, energy_current, False, kind
        log_ratio = (
            math.log(n)
            - math.log(intensity * space.volume)
            - (e_new - energy_current) / temperature
            + _log_prob_ratio(mix.death, mix.birth)
        )
    else:
        kind = "change"
        if n == 0:
            return config, energy_current, False, kind
        i = int(rng.integers(n))
        new = config.replace(i, space.perturb(config[i], rng))
        e_new = _config_energy(new, model, theta, dataset)
        if math.isinf(e_new):
            return config, energy_current, False, kind
        log_ratio = -(e_new - energy_current) / temperature

    if log_ratio >= 0 or math.log(rng.uniform()) < log_ratio:
        return new, e_new, True, kind
    return config, energy_current, False, kind


def birth_death_change_step(
    config,
    model: EnergyModel,
    theta,
    dataset,
    mix: MoveMix,
    temperature: float,
    rng,
    space: ProposalSpace,
    intensity: float = 1.0,
):
    """One trans-dimensional Metropolis-Hastings move on a configuration.

    Birth proposes a uniform new object in the window and is accepted with
    ``min(1, intensity*volume/(n+1) * exp(-dU/T))`` (times the move-mix
    correction when birth and death probabilities differ); death has the
    reciprocal structure; change perturbs one object symmetrically.
    Proposals with ``+inf`` energy are always rejected; a death or change
    proposed on an empty configuration counts as a rejected move.

    Returns ``(next_config, accepted, move_kind)``.
    """
    rng = _as_generator(rng)
    if not (temperature > 0):
        raise RejectedInputError("temperature must be positive")
    if intensity <= 0:
        raise RejectedInputError("intensity must be positive")
    e_cur = _config_energy(config, model, theta, dataset)
    if math.isinf(e_cur):
        raise RejectedInputError("current configuration has infinite energy")
    new, _, accepted, kind = _bdc_step(
        config, e_cur, model, theta, dataset, mix, float(temperature), rng, space, float(intensity)
    )
    return new, accepted, kind


class AnnealResult(NamedTuple):
    best_state: Any
    best_energy: float
    record: ChainRecord


def anneal(
    initial,
    model: EnergyModel,
    theta,
    dataset,
    schedule: AnnealingSchedule,
    mix: MoveMix | None = None,
    rng: int | np.random.Generator = 0,
    space: ProposalSpace | None = None,
    proposal_scale=None,
    intensity: float = 1.0,
    record_every: int = 1,
) -> AnnealResult:
    """Simulated annealing toward the minimum-energy state.

    Runs ``schedule.steps_per_level`` Metropolis-Hastings moves at each
    temperature of the cooling ladder.  With ``space=None`` the state is a
    :class:`ParameterVector` sampled by the reflected random walk
    (``proposal_scale`` defaults to 5% of each bound width); otherwise the
    state is an object configuration sampled with birth/death/change moves.

    Returns the lowest-energy state ever visited (not merely the final
    state), its total energy, and the chain record.  The log-prior of
    ``theta`` is constant during a run, so best-state tracking uses the
    total energy alone.
    """
    seed = int(rng) if not isinstance(rng, np.random.Generator) else None
    gen = _as_generator(rng)
    mix = mix if mix is not None else DEFAULT_MOVE_MIX
    record = ChainRecord(seed=seed)
    record_every = max(1, int(record_every))
    log_prior = float(model.prior_log_density(theta))

    state = initial
    energy = total_energy(state, theta, dataset, model)
    if math.isinf(energy):
        raise RejectedInputError("initial state has infinite energy")
    best_state, best_energy = state, energy

    fixed_dim = space is None
    if fixed_dim:
        if not isinstance(state, ParameterVector):
            raise RejectedInputError("fixed-dimension annealing needs a ParameterVector state")
        if proposal_scale is None:
            width = state.upper - state.lower
            if not np.all(np.isfinite(width)):
                raise RejectedInputError(
                    "default proposal scales need finite bounds; pass proposal_scale"
                )
            proposal_scale = 0.05 * width
        scale = np.broadcast_to(np.asarray(proposal_scale, float), (state.dim,)).copy()

    step_index = 0
    for temperature in schedule.temperatures():
        for _ in range(schedule.steps_per_level):
            if fixed_dim:
                prop_values = _propose_reflected(
                    state.values, state.lower, state.upper, scale, gen, None
                )
                proposal = state.with_values(prop_values)
                e_prop = total_energy(proposal, theta, dataset, model)
                if math.isnan(e_prop):
                    raise ChainAbortError("energy returned NaN at a proposal", state=proposal)
                if math.isinf(e_prop):
                    accepted = False
                else:
                    log_ratio = -(e_prop - energy) / temperature
                    accepted = log_ratio >= 0 or math.log(gen.uniform()) < log_ratio
                if accepted:
                    state, energy = proposal, e_prop
                kind = "mh"
            else:
                state, energy, accepted, kind = _bdc_step(
                    state, energy, model, theta, dataset, mix, temperature, gen, space, intensity
                )
            if energy < best_energy:
                best_state, best_energy = state, energy
            if step_index % record_every == 0:
                record.append(state, -(energy - log_prior) / temperature, accepted, kind)
            step_index += 1
    return AnnealResult(best_state, float(best_energy), record)

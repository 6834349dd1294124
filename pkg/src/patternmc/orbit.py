"""Keplerian relative-orbit propagation and Bayesian orbit determination.

The relative orbit of the secondary body about the primary is parametrized
by seven elements (period, semi-major axis, eccentricity, inclination,
longitude of the ascending node, argument of periapsis, time of periapsis).
Observed sky-plane offsets in km are compared with propagated positions
under an isotropic Gaussian error model, and the posterior over the seven
elements (uniform box prior) is explored with a random-walk
Metropolis-Hastings chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import AllRejectedError, NonConvergenceError, RejectedInputError
from .samplers import ChainRecord, _as_generator, _propose_reflected

__all__ = [
    "ORBIT_PARAM_NAMES",
    "KeplerOrbit",
    "Observation",
    "PriorBox",
    "OrbitSummary",
    "FitResult",
    "solve_kepler",
    "propagate",
    "log_likelihood",
    "summarize",
    "fit_orbit",
]

ORBIT_PARAM_NAMES = (
    "period_days",
    "semi_major_axis_km",
    "eccentricity",
    "inclination_deg",
    "ascending_node_deg",
    "arg_periapsis_deg",
    "time_periapsis_rjd",
)

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class KeplerOrbit:
    """Seven relative-orbit elements.

    Angles are degrees; the node and the argument of periapsis are
    normalized into [0, 360) on construction, the inclination must lie in
    [0, 180].  Times are reduced Julian dates in days.
    """

    period_days: float
    semi_major_axis_km: float
    eccentricity: float
    inclination_deg: float
    ascending_node_deg: float
    arg_periapsis_deg: float
    time_periapsis_rjd: float

    def __post_init__(self):
        if not (self.period_days > 0):
            raise RejectedInputError("period must be positive")
        if not (self.semi_major_axis_km > 0):
            raise RejectedInputError("semi-major axis must be positive")
        if not (0.0 <= self.eccentricity < 1.0):
            raise RejectedInputError("eccentricity must lie in [0, 1)")
        if not (0.0 <= self.inclination_deg <= 180.0):
            raise RejectedInputError("inclination must lie in [0, 180] degrees")
        object.__setattr__(self, "ascending_node_deg", float(self.ascending_node_deg) % 360.0)
        object.__setattr__(self, "arg_periapsis_deg", float(self.arg_periapsis_deg) % 360.0)

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in ORBIT_PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "KeplerOrbit":
        values = np.asarray(values, float)
        if values.shape != (7,):
            raise RejectedInputError("orbit array must have 7 entries")
        return cls(*[float(v) for v in values])

    def as_dict(self) -> dict[str, float]:
        return {n: float(getattr(self, n)) for n in ORBIT_PARAM_NAMES}


@dataclass(frozen=True)
class Observation:
    """Relative astrometric position on the sky plane, in km."""

    epoch_rjd: float
    dx_km: float
    dy_km: float
    sigma_km: float

    def __post_init__(self):
        if not (self.sigma_km > 0):
            raise RejectedInputError("sigma must be positive")
        for v in (self.epoch_rjd, self.dx_km, self.dy_km):
            if not math.isfinite(v):
                raise RejectedInputError("observation fields must be finite")


def validate_observations(observations: Sequence[Observation]) -> None:
    if len(observations) == 0:
        raise RejectedInputError("observations must be nonempty")
    epochs = [o.epoch_rjd for o in observations]
    if any(b <= a for a, b in zip(epochs, epochs[1:])):
        raise RejectedInputError("observation epochs must be strictly increasing")


def solve_kepler(mean_anomaly, eccentricity):
    """Solve ``E - e sin E = M`` for the eccentric anomaly.

    Newton iteration from Danby's starter with a bisection fallback;
    converges to ``|E - e sin E - M| < 1e-12`` for every ``0 <= e < 1``.
    ``mean_anomaly`` may be a scalar or array (reduced mod 2*pi first);
    broadcasting against ``eccentricity`` is supported.

    Returns the eccentric anomaly in radians, same shape as the broadcast
    inputs (a float for scalar input).
    """
    m, e = np.broadcast_arrays(np.asarray(mean_anomaly, float), np.asarray(eccentricity, float))
    scalar = m.ndim == 0
    shape = m.shape
    if np.any((e < 0) | (e >= 1)):
        raise RejectedInputError("eccentricity must lie in [0, 1)")
    m = np.mod(m, _TWO_PI).ravel()
    ecc = np.ascontiguousarray(e, dtype=float).ravel()
    big_e = m + 0.85 * ecc * np.sign(np.sin(m))
    residual = big_e - ecc * np.sin(big_e) - m
    active = np.abs(residual) > 1e-14
    for _ in range(60):
        if not np.any(active):
            break
        ea = big_e[active]
        ra = residual[active]
        step = ra / (1.0 - ecc[active] * np.cos(ea))
        # Newton can overshoot near (M ~ 0, e ~ 1); keep E inside the bracket.
        ea = np.clip(ea - step, m[active] - ecc[active], m[active] + ecc[active])
        big_e[active] = ea
        residual[active] = ea - ecc[active] * np.sin(ea) - m[active]
        active = np.abs(residual) > 1e-14

    if np.any(active):
        big_e, residual = _bisect_kepler(m, ecc, big_e, residual, np.abs(residual) > 1e-13)
    if np.any(np.abs(residual) >= 1e-12):
        raise NonConvergenceError("Kepler solver failed to reach 1e-12 residual")
    return float(big_e[0]) if scalar else big_e.reshape(shape)


def _bisect_kepler(m, ecc, big_e, residual, mask):
    lo = m - ecc - 1e-12
    hi = m + ecc + 1e-12
    lo = np.where(mask, lo, big_e)
    hi = np.where(mask, hi, big_e)
    for _ in range(130):
        mid = 0.5 * (lo + hi)
        fmid = mid - ecc * np.sin(mid) - m
        lo = np.where(mask & (fmid < 0), mid, lo)
        hi = np.where(mask & (fmid >= 0), mid, hi)
    mid = 0.5 * (lo + hi)
    big_e = np.where(mask, mid, big_e)
    residual = big_e - ecc * np.sin(big_e) - m
    return big_e, residual


def _rotation_matrix(node_rad: float, incl_rad: float, argp_rad: float) -> np.ndarray:
    """Perifocal-to-reference rotation ``Rz(node) @ Rx(incl) @ Rz(argp)``."""
    cn, sn = math.cos(node_rad), math.sin(node_rad)
    ci, si = math.cos(incl_rad), math.sin(incl_rad)
    cw, sw = math.cos(argp_rad), math.sin(argp_rad)
    rz_node = np.array([[cn, -sn, 0.0], [sn, cn, 0.0], [0.0, 0.0, 1.0]])
    rx_incl = np.array([[1.0, 0.0, 0.0], [0.0, ci, -si], [0.0, si, ci]])
    rz_argp = np.array([[cw, -sw, 0.0], [sw, cw, 0.0], [0.0, 0.0, 1.0]])
    return rz_node @ rx_incl @ rz_argp


def _propagate_values(values: np.ndarray, epochs: np.ndarray):
    period, a, e, incl, node, argp, t_p = [float(v) for v in values]
    mean_anom = _TWO_PI * (np.asarray(epochs, float) - t_p) / period
    big_e = solve_kepler(mean_anom, e)
    big_e = np.asarray(big_e, float)
    x_p = a * (np.cos(big_e) - e)
    y_p = a * math.sqrt(1.0 - e * e) * np.sin(big_e)
    rot = _rotation_matrix(math.radians(node), math.radians(incl), math.radians(argp))
    dx = rot[0, 0] * x_p + rot[0, 1] * y_p
    dy = rot[1, 0] * x_p + rot[1, 1] * y_p
    return dx, dy


def propagate(orbit: KeplerOrbit, epoch):
    """Sky-plane relative position (dx, dy) in km at ``epoch`` (RJD).

    The mean anomaly ``2*pi*(epoch - time_periapsis)/period`` is converted
    to an eccentric anomaly, the in-plane position is rotated by argument of
    periapsis, inclination and node, and the first two components of the
    rotated vector are returned.  ``epoch`` may be a scalar or an array.
    """
    scalar = np.isscalar(epoch)
    dx, dy = _propagate_values(orbit.to_array(), np.atleast_1d(np.asarray(epoch, float)))
    if scalar:
        return float(dx[0]), float(dy[0])
    return dx, dy


class _ObsArrays(NamedTuple):
    epochs: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    sigma: np.ndarray
    log_norm: float


def _obs_arrays(observations: Sequence[Observation]) -> _ObsArrays:
    validate_observations(observations)
    epochs = np.array([o.epoch_rjd for o in observations], float)
    dx = np.array([o.dx_km for o in observations], float)
    dy = np.array([o.dy_km for o in observations], float)
    sigma = np.array([o.sigma_km for o in observations], float)
    log_norm = -float(np.sum(np.log(_TWO_PI * sigma**2)))
    return _ObsArrays(epochs, dx, dy, sigma, log_norm)


def _log_likelihood_values(values: np.ndarray, obs: _ObsArrays) -> float:
    dx_pred, dy_pred = _propagate_values(values, obs.epochs)
    chi2 = np.sum(((obs.dx - dx_pred) ** 2 + (obs.dy - dy_pred) ** 2) / obs.sigma**2)
    return -0.5 * float(chi2) + obs.log_norm


def log_likelihood(orbit: KeplerOrbit, observations: Sequence[Observation]) -> float:
    """Gaussian independent-residual log-likelihood.

    ``-1/2 sum[(dx_obs-dx_pred)^2 + (dy_obs-dy_pred)^2]/sigma^2
    - sum log(2*pi*sigma^2)`` over the observations.
    """
    return _log_likelihood_values(orbit.to_array(), _obs_arrays(observations))


@dataclass(frozen=True)
class PriorBox:
    """Per-parameter uniform prior intervals for the seven elements."""

    period_days: tuple[float, float]
    semi_major_axis_km: tuple[float, float]
    eccentricity: tuple[float, float]
    inclination_deg: tuple[float, float]
    ascending_node_deg: tuple[float, float]
    arg_periapsis_deg: tuple[float, float]
    time_periapsis_rjd: tuple[float, float]

    def __post_init__(self):
        for name in ORBIT_PARAM_NAMES:
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise RejectedInputError(f"{name}: prior interval needs finite lower < upper")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.period_days[0] <= 0:
            raise RejectedInputError("period prior must be positive")
        if self.semi_major_axis_km[0] <= 0:
            raise RejectedInputError("semi-major axis prior must be positive")
        if self.eccentricity[0] < 0 or self.eccentricity[1] >= 1:
            raise RejectedInputError("eccentricity prior must stay inside [0, 1)")
        if self.inclination_deg[0] < 0 or self.inclination_deg[1] > 180:
            raise RejectedInputError("inclination prior must stay inside [0, 180]")
        for name in ("ascending_node_deg", "arg_periapsis_deg"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi > 360:
                raise RejectedInputError(f"{name} prior must stay inside [0, 360]")

    @property
    def lower(self) -> np.ndarray:
        return np.array([getattr(self, n)[0] for n in ORBIT_PARAM_NAMES], float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([getattr(self, n)[1] for n in ORBIT_PARAM_NAMES], float)

    def contains(self, values: np.ndarray) -> bool:
        values = np.asarray(values, float)
        return bool(np.all(values >= self.lower) and np.all(values <= self.upper))

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def circular_mask(self) -> np.ndarray:
        """Angle dimensions proposed with wrap-around instead of reflection.

        Wrapping applies to the node and the argument of periapsis when
        their interval spans the full circle, avoiding artifacts at 0/360.
        """
        mask = np.zeros(7, bool)
        for i, name in enumerate(ORBIT_PARAM_NAMES):
            if name in ("ascending_node_deg", "arg_periapsis_deg"):
                lo, hi = getattr(self, name)
                mask[i] = (hi - lo) >= 360.0 - 1e-9
        return mask

    def as_dict(self) -> dict[str, list[float]]:
        return {n: list(getattr(self, n)) for n in ORBIT_PARAM_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorBox":
        missing = [n for n in ORBIT_PARAM_NAMES if n not in d]
        if missing:
            raise RejectedInputError(f"prior box missing parameters: {', '.join(missing)}")
        return cls(**{n: tuple(float(v) for v in d[n]) for n in ORBIT_PARAM_NAMES})


@dataclass(frozen=True)
class OrbitSummary:
    """Per-parameter min / median / mean / max over posterior samples."""

    stats: dict

    def __post_init__(self):
        for name, s in self.stats.items():
            # rounding slack: np.mean of identical values can exceed max by ~1 ulp
            tol = 1e-9 * max(1.0, abs(s["min"]), abs(s["max"]))
            if not (
                s["min"] <= s["median"] <= s["max"]
                and s["min"] - tol <= s["mean"] <= s["max"] + tol
            ):
                raise RejectedInputError(f"inconsistent summary ordering for {name}")

    def __getitem__(self, name: str) -> dict:
        return self.stats[name]

    def to_rows(self) -> list[list]:
        """Rows in the seven-element order with min/median/mean/max columns."""
        return [
            [n, self.stats[n]["min"], self.stats[n]["median"], self.stats[n]["mean"], self.stats[n]["max"]]
            for n in ORBIT_PARAM_NAMES
            if n in self.stats
        ]

    def as_dict(self) -> dict:
        return {
            "columns": ["min", "median", "mean", "max"],
            "rows": {
                n: [self.stats[n][c] for c in ("min", "median", "mean", "max")]
                for n in ORBIT_PARAM_NAMES
                if n in self.stats
            },
        }


def summarize(samples: np.ndarray, names: Sequence[str] = ORBIT_PARAM_NAMES) -> OrbitSummary:
    """Order statistics and mean per parameter column.

    ``samples`` is an (n, k) array; the median of an even count is the
    midpoint of the central pair.
    """
    samples = np.asarray(samples, float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.size == 0:
        raise RejectedInputError("cannot summarize an empty sample set")
    if samples.shape[1] != len(names):
        raise RejectedInputError("sample columns do not match the parameter names")
    stats = {}
    for j, name in enumerate(names):
        col = samples[:, j]
        stats[name] = {
            "min": float(np.min(col)),
            "median": float(np.median(col)),
            "mean": float(np.mean(col)),
            "max": float(np.max(col)),
        }
    return OrbitSummary(stats)


def _coarse_start(log_target, prior: PriorBox, rng: np.random.Generator, n_draws: int = 256):
    """Deterministic seeded prior search followed by Nelder-Mead refinement."""
    lower, upper = prior.lower, prior.upper
    best_v = prior.center()
    best_lt = log_target(best_v)
    draws = lower + (upper - lower) * rng.uniform(size=(n_draws, 7))
    for v in draws:
        lt = log_target(v)
        if lt > best_lt:
            best_lt, best_v = lt, v.copy()
    if not math.isfinite(best_lt):
        raise RejectedInputError(
            "no orbit with finite likelihood found inside the prior box"
        )

    width = upper - lower

    def objective(v):
        if np.any(v < lower) or np.any(v > upper):
            return 1e100
        return -log_target(v)

    res = minimize(
        objective,
        best_v,
        method="Nelder-Mead",
        options={"maxiter": 4000, "xatol": 1e-10, "fatol": 1e-10},
    )
    if res.x is not None and math.isfinite(res.fun) and -res.fun >= best_lt:
        best_v = np.clip(res.x, lower, upper)
    return best_v


def _laplace_scales(log_target, values: np.ndarray, prior: PriorBox) -> np.ndarray:
    """Proposal scales from a diagonal Laplace approximation at ``values``.

    Second differences of the negative log-target give per-parameter
    curvatures; the random-walk scale is the classic 2.4/sqrt(d) multiple
    of the implied standard deviations, clipped to sane fractions of the
    box width.  Computed once before sampling; the chain itself never
    adapts.
    """
    width = prior.upper - prior.lower
    scales = width / 100.0
    f0 = log_target(values)
    for i in range(7):
        h = max(1e-7 * width[i], 1e-9)
        for _ in range(40):
            vp = values.copy()
            vm = values.copy()
            vp[i] = min(values[i] + h, prior.upper[i])
            vm[i] = max(values[i] - h, prior.lower[i])
            fp, fm = log_target(vp), log_target(vm)
            curv = -(fp - 2.0 * f0 + fm) / h**2
            if math.isfinite(curv) and curv > 0 and abs(fp - f0) + abs(fm - f0) > 1e-6:
                scales[i] = 1.0 / math.sqrt(curv)
                break
            h *= 4.0
            if h > width[i]:
                break
    scales = (2.4 / math.sqrt(7.0)) * scales
    return np.clip(scales, 1e-12, width / 3.0)


class FitResult(NamedTuple):
    summary: OrbitSummary
    record: ChainRecord
    samples: np.ndarray
    acceptance_rate: float


def fit_orbit(
    observations: Sequence[Observation],
    prior: PriorBox,
    n_steps: int,
    burn_in: int,
    proposal_scales=None,
    seed: int = 0,
    initial: KeplerOrbit | None = None,
    record_every: int = 1,
) -> FitResult:
    """Posterior sampling of the seven orbit elements.

    Random-walk Metropolis-Hastings on the box-uniform prior times the
    Gaussian observation likelihood.  When ``initial`` is omitted, a seeded
    coarse prior search plus Nelder-Mead refinement picks the start and a
    one-off Laplace approximation sets default proposal scales; when
    ``initial`` is given it is used verbatim (with ``proposal_scales``
    defaulting to 1e-4 of the box widths).

    Returns the posterior summary over post-burn-in samples, the chain
    record, the post-burn-in sample array and the post-burn-in acceptance
    rate.  Raises :class:`~patternmc.errors.AllRejectedError` when no
    post-burn-in proposal is ever accepted.
    """
    if not (n_steps > burn_in >= 0):
        raise RejectedInputError("need n_steps > burn_in >= 0")
    obs = _obs_arrays(observations)
    lower, upper = prior.lower, prior.upper
    circular = prior.circular_mask()

    def log_target(v: np.ndarray) -> float:
        if np.any(v < lower) or np.any(v > upper):
            return -math.inf
        return _log_likelihood_values(v, obs)

    rng = _as_generator(seed)
    if initial is not None:
        values = initial.to_array()
        if not prior.contains(values):
            raise RejectedInputError("initial orbit lies outside the prior box")
        if proposal_scales is None:
            proposal_scales = 1e-4 * (upper - lower)
    else:
        values = _coarse_start(log_target, prior, rng)
        if proposal_scales is None:
            proposal_scales = _laplace_scales(log_target, values, prior)
    scales = np.broadcast_to(np.asarray(proposal_scales, float), (7,)).copy()
    if np.any(scales < 0):
        raise RejectedInputError("proposal scales must be nonnegative")

    lt_cur = log_target(values)
    if not math.isfinite(lt_cur):
        raise RejectedInputError("starting orbit has zero posterior density")

    record = ChainRecord(seed=seed)
    record_every = max(1, int(record_every))
    samples = np.empty((n_steps, 7), float)
    accepted_post = 0
    for step in range(n_steps):
        prop = _propose_reflected(values, lower, upper, scales, rng, circular)
        lt_prop = log_target(prop)
        if math.isnan(lt_prop):
            raise RejectedInputError("likelihood returned NaN during sampling")
        log_ratio = lt_prop - lt_cur
        accepted = log_ratio >= 0 or math.log(rng.uniform()) < log_ratio
        if accepted:
            values, lt_cur = prop, lt_prop
        samples[step] = values
        if step >= burn_in:
            accepted_post += int(accepted)
        if step % record_every == 0:
            record.append(values.copy(), lt_cur, accepted, "mh")

    post = samples[burn_in:]
    if accepted_post == 0:
        raise AllRejectedError(
            "every post-burn-in proposal was rejected; "
            "use smaller proposal scales or a better starting point"
        )
    return FitResult(summarize(post), record, post, accepted_post / len(post))

"""Three-component distribution fits and simulation-based validation.

Samples of perturbation magnitudes are modelled by a scaled Beta on the
central bulk with one component per tail: Pareto tails (attached by
translation at the split points, so supports stay contiguous) when the tail
exponent indicates heavy behaviour, scaled Beta tails otherwise.  Fits are
validated by re-simulating the sample many times from the fitted mixture
and checking how many observed percentiles land inside their replicate
confidence bands; running that test per (inclination, perihelion-argument)
cell produces a coverage map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import stats
from scipy.optimize import minimize

from .errors import PatternMCError, RejectedInputError
from .samplers import _as_generator, stream

__all__ = [
    "ScaledBeta",
    "ParetoTail",
    "TailMixture",
    "PerturbationSample",
    "FitConfig",
    "TestConfig",
    "CoverageCell",
    "CoverageMap",
    "tail_index",
    "fit_mixture",
    "simulate",
    "percentile_coverage_test",
    "build_coverage_map",
]

HEAVY_TAIL_EXPONENT = 2.0  # regime threshold: below is heavy, above is light


@dataclass(frozen=True)
class ScaledBeta:
    """Beta(alpha, beta) mapped affinely onto [lo, hi]."""

    alpha: float
    beta: float
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise RejectedInputError("beta shapes must be positive")
        if not (self.lo < self.hi):
            raise RejectedInputError("support needs lo < hi")

    def _frozen(self):
        return stats.beta(self.alpha, self.beta, loc=self.lo, scale=self.hi - self.lo)

    def pdf(self, x):
        return self._frozen().pdf(x)

    def cdf(self, x):
        return self._frozen().cdf(x)

    def ppf(self, u):
        return self._frozen().ppf(u)

    def affine(self, scale: float, shift: float) -> "ScaledBeta":
        return ScaledBeta(self.alpha, self.beta, self.lo * scale + shift, self.hi * scale + shift)

    def as_dict(self) -> dict:
        return {"kind": "scaled_beta", "alpha": self.alpha, "beta": self.beta,
                "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class ParetoTail:
    """Power-law tail attached by translation at a split point.

    For ``side='right'`` the density is ``a x_m^a / (x_m + y - split)^(a+1)``
    on ``y >= split`` (mirrored for the left side), so the support is
    contiguous with the central piece regardless of the split's sign.
    """

    index: float
    scale: float
    split: float
    side: str

    def __post_init__(self):
        if not (self.index > 0):
            raise RejectedInputError("tail index must be positive")
        if not (self.scale > 0):
            raise RejectedInputError("tail scale must be positive")
        if self.side not in ("left", "right"):
            raise RejectedInputError("side must be 'left' or 'right'")

    def _distance(self, x):
        x = np.asarray(x, float)
        return x - self.split if self.side == "right" else self.split - x

    def pdf(self, x):
        t = self._distance(x)
        out = np.where(
            t >= 0,
            self.index * self.scale**self.index
            / np.maximum(self.scale + t, 1e-300) ** (self.index + 1),
            0.0,
        )
        return out if out.ndim else float(out)

    def cdf(self, x):
        """Probability toward the split point: P(X <= x) on the right side
        measured from split outward, mirrored on the left."""
        t = np.maximum(self._distance(x), 0.0)
        inner = 1.0 - (self.scale / (self.scale + t)) ** self.index
        if self.side == "right":
            out = np.where(self._distance(x) < 0, 0.0, inner)
        else:
            out = np.where(self._distance(x) < 0, 1.0, 1.0 - inner)
        return out if np.ndim(out) else float(out)

    def ppf(self, u):
        u = np.asarray(u, float)
        if self.side == "right":
            t = self.scale * ((1.0 - u) ** (-1.0 / self.index) - 1.0)
            out = self.split + t
        else:
            t = self.scale * (u ** (-1.0 / self.index) - 1.0)
            out = self.split - t
        return out if out.ndim else float(out)

    def affine(self, scale: float, shift: float) -> "ParetoTail":
        return ParetoTail(self.index, self.scale * scale, self.split * scale + shift, self.side)

    def as_dict(self) -> dict:
        return {"kind": "pareto_tail", "index": self.index, "scale": self.scale,
                "split": self.split, "side": self.side}


TailComponent = Union[ScaledBeta, ParetoTail]

_SUPPORT_TOL = 1e-9


def _component_from_dict(d: dict) -> TailComponent:
    kind = d.get("kind")
    if kind == "scaled_beta":
        return ScaledBeta(d["alpha"], d["beta"], d["lo"], d["hi"])
    if kind == "pareto_tail":
        return ParetoTail(d["index"], d["scale"], d["split"], d["side"])
    raise RejectedInputError(f"unknown component kind: {kind!r}")


@dataclass(frozen=True)
class TailMixture:
    """Scaled-Beta bulk with one component per tail.

    Component supports must meet at the split points with no gaps or
    overlaps, and the three weights must sum to 1; the mixture density then
    integrates to 1 by construction (checked numerically in the tests).
    """

    center: ScaledBeta
    left_tail: TailComponent
    right_tail: TailComponent
    split_lo: float
    split_hi: float
    weights: tuple[float, float, float]

    def __post_init__(self):
        if not (self.split_lo < self.split_hi):
            raise RejectedInputError("need split_lo < split_hi")
        w = tuple(float(x) for x in self.weights)
        if len(w) != 3 or any(x < 0 for x in w):
            raise RejectedInputError("weights must be three nonnegative reals")
        if abs(sum(w) - 1.0) > 1e-9:
            raise RejectedInputError("weights must sum to 1")
        object.__setattr__(self, "weights", w)
        span = self.split_hi - self.split_lo
        tol = _SUPPORT_TOL * max(1.0, abs(self.split_lo), abs(self.split_hi))
        if abs(self.center.lo - self.split_lo) > tol or abs(self.center.hi - self.split_hi) > tol:
            raise RejectedInputError("center support must span [split_lo, split_hi]")
        if isinstance(self.left_tail, ParetoTail):
            if self.left_tail.side != "left" or abs(self.left_tail.split - self.split_lo) > tol:
                raise RejectedInputError("left tail must attach at split_lo")
        else:
            if abs(self.left_tail.hi - self.split_lo) > tol:
                raise RejectedInputError("left tail support must end at split_lo")
        if isinstance(self.right_tail, ParetoTail):
            if self.right_tail.side != "right" or abs(self.right_tail.split - self.split_hi) > tol:
                raise RejectedInputError("right tail must attach at split_hi")
        else:
            if abs(self.right_tail.lo - self.split_hi) > tol:
                raise RejectedInputError("right tail support must start at split_hi")
        del span

    @property
    def regime(self) -> str:
        """'heavy' when either tail is a power law, else 'light'."""
        heavy = isinstance(self.left_tail, ParetoTail) or isinstance(self.right_tail, ParetoTail)
        return "heavy" if heavy else "light"

    def pdf(self, x):
        x = np.asarray(x, float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        w_l, w_c, w_r = self.weights
        out = np.zeros_like(x)
        left = x < self.split_lo
        right = x > self.split_hi
        mid = ~(left | right)
        if np.any(left) and w_l > 0:
            out[left] = w_l * self.left_tail.pdf(x[left])
        if np.any(mid) and w_c > 0:
            out[mid] = w_c * self.center.pdf(x[mid])
        if np.any(right) and w_r > 0:
            out[right] = w_r * self.right_tail.pdf(x[right])
        return float(out[0]) if scalar else out

    def cdf(self, x):
        x = np.asarray(x, float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        w_l, w_c, w_r = self.weights
        out = np.empty_like(x)
        left = x < self.split_lo
        right = x > self.split_hi
        mid = ~(left | right)
        if np.any(left):
            out[left] = w_l * (self.left_tail.cdf(x[left]) if w_l > 0 else 0.0)
        if np.any(mid):
            out[mid] = w_l + w_c * self.center.cdf(x[mid])
        if np.any(right):
            out[right] = w_l + w_c + w_r * (self.right_tail.cdf(x[right]) if w_r > 0 else 0.0)
        return float(out[0]) if scalar else out

    def ppf(self, u):
        u = np.asarray(u, float)
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        if np.any((u < 0) | (u > 1)):
            raise RejectedInputError("quantile levels must lie in [0, 1]")
        w_l, w_c, w_r = self.weights
        out = np.empty_like(u)
        left = u < w_l
        right = u > w_l + w_c
        mid = ~(left | right)
        if np.any(left):
            out[left] = self.left_tail.ppf(u[left] / w_l)
        if np.any(mid):
            out[mid] = (
                self.center.ppf((u[mid] - w_l) / w_c) if w_c > 0 else self.split_lo
            )
        if np.any(right):
            out[right] = self.right_tail.ppf((u[right] - w_l - w_c) / w_r)
        return float(out[0]) if scalar else out

    def rvs(self, n: int, rng) -> np.ndarray:
        """Inverse-transform draws: pick the component by weight, then map a
        uniform through that component's quantile function."""
        rng = _as_generator(rng)
        n = int(n)
        if n < 0:
            raise RejectedInputError("sample size must be nonnegative")
        if n == 0:
            return np.empty(0)
        w_l, w_c, _ = self.weights
        comp = rng.uniform(size=n)
        u = rng.uniform(size=n)
        out = np.empty(n)
        left = comp < w_l
        right = comp >= w_l + w_c
        mid = ~(left | right)
        if np.any(left):
            out[left] = self.left_tail.ppf(u[left])
        if np.any(mid):
            out[mid] = self.center.ppf(u[mid])
        if np.any(right):
            out[right] = self.right_tail.ppf(u[right])
        return out

    def mass(self, n_nodes: int = 100_000) -> float:
        """Numerical check that the density integrates to 1.

        Finite-support components are integrated with an ``n_nodes``-point
        trapezoid rule; power-law tails contribute their exact analytic
        mass.
        """
        total = 0.0
        for weight, comp in zip(self.weights, (self.left_tail, self.center, self.right_tail)):
            if weight == 0:
                continue
            if isinstance(comp, ParetoTail):
                total += weight  # proper density on its half-line
                continue
            x = np.linspace(comp.lo, comp.hi, int(n_nodes))
            y = comp.pdf(x)
            y[~np.isfinite(y)] = 0.0  # endpoint spikes for shapes < 1
            total += weight * float(np.trapezoid(y, x))
        return total

    def affine(self, scale: float, shift: float) -> "TailMixture":
        """Mixture of ``scale * X + shift`` for positive ``scale``."""
        if not (scale > 0):
            raise RejectedInputError("affine scale must be positive")
        return TailMixture(
            center=self.center.affine(scale, shift),
            left_tail=self.left_tail.affine(scale, shift),
            right_tail=self.right_tail.affine(scale, shift),
            split_lo=self.split_lo * scale + shift,
            split_hi=self.split_hi * scale + shift,
            weights=self.weights,
        )

    def as_dict(self) -> dict:
        return {
            "center": self.center.as_dict(),
            "left_tail": self.left_tail.as_dict(),
            "right_tail": self.right_tail.as_dict(),
            "split_lo": self.split_lo,
            "split_hi": self.split_hi,
            "weights": list(self.weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TailMixture":
        return cls(
            center=_component_from_dict(d["center"]),
            left_tail=_component_from_dict(d["left_tail"]),
            right_tail=_component_from_dict(d["right_tail"]),
            split_lo=float(d["split_lo"]),
            split_hi=float(d["split_hi"]),
            weights=tuple(d["weights"]),
        )


@dataclass(frozen=True)
class PerturbationSample:
    """Perturbation magnitudes observed in one (i, w) grid cell."""

    inclination_deg: float
    perihelion_argument_deg: float
    values: np.ndarray
    perihelion_distance_au: float = 5.1

    def __post_init__(self):
        values = np.asarray(self.values, float).copy()
        if values.size == 0:
            raise RejectedInputError("values must be nonempty")
        if not np.all(np.isfinite(values)):
            raise RejectedInputError("values must be finite")
        if not (0.0 <= self.inclination_deg <= 180.0):
            raise RejectedInputError("inclination must lie in [0, 180] degrees")
        if not (0.0 <= self.perihelion_argument_deg < 360.0):
            raise RejectedInputError("perihelion argument must lie in [0, 360) degrees")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def tail_index(values, k: int, side: str = "abs") -> float:
    """Hill tail-exponent estimate from the ``k`` largest deviations.

    Deviations are measured from the sample median: absolute deviations for
    ``side='abs'``, one-sided positive deviations for ``'right'`` or
    ``'left'``.  Raises for fewer than ``k + 1`` positive deviations.
    """
    values = np.asarray(values, float)
    k = int(k)
    if k < 1:
        raise RejectedInputError("k must be at least 1")
    if k >= values.size:
        raise RejectedInputError("k must be smaller than the sample size")
    med = float(np.median(values))
    if side == "abs":
        dev = np.abs(values - med)
    elif side == "right":
        dev = values - med
    elif side == "left":
        dev = med - values
    else:
        raise RejectedInputError("side must be 'abs', 'right' or 'left'")
    dev = dev[dev > 0]
    if dev.size < k + 1:
        raise RejectedInputError("insufficient positive exceedances for the requested k")
    dev.sort()
    top = dev[-k:]
    threshold = dev[-k - 1]
    slope = float(np.mean(np.log(top / threshold)))
    if slope <= 0:
        raise RejectedInputError("degenerate exceedances (zero Hill slope)")
    return 1.0 / slope


def _fit_beta_shapes(u: np.ndarray) -> tuple[float, float]:
    """Moment-matched Beta shapes refined by maximum likelihood."""
    u = np.clip(np.asarray(u, float), 1e-9, 1.0 - 1e-9)
    m = float(np.mean(u))
    v = float(np.var(u))
    if v <= 0:
        raise RejectedInputError("degenerate component (zero variance)")
    common = m * (1.0 - m) / v - 1.0
    if common > 0:
        init = (max(m * common, 1e-3), max((1.0 - m) * common, 1e-3))
    else:
        init = (0.5, 0.5)

    def nll(log_shapes):
        a, b = np.exp(log_shapes)
        if not (np.isfinite(a) and np.isfinite(b)) or a > 1e6 or b > 1e6:
            return 1e100
        return -float(np.sum(stats.beta.logpdf(u, a, b)))

    res = minimize(nll, np.log(init), method="Nelder-Mead",
                   options={"maxiter": 600, "xatol": 1e-8, "fatol": 1e-8})
    if res.success or (np.all(np.isfinite(res.x)) and res.fun < nll(np.log(init))):
        a, b = np.exp(res.x)
        return float(a), float(b)
    return init


def _fit_pareto_tail(exceedances: np.ndarray) -> tuple[float, float]:
    """Maximum-likelihood (index, scale) of a translation-attached Pareto.

    The density is ``a x_m^a / (x_m + y)^(a+1)`` on ``y >= 0``; both
    parameters are free, optimized in log space.
    """
    y = np.asarray(exceedances, float)
    y = y[y > 0]
    if y.size < 3:
        raise RejectedInputError("too few tail exceedances to fit a Pareto")
    xm0 = float(np.median(y))
    a0 = y.size / float(np.sum(np.log1p(y / xm0)))

    def nll(params):
        log_a, log_xm = params
        if abs(log_a) > 25 or abs(log_xm) > 25:
            return 1e100
        a, xm = math.exp(log_a), math.exp(log_xm)
        return -(y.size * (math.log(a) + a * math.log(xm)) - (a + 1.0) * float(np.sum(np.log(xm + y))))

    res = minimize(nll, [math.log(a0), math.log(xm0)], method="Nelder-Mead",
                   options={"maxiter": 800, "xatol": 1e-9, "fatol": 1e-9})
    if np.all(np.isfinite(res.x)) and res.fun <= nll([math.log(a0), math.log(xm0)]):
        a, xm = np.exp(res.x)
        return float(a), float(xm)
    return a0, xm0


@dataclass(frozen=True)
class FitConfig:
    """Options of :func:`fit_mixture` (split quantiles, regime selection)."""

    q_lo: float = 0.05
    q_hi: float = 0.95
    regime: str = "auto"
    hill_count: int | None = None

    def __post_init__(self):
        if not (0.0 < self.q_lo < self.q_hi < 1.0):
            raise RejectedInputError("need 0 < q_lo < q_hi < 1")
        if self.regime not in ("auto", "heavy", "light"):
            raise RejectedInputError("regime must be 'auto', 'heavy' or 'light'")


def fit_mixture(
    values,
    q_lo: float = 0.05,
    q_hi: float = 0.95,
    regime: str = "auto",
    hill_count: int | None = None,
) -> TailMixture:
    """Fit the three-component mixture to a sample.

    Splits at the empirical ``q_lo``/``q_hi`` quantiles; the central piece
    is a scaled Beta (moment matching then likelihood refinement), the
    tails are Pareto when the regime is heavy (``auto`` decides by whether
    the Hill tail exponent is below 2) and scaled Beta otherwise.  Weights
    are the empirical masses of the three pieces.
    """
    cfg = FitConfig(q_lo=q_lo, q_hi=q_hi, regime=regime, hill_count=hill_count)
    values = np.asarray(values, float)
    if values.size < 100:
        raise RejectedInputError("need at least 100 values to fit the mixture")
    if not np.all(np.isfinite(values)):
        raise RejectedInputError("values must be finite")
    split_lo, split_hi = (float(q) for q in np.quantile(values, [cfg.q_lo, cfg.q_hi]))
    if not (split_lo < split_hi):
        raise RejectedInputError("degenerate center (coincident split quantiles)")

    center_vals = values[(values >= split_lo) & (values <= split_hi)]
    if np.var(center_vals) <= 0:
        raise RejectedInputError("degenerate center (zero variance)")
    alpha, beta = _fit_beta_shapes((center_vals - split_lo) / (split_hi - split_lo))
    center = ScaledBeta(alpha, beta, split_lo, split_hi)

    decided = cfg.regime
    if decided == "auto":
        k = cfg.hill_count if cfg.hill_count is not None else max(10, values.size // 20)
        decided = "heavy" if tail_index(values, k, side="abs") < HEAVY_TAIL_EXPONENT else "light"

    left_exc = split_lo - values[values < split_lo]
    right_exc = values[values > split_hi] - split_hi
    if decided == "heavy":
        a_l, xm_l = _fit_pareto_tail(left_exc)
        a_r, xm_r = _fit_pareto_tail(right_exc)
        left: TailComponent = ParetoTail(a_l, xm_l, split_lo, "left")
        right: TailComponent = ParetoTail(a_r, xm_r, split_hi, "right")
    else:
        vmin, vmax = float(np.min(values)), float(np.max(values))
        if not (vmin < split_lo and vmax > split_hi):
            raise RejectedInputError("degenerate tail (no mass beyond a split)")
        shapes_l = _fit_beta_shapes(1.0 - left_exc / (split_lo - vmin))
        left = ScaledBeta(shapes_l[0], shapes_l[1], vmin, split_lo)
        shapes_r = _fit_beta_shapes(right_exc / (vmax - split_hi))
        right = ScaledBeta(shapes_r[0], shapes_r[1], split_hi, vmax)

    n = values.size
    w_l = float(np.count_nonzero(values < split_lo)) / n
    w_r = float(np.count_nonzero(values > split_hi)) / n
    w_c = 1.0 - w_l - w_r
    return TailMixture(center, left, right, split_lo, split_hi, (w_l, w_c, w_r))


def simulate(mixture: TailMixture, n: int, rng) -> np.ndarray:
    """Draw ``n`` values from the mixture by inverse-transform sampling."""
    return mixture.rvs(n, rng)


@dataclass(frozen=True)
class TestConfig:
    """Options of :func:`percentile_coverage_test`."""

    n_rep: int = 100
    percentiles: tuple = tuple(range(1, 100))
    ci_level: float = 0.95

    def __post_init__(self):
        if self.n_rep < 2:
            raise RejectedInputError("need at least 2 replicates")
        if len(self.percentiles) == 0:
            raise RejectedInputError("percentile set must be nonempty")
        if not (0.0 < self.ci_level < 1.0):
            raise RejectedInputError("ci_level must lie in (0, 1)")


def percentile_coverage_test(
    values,
    mixture: TailMixture,
    n_rep: int = 100,
    percentiles: Sequence[float] | None = None,
    ci_level: float = 0.95,
    rng=0,
) -> float:
    """Fraction of observed percentiles inside their replicate bands.

    The sample's percentiles are computed once; ``n_rep`` same-size samples
    are then simulated from the mixture and the per-percentile band is the
    central ``ci_level`` empirical interval over replicates.  Returns the
    fraction of observed percentiles falling inside their band.
    """
    cfg = TestConfig(
        n_rep=int(n_rep),
        percentiles=tuple(percentiles) if percentiles is not None else tuple(range(1, 100)),
        ci_level=float(ci_level),
    )
    values = np.asarray(values, float)
    if values.size == 0:
        raise RejectedInputError("values must be nonempty")
    rng = _as_generator(rng)
    pct = np.asarray(cfg.percentiles, float)
    data_p = np.percentile(values, pct)
    rep_p = np.empty((cfg.n_rep, pct.size))
    for r in range(cfg.n_rep):
        rep_p[r] = np.percentile(mixture.rvs(values.size, rng), pct)
    tail = 0.5 * (1.0 - cfg.ci_level)
    lo_band = np.quantile(rep_p, tail, axis=0)
    hi_band = np.quantile(rep_p, 1.0 - tail, axis=0)
    return float(np.mean((data_p >= lo_band) & (data_p <= hi_band)))


@dataclass(frozen=True)
class CoverageCell:
    inclination_deg: float
    perihelion_argument_deg: float
    coverage: float
    regime: str

    def __post_init__(self):
        if not (0.0 <= self.coverage <= 1.0):
            raise RejectedInputError("coverage fraction must lie in [0, 1]")
        if self.regime not in ("heavy", "light"):
            raise RejectedInputError("regime must be 'heavy' or 'light'")


@dataclass(frozen=True)
class CellFailure:
    inclination_deg: float
    perihelion_argument_deg: float
    reason: str


@dataclass(frozen=True)
class CoverageMap:
    """Coverage fractions over the (inclination, perihelion-argument) grid.

    Cells that failed to fit or test are listed in ``failures`` instead of
    aborting the whole map.
    """

    cells: tuple
    failures: tuple = ()

    def split(self) -> tuple["CoverageMap", "CoverageMap"]:
        """(heavy-regime map, light-regime map)."""
        heavy = tuple(c for c in self.cells if c.regime == "heavy")
        light = tuple(c for c in self.cells if c.regime == "light")
        return CoverageMap(heavy, self.failures), CoverageMap(light, self.failures)

    def as_rows(self) -> list[list]:
        return [
            [c.inclination_deg, c.perihelion_argument_deg, c.coverage, c.regime]
            for c in self.cells
        ]

    def __len__(self):
        return len(self.cells)


def build_coverage_map(
    samples: Sequence[PerturbationSample],
    fit_config: FitConfig | None = None,
    test_config: TestConfig | None = None,
    seed: int = 0,
    mixtures_out: dict | None = None,
) -> CoverageMap:
    """Fit and validate every grid cell.

    Each cell gets a seed derived from its coordinates, so the map is
    reproducible regardless of evaluation order.  Pass ``mixtures_out`` to
    also collect the fitted mixture per cell key ``(i, w)``.
    """
    if len(samples) == 0:
        raise RejectedInputError("sample list must be nonempty")
    fit_cfg = fit_config if fit_config is not None else FitConfig()
    test_cfg = test_config if test_config is not None else TestConfig()
    cells = []
    failures = []
    ordered = sorted(samples, key=lambda s: (s.inclination_deg, s.perihelion_argument_deg))
    for sample in ordered:
        key = (round(sample.inclination_deg, 9), round(sample.perihelion_argument_deg, 9))
        try:
            mixture = fit_mixture(
                sample.values,
                q_lo=fit_cfg.q_lo,
                q_hi=fit_cfg.q_hi,
                regime=fit_cfg.regime,
                hill_count=fit_cfg.hill_count,
            )
            coverage = percentile_coverage_test(
                sample.values,
                mixture,
                n_rep=test_cfg.n_rep,
                percentiles=test_cfg.percentiles,
                ci_level=test_cfg.ci_level,
                rng=stream(seed, "coverage-cell", key[0], key[1]),
            )
        except PatternMCError as exc:
            failures.append(CellFailure(sample.inclination_deg,
                                        sample.perihelion_argument_deg, str(exc)))
            continue
        if mixtures_out is not None:
            mixtures_out[key] = mixture
        cells.append(
            CoverageCell(sample.inclination_deg, sample.perihelion_argument_deg,
                         coverage, mixture.regime)
        )
    return CoverageMap(tuple(cells), tuple(failures))

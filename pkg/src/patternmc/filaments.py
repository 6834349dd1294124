"""Segment-pattern detection in 3-D point catalogs.

A candidate pattern is a finite set of straight segments (center,
orientation, half-length) living in an axis-aligned box window.  Segments
are undirected; two segments count as connected when an endpoint of one
lies within ``connection_radius`` of an endpoint of the other and their
axes agree within ``alignment_tol``.  The interaction energy rewards
connection and forbids overlapping centers or misaligned contacts; the data
energy rewards segments whose influence cylinder is denser in catalog
points than the surrounding shell.  Detection minimizes the total energy by
simulated annealing with birth/death/change moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .energy import AnnealingSchedule, EnergyModel
from .errors import RejectedInputError
from .samplers import (
    ChainRecord,
    MoveMix,
    ProposalSpace,
    _reflect,
    anneal,
)

__all__ = [
    "Box",
    "Segment",
    "MarkedConfiguration",
    "GalaxyCatalog",
    "FilamentStats",
    "BisousConfig",
    "DetectionResult",
    "connectivity",
    "interaction_energy",
    "data_energy",
    "sufficient_statistics",
    "segment_space",
    "detect",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned 3-D box."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, float).copy()
        hi = np.asarray(self.hi, float).copy()
        if lo.shape != (3,) or hi.shape != (3,):
            raise RejectedInputError("box corners must be 3-vectors")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise RejectedInputError("box corners must be finite")
        if np.any(hi <= lo):
            raise RejectedInputError("box must have positive extent on every axis")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, float))
        return np.all((points >= self.lo) & (points <= self.hi), axis=1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.uniform(size=3)

    @classmethod
    def bounding(cls, points: np.ndarray, pad_fraction: float = 0.01) -> "Box":
        """Bounding box of ``points`` padded by a fraction of each extent."""
        points = np.atleast_2d(np.asarray(points, float))
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        span = np.maximum(hi - lo, 1e-9)
        return cls(lo - pad_fraction * span, hi + pad_fraction * span)

    def as_dict(self) -> dict:
        return {"lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(np.asarray(d["lo"], float), np.asarray(d["hi"], float))


def _direction(theta: float, phi: float) -> np.ndarray:
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def _angles_from_direction(u: np.ndarray) -> tuple[float, float]:
    u = np.asarray(u, float)
    u = u / np.linalg.norm(u)
    theta = math.acos(min(1.0, max(-1.0, u[2])))
    phi = math.atan2(u[1], u[0]) % (2.0 * math.pi)
    return theta, phi


@dataclass(frozen=True)
class Segment:
    """Straight segment mark: center, spherical orientation angles, sizes.

    ``theta`` is the polar angle from +z in [0, pi], ``phi`` the azimuth in
    [0, 2*pi); the derived axis is a unit vector and ``+u`` and ``-u``
    describe the same (undirected) segment.
    """

    center: np.ndarray
    theta: float
    phi: float
    half_length: float
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, float).copy()
        if center.shape != (3,) or not np.all(np.isfinite(center)):
            raise RejectedInputError("segment center must be a finite 3-vector")
        if not (self.half_length > 0):
            raise RejectedInputError("half_length must be positive")
        if not (self.radius > 0):
            raise RejectedInputError("radius must be positive")
        center.flags.writeable = False
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "phi", float(self.phi))

    @cached_property
    def direction(self) -> np.ndarray:
        return _direction(self.theta, self.phi)

    @cached_property
    def endpoints(self) -> np.ndarray:
        u = self.direction
        return np.stack([self.center - self.half_length * u, self.center + self.half_length * u])

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.center, [self.theta, self.phi, self.half_length]])


class MarkedConfiguration:
    """Unordered finite set of segments inside a window."""

    __slots__ = ("segments", "window")

    def __init__(self, segments: Sequence[Segment], window: Box):
        segments = tuple(segments)
        if segments:
            centers = np.stack([s.center for s in segments])
            if not np.all(window.contains(centers)):
                raise RejectedInputError("all segment centers must lie inside the window")
        self.segments = segments
        self.window = window

    def __len__(self):
        return len(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    def __iter__(self):
        return iter(self.segments)

    def add(self, segment: Segment) -> "MarkedConfiguration":
        return MarkedConfiguration(self.segments + (segment,), self.window)

    def remove(self, i: int) -> "MarkedConfiguration":
        return MarkedConfiguration(self.segments[:i] + self.segments[i + 1 :], self.window)

    def replace(self, i: int, segment: Segment) -> "MarkedConfiguration":
        return MarkedConfiguration(
            self.segments[:i] + (segment,) + self.segments[i + 1 :], self.window
        )

    def flatten(self) -> np.ndarray:
        if not self.segments:
            return np.empty(0)
        return np.concatenate([s.flatten() for s in self.segments])


@dataclass(frozen=True)
class GalaxyCatalog:
    """Point catalog with its observation window."""

    positions: np.ndarray
    window: Box

    def __post_init__(self):
        positions = np.atleast_2d(np.asarray(self.positions, float)).copy()
        if positions.size == 0:
            positions = positions.reshape(0, 3)
        if positions.shape[1] != 3 or not np.all(np.isfinite(positions)):
            raise RejectedInputError("catalog positions must be finite 3-vectors")
        if len(positions) and not np.all(self.window.contains(positions)):
            raise RejectedInputError("all catalog positions must lie inside the window")
        positions.flags.writeable = False
        object.__setattr__(self, "positions", positions)

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class FilamentStats:
    """Connectivity counts: total, 1-connected and 2-connected segments."""

    n_total: int
    n_one_connected: int
    n_two_connected: int

    def __post_init__(self):
        for v in (self.n_total, self.n_one_connected, self.n_two_connected):
            if v < 0 or int(v) != v:
                raise RejectedInputError("counts must be nonnegative integers")
        if self.n_one_connected + self.n_two_connected > self.n_total:
            raise RejectedInputError("connected counts exceed the total")
        object.__setattr__(self, "n_total", int(self.n_total))
        object.__setattr__(self, "n_one_connected", int(self.n_one_connected))
        object.__setattr__(self, "n_two_connected", int(self.n_two_connected))

    def as_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_one_connected": self.n_one_connected,
            "n_two_connected": self.n_two_connected,
        }


@dataclass(frozen=True)
class BisousConfig:
    """All tunables of the segment model in one place.

    ``connection_radius`` (endpoint proximity), ``alignment_tol`` (maximum
    axis angle of a contact, radians) and ``hard_core`` (minimum center
    separation) default to half the reference half-length and 30 degrees.
    ``reward_0 < reward_1 < reward_2`` are the per-segment energy rewards
    for 0/1/2 connected extremities (the segment contributes minus its
    reward).  ``min_count`` and ``contrast`` define the data test: a
    segment is penalized by ``penalty`` unless its cylinder holds at least
    ``min_count`` points and at least ``contrast`` times the count of the
    surrounding double-radius shell.  ``intensity`` is the reference
    Poisson rate of the birth/death moves.
    """

    window: Box
    half_length_min: float
    half_length_max: float
    radius: float
    reward_0: float = -2.0
    reward_1: float = 1.0
    reward_2: float = 3.0
    min_count: float = 5.0
    contrast: float = 1.0
    penalty: float = 8.0
    connection_radius: float | None = None
    alignment_tol: float = math.pi / 6.0
    hard_core: float | None = None
    intensity: float = 1.0
    change_center_scale: float | None = None
    change_angle_scale: float = 0.25
    change_length_scale: float | None = None

    def __post_init__(self):
        if not (0 < self.half_length_min <= self.half_length_max):
            raise RejectedInputError("need 0 < half_length_min <= half_length_max")
        if not (self.radius > 0):
            raise RejectedInputError("radius must be positive")
        if not (self.reward_0 < self.reward_1 < self.reward_2):
            raise RejectedInputError("rewards must increase with connectivity")
        if not (self.contrast > 0):
            raise RejectedInputError("contrast must be positive")
        if self.penalty < 0:
            raise RejectedInputError("penalty must be nonnegative")
        if not (0 < self.alignment_tol <= math.pi / 2):
            raise RejectedInputError("alignment_tol must lie in (0, pi/2]")
        if self.intensity <= 0:
            raise RejectedInputError("intensity must be positive")
        ref = 0.5 * (self.half_length_min + self.half_length_max)
        if self.connection_radius is None:
            object.__setattr__(self, "connection_radius", 0.5 * ref)
        if self.hard_core is None:
            object.__setattr__(self, "hard_core", 0.5 * ref)
        if self.change_center_scale is None:
            object.__setattr__(self, "change_center_scale", 0.25 * ref)
        if self.change_length_scale is None:
            span = self.half_length_max - self.half_length_min
            object.__setattr__(self, "change_length_scale", max(0.1 * span, 1e-3 * ref))
        if not (self.connection_radius > 0):
            raise RejectedInputError("connection_radius must be positive")
        if not (self.hard_core >= 0):
            raise RejectedInputError("hard_core must be nonnegative")

    def as_dict(self) -> dict:
        d = {
            "window": self.window.as_dict(),
            "half_length_min": self.half_length_min,
            "half_length_max": self.half_length_max,
            "radius": self.radius,
            "reward_0": self.reward_0,
            "reward_1": self.reward_1,
            "reward_2": self.reward_2,
            "min_count": self.min_count,
            "contrast": self.contrast,
            "penalty": self.penalty,
            "connection_radius": self.connection_radius,
            "alignment_tol": self.alignment_tol,
            "hard_core": self.hard_core,
            "intensity": self.intensity,
            "change_center_scale": self.change_center_scale,
            "change_angle_scale": self.change_angle_scale,
            "change_length_scale": self.change_length_scale,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BisousConfig":
        d = dict(d)
        d["window"] = Box.from_dict(d["window"])
        return cls(**d)


def _segment_arrays(segments: Sequence[Segment]):
    centers = np.stack([s.center for s in segments])
    dirs = np.stack([s.direction for s in segments])
    half = np.array([s.half_length for s in segments])
    return centers, dirs, half


def _contact_matrices(segments, eps: float, tau: float):
    """Endpoint contacts and axis alignment for every segment pair.

    Returns (contact, aligned): ``contact[i, a, j, b]`` flags endpoint ``a``
    of segment ``i`` within ``eps`` of endpoint ``b`` of ``j != i``;
    ``aligned[i, j]`` flags an axis angle below ``tau`` with the undirected
    identification of +/- axes.
    """
    n = len(segments)
    ends = np.stack([s.endpoints for s in segments])  # (n, 2, 3)
    diff = ends[:, :, None, None, :] - ends[None, None, :, :, :]
    dist2 = np.sum(diff**2, axis=-1)  # (n, 2, n, 2)
    contact = dist2 <= eps * eps
    idx = np.arange(n)
    contact[idx, :, idx, :] = False
    _, dirs, _ = _segment_arrays(segments)
    cosang = np.abs(dirs @ dirs.T)
    aligned = cosang > math.cos(tau)
    return contact, aligned


def connectivity(config: MarkedConfiguration, eps: float, tau: float) -> np.ndarray:
    """Connected-extremity count (0, 1 or 2) per segment.

    Two segments are connected when an endpoint of one lies within ``eps``
    of an endpoint of the other and their axes differ by less than ``tau``
    (with +/- axis identification); a segment's count is the number of its
    own endpoints having at least one such contact.
    """
    if not (eps > 0):
        raise RejectedInputError("eps must be positive")
    n = len(config)
    if n == 0:
        return np.zeros(0, dtype=int)
    contact, aligned = _contact_matrices(config.segments, eps, tau)
    linked = contact & aligned[:, None, :, None]
    endpoint_connected = linked.any(axis=(2, 3))  # (n, 2)
    return endpoint_connected.sum(axis=1).astype(int)


def sufficient_statistics(config: MarkedConfiguration, eps: float, tau: float) -> FilamentStats:
    """Aggregate connectivity counts of a configuration."""
    counts = connectivity(config, eps, tau) if len(config) else np.zeros(0, int)
    return FilamentStats(
        n_total=len(config),
        n_one_connected=int(np.sum(counts == 1)),
        n_two_connected=int(np.sum(counts == 2)),
    )


def interaction_energy(config: MarkedConfiguration, params: BisousConfig) -> float:
    """Connection-reward energy with hard-core and alignment constraints.

    Each segment contributes minus the reward of its connected-extremity
    count.  The energy is ``+inf`` when two centers come closer than
    ``hard_core`` or when any endpoint contact pairs misaligned axes.
    """
    n = len(config)
    if n == 0:
        return 0.0
    centers, _, _ = _segment_arrays(config.segments)
    if n > 1:
        d2 = np.sum((centers[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        if np.any(d2 < params.hard_core**2):
            return math.inf
    contact, aligned = _contact_matrices(
        config.segments, params.connection_radius, params.alignment_tol
    )
    if np.any(contact.any(axis=(1, 3)) & ~aligned):
        return math.inf
    linked = contact & aligned[:, None, :, None]
    counts = linked.any(axis=(2, 3)).sum(axis=1)
    rewards = np.array([params.reward_0, params.reward_1, params.reward_2])
    return float(-np.sum(rewards[counts]))


def data_energy(config: MarkedConfiguration, catalog: GalaxyCatalog, params: BisousConfig) -> float:
    """Catalog-attachment energy.

    Per segment: count points inside the influence cylinder (``n_in``) and
    inside the concentric double-radius cylinder (``n_big``); the segment
    contributes ``-log(1 + n_in)``, plus ``penalty`` when it fails the
    density test ``n_in >= min_count`` and ``n_in >= contrast * (n_big -
    n_in)``.  Cylinders are implicitly clipped to the window because the
    catalog lives inside it.
    """
    n = len(config)
    if n == 0:
        return 0.0
    pts = catalog.positions
    total = 0.0
    r2 = params.radius**2
    r2_big = (2.0 * params.radius) ** 2
    for seg in config.segments:
        if len(pts) == 0:
            n_in = 0
            n_big = 0
        else:
            d = pts - seg.center
            axial = d @ seg.direction
            inside_axial = np.abs(axial) <= seg.half_length
            trans2 = np.einsum("ij,ij->i", d, d) - axial**2
            n_in = int(np.count_nonzero(inside_axial & (trans2 <= r2)))
            n_big = int(np.count_nonzero(inside_axial & (trans2 <= r2_big)))
        e = -math.log1p(n_in)
        if n_in < params.min_count or n_in < params.contrast * (n_big - n_in):
            e += params.penalty
        total += e
    return total


def segment_space(params: BisousConfig) -> ProposalSpace:
    """Birth and change proposals for segments under ``params``.

    Births are uniform: center uniform in the window, axis uniform on the
    sphere, half-length uniform in its range (radius is fixed per run).
    Changes jointly perturb center (Gaussian, reflected at the window),
    axis (isotropic Gaussian nudge, renormalized) and half-length
    (Gaussian, reflected); each piece is a symmetric proposal.
    """
    window = params.window
    hl_lo = np.array([params.half_length_min])
    hl_hi = np.array([params.half_length_max])

    def sample(rng: np.random.Generator) -> Segment:
        center = window.sample(rng)
        u = rng.standard_normal(3)
        norm = np.linalg.norm(u)
        while norm < 1e-12:
            u = rng.standard_normal(3)
            norm = np.linalg.norm(u)
        theta, phi = _angles_from_direction(u / norm)
        half_length = rng.uniform(params.half_length_min, params.half_length_max)
        return Segment(center, theta, phi, half_length, params.radius)

    def perturb(seg: Segment, rng: np.random.Generator) -> Segment:
        center = _reflect(
            seg.center + params.change_center_scale * rng.standard_normal(3),
            window.lo,
            window.hi,
        )
        u = seg.direction + params.change_angle_scale * rng.standard_normal(3)
        norm = np.linalg.norm(u)
        if norm < 1e-12:
            u, norm = seg.direction, 1.0
        theta, phi = _angles_from_direction(u / norm)
        if params.half_length_max > params.half_length_min:
            half_length = float(
                _reflect(
                    np.array([seg.half_length + params.change_length_scale * rng.standard_normal()]),
                    hl_lo,
                    hl_hi,
                )[0]
            )
        else:
            half_length = seg.half_length
        return Segment(center, theta, phi, half_length, params.radius)

    return ProposalSpace(volume=window.volume, sample=sample, perturb=perturb)


def build_energy_model() -> EnergyModel:
    """Energy model wiring the two public energies for the samplers."""
    return EnergyModel(
        interaction=lambda config, params: interaction_energy(config, params),
        data=lambda config, params, catalog: data_energy(config, catalog, params),
    )


class DetectionResult(NamedTuple):
    configuration: MarkedConfiguration
    stats: FilamentStats
    record: ChainRecord


def detect(
    catalog: GalaxyCatalog,
    params: BisousConfig,
    schedule: AnnealingSchedule | None = None,
    mix: MoveMix | None = None,
    seed: int = 0,
    record_every: int = 50,
) -> DetectionResult:
    """Detect the minimum-energy segment pattern in a catalog.

    Simulated annealing from the empty configuration with
    birth/death/change moves; returns the best configuration ever visited,
    its connectivity statistics and the chain record.  Fully reproducible
    for a fixed seed.
    """
    if schedule is None:
        schedule = AnnealingSchedule(
            initial_temperature=3.0,
            cooling_factor=0.92,
            steps_per_level=2000,
            final_temperature=0.05,
        )
    model = build_energy_model()
    initial = MarkedConfiguration((), params.window)
    best, _, record = anneal(
        initial,
        model,
        params,
        catalog,
        schedule,
        mix=mix,
        rng=seed,
        space=segment_space(params),
        intensity=params.intensity,
        record_every=record_every,
    )
    stats = sufficient_statistics(best, params.connection_radius, params.alignment_tol)
    return DetectionResult(best, stats, record)

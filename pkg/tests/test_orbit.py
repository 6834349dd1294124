import math

import numpy as np
import pytest

from patternmc.errors import AllRejectedError, RejectedInputError
from patternmc.orbit import (
    ORBIT_PARAM_NAMES,
    KeplerOrbit,
    Observation,
    OrbitSummary,
    PriorBox,
    fit_orbit,
    log_likelihood,
    propagate,
    solve_kepler,
    summarize,
)

TWO_PI = 2.0 * math.pi


def bisect_kepler(mean_anomaly, eccentricity, iterations=200):
    """Independent bisection oracle for E - e sin E = M."""
    m = mean_anomaly % TWO_PI
    lo, hi = m - eccentricity - 1e-12, m + eccentricity + 1e-12
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if mid - eccentricity * math.sin(mid) - m < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def oracle_propagate(orbit: KeplerOrbit, epoch: float):
    """Independent propagation path via the true anomaly and the direct
    textbook in-sky expressions (no rotation matrices)."""
    e = orbit.eccentricity
    m = TWO_PI * (epoch - orbit.time_periapsis_rjd) / orbit.period_days
    big_e = bisect_kepler(m, e)
    nu = 2.0 * math.atan2(
        math.sqrt(1 + e) * math.sin(big_e / 2), math.sqrt(1 - e) * math.cos(big_e / 2)
    )
    r = orbit.semi_major_axis_km * (1 - e * math.cos(big_e))
    node = math.radians(orbit.ascending_node_deg)
    incl = math.radians(orbit.inclination_deg)
    u = math.radians(orbit.arg_periapsis_deg) + nu
    x = r * (math.cos(node) * math.cos(u) - math.sin(node) * math.sin(u) * math.cos(incl))
    y = r * (math.sin(node) * math.cos(u) + math.cos(node) * math.sin(u) * math.cos(incl))
    return x, y


MEAN_ORBIT = KeplerOrbit(
    period_days=56.5330,
    semi_major_axis_km=4936.0,
    eccentricity=0.4958,
    inclination_deg=46.883,
    ascending_node_deg=75.125,
    arg_periapsis_deg=43.152,
    time_periapsis_rjd=54314.26,
)


class TestSolveKepler:
    def test_circular_orbit_identity(self):
        assert solve_kepler(1.3, 0.0) == pytest.approx(1.3, abs=1e-15)

    def test_periapsis(self):
        assert solve_kepler(0.0, 0.7) == 0.0

    def test_against_bisection_oracle(self):
        # frozen from the oracle at (M=1.0, e=0.4958), run to 1e-14
        expected = 1.4943520451057979
        assert bisect_kepler(1.0, 0.4958) == pytest.approx(expected, abs=1e-13)
        assert solve_kepler(1.0, 0.4958) == pytest.approx(expected, abs=1e-12)

    def test_residual_on_grid(self):
        m = np.linspace(0.0, TWO_PI, 200)
        e = np.linspace(0.0, 0.99, 40)
        big_e = solve_kepler(m[:, None], e[None, :])
        residual = big_e - e[None, :] * np.sin(big_e) - np.mod(m[:, None], TWO_PI)
        assert np.max(np.abs(residual)) < 1e-12

    def test_eccentricity_validation(self):
        with pytest.raises(RejectedInputError):
            solve_kepler(1.0, 1.0)
        with pytest.raises(RejectedInputError):
            solve_kepler(1.0, -0.1)


class TestPropagate:
    def test_periapsis_geometry(self):
        orbit = KeplerOrbit(10.0, 1000.0, 0.5, 0.0, 0.0, 0.0, 0.0)
        dx, dy = propagate(orbit, 0.0)
        assert dx == pytest.approx(500.0, abs=1e-9)
        assert dy == pytest.approx(0.0, abs=1e-9)

    def test_apoapsis_geometry(self):
        orbit = KeplerOrbit(10.0, 1000.0, 0.5, 0.0, 0.0, 0.0, 0.0)
        dx, dy = propagate(orbit, 5.0)
        assert dx == pytest.approx(-1500.0, abs=1e-9)
        assert dy == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("dt", [0.0, 10.0, 23.7, 56.5330, 100.0])
    def test_against_independent_rotation_oracle(self, dt):
        epoch = MEAN_ORBIT.time_periapsis_rjd + dt
        ox, oy = oracle_propagate(MEAN_ORBIT, epoch)
        dx, dy = propagate(MEAN_ORBIT, epoch)
        assert dx == pytest.approx(ox, abs=1e-8)
        assert dy == pytest.approx(oy, abs=1e-8)

    def test_periodicity(self):
        # small epoch basis keeps t + P exact enough for the 1e-9 km check
        orbit = KeplerOrbit(56.5330, 4936.0, 0.4958, 46.883, 75.125, 43.152, 0.0)
        epochs = np.linspace(0.0, 50.0, 11)
        dx1, dy1 = propagate(orbit, epochs)
        dx2, dy2 = propagate(orbit, epochs + orbit.period_days)
        assert np.max(np.abs(dx1 - dx2)) < 1e-9
        assert np.max(np.abs(dy1 - dy2)) < 1e-9

    def test_node_wrap_equivalence(self):
        shifted = KeplerOrbit(
            MEAN_ORBIT.period_days,
            MEAN_ORBIT.semi_major_axis_km,
            MEAN_ORBIT.eccentricity,
            MEAN_ORBIT.inclination_deg,
            MEAN_ORBIT.ascending_node_deg + 360.0,
            MEAN_ORBIT.arg_periapsis_deg,
            MEAN_ORBIT.time_periapsis_rjd,
        )
        epochs = 54300.0 + np.linspace(0.0, 120.0, 7)
        assert np.allclose(propagate(MEAN_ORBIT, epochs), propagate(shifted, epochs))

    def test_orbit_validation(self):
        with pytest.raises(RejectedInputError):
            KeplerOrbit(-1.0, 1000.0, 0.1, 0.0, 0.0, 0.0, 0.0)
        with pytest.raises(RejectedInputError):
            KeplerOrbit(10.0, 1000.0, 1.2, 0.0, 0.0, 0.0, 0.0)
        with pytest.raises(RejectedInputError):
            KeplerOrbit(10.0, 1000.0, 0.1, 200.0, 0.0, 0.0, 0.0)


def synthetic_observations(orbit, epochs, sigma, noise_rng=None):
    dx, dy = propagate(orbit, np.asarray(epochs, float))
    out = []
    for e, x, y in zip(epochs, dx, dy):
        if noise_rng is not None:
            x += sigma * noise_rng.standard_normal()
            y += sigma * noise_rng.standard_normal()
        out.append(Observation(e, x, y, sigma))
    return out


class TestLogLikelihood:
    def test_noise_free_maximum(self):
        epochs = 54320.0 + np.arange(12) * 3.0
        obs = synthetic_observations(MEAN_ORBIT, epochs, 1.0)
        expected = -len(obs) * math.log(TWO_PI)
        assert log_likelihood(MEAN_ORBIT, obs) == pytest.approx(expected, abs=1e-9)

    def test_single_offset_observation(self):
        epoch = MEAN_ORBIT.time_periapsis_rjd + 4.0
        dx, dy = propagate(MEAN_ORBIT, epoch)
        sigma = 2.5
        obs = [Observation(epoch, dx + sigma, dy, sigma)]
        base = -math.log(TWO_PI * sigma**2)
        assert log_likelihood(MEAN_ORBIT, obs) == pytest.approx(base - 0.5, abs=1e-12)

    def test_hand_summed_residuals(self):
        epochs = 54320.0 + np.arange(5) * 7.0
        dx, dy = propagate(MEAN_ORBIT, np.asarray(epochs))
        offsets_x = [1.0, -2.0, 0.5, 0.0, 3.0]
        offsets_y = [0.0, 1.0, -1.5, 2.0, -0.5]
        sigma = 2.0
        obs = [
            Observation(e, x + ox, y + oy, sigma)
            for e, x, y, ox, oy in zip(epochs, dx, dy, offsets_x, offsets_y)
        ]
        expected = -0.5 * sum(
            (ox**2 + oy**2) / sigma**2 for ox, oy in zip(offsets_x, offsets_y)
        ) - 5 * math.log(TWO_PI * sigma**2)
        assert log_likelihood(MEAN_ORBIT, obs) == pytest.approx(expected, rel=1e-9)

    def test_noise_free_data_maximized_at_truth(self):
        epochs = 54316.0 + np.arange(15) * 5.0
        obs = synthetic_observations(MEAN_ORBIT, epochs, 1.0)
        best = log_likelihood(MEAN_ORBIT, obs)
        truth = MEAN_ORBIT.to_array()
        steps = {0: 0.01, 1: 5.0, 2: 0.005, 3: 0.5, 4: 0.5, 5: 0.5, 6: 0.05}
        for j, step in steps.items():
            for delta in (-2, -1, 1, 2):
                values = truth.copy()
                values[j] += delta * step
                assert log_likelihood(KeplerOrbit.from_array(values), obs) < best

    def test_observation_validation(self):
        with pytest.raises(RejectedInputError):
            Observation(54320.0, 0.0, 0.0, 0.0)
        with pytest.raises(RejectedInputError):
            log_likelihood(MEAN_ORBIT, [])


class TestSummarize:
    def test_single_sample(self):
        s = summarize(np.array([[2.5]]), names=("p",))
        assert s["p"] == {"min": 2.5, "median": 2.5, "mean": 2.5, "max": 2.5}

    def test_textbook_order_statistics(self):
        s = summarize(np.array([[1.0], [2.0], [3.0], [4.0]]), names=("p",))
        assert s["p"] == {"min": 1.0, "median": 2.5, "mean": 2.5, "max": 4.0}

    def test_against_sort_oracle(self):
        rng = np.random.default_rng(17)
        samples = rng.normal(size=(1000, 3))
        s = summarize(samples, names=("a", "b", "c"))
        for j, name in enumerate(("a", "b", "c")):
            col = np.sort(samples[:, j])
            assert s[name]["min"] == col[0]
            assert s[name]["max"] == col[-1]
            assert s[name]["median"] == pytest.approx(0.5 * (col[499] + col[500]))
            assert s[name]["mean"] == pytest.approx(col.mean())

    def test_summary_ordering_validated(self):
        with pytest.raises(RejectedInputError):
            OrbitSummary({"p": {"min": 2.0, "median": 1.0, "mean": 1.5, "max": 3.0}})

    def test_rows_follow_element_order(self):
        samples = np.tile(MEAN_ORBIT.to_array(), (3, 1))
        rows = summarize(samples).to_rows()
        assert [r[0] for r in rows] == list(ORBIT_PARAM_NAMES)


def tight_prior(center: KeplerOrbit, width_fractions=None) -> PriorBox:
    widths = {
        "period_days": 0.5,
        "semi_major_axis_km": 400.0,
        "eccentricity": 0.15,
        "inclination_deg": 10.0,
        "ascending_node_deg": 10.0,
        "arg_periapsis_deg": 10.0,
        "time_periapsis_rjd": 15.0,
    }
    box = {}
    for name in ORBIT_PARAM_NAMES:
        c = getattr(center, name)
        w = widths[name]
        box[name] = (c - w, c + w)
    return PriorBox(**box)


class TestFitOrbit:
    def test_stationary_start_with_zero_scales(self):
        epochs = 54316.0 + np.arange(10) * 9.0
        obs = synthetic_observations(MEAN_ORBIT, epochs, 1.0)
        result = fit_orbit(
            obs,
            tight_prior(MEAN_ORBIT),
            n_steps=400,
            burn_in=100,
            proposal_scales=0.0,
            seed=3,
            initial=MEAN_ORBIT,
        )
        truth = MEAN_ORBIT.to_array()
        for j, name in enumerate(ORBIT_PARAM_NAMES):
            s = result.summary[name]
            assert s["min"] == s["max"] == pytest.approx(truth[j], abs=1e-12)

    def test_seed_reproducibility(self):
        rng = np.random.default_rng(8)
        epochs = 54316.0 + np.arange(12) * 8.0
        obs = synthetic_observations(MEAN_ORBIT, epochs, 5.0, noise_rng=rng)
        prior = tight_prior(MEAN_ORBIT)
        a = fit_orbit(obs, prior, n_steps=3000, burn_in=500, seed=21)
        b = fit_orbit(obs, prior, n_steps=3000, burn_in=500, seed=21)
        assert np.array_equal(a.samples, b.samples)
        assert a.summary.as_dict() == b.summary.as_dict()

    def test_prior_box_excluding_truth_concentrates_at_boundary(self):
        # 1-D slice: every parameter except the period pinned at truth
        epochs = 54316.0 + np.arange(14) * 7.0
        obs = synthetic_observations(MEAN_ORBIT, epochs, 5.0)
        eps = 1e-9
        box = {}
        for name in ORBIT_PARAM_NAMES:
            c = getattr(MEAN_ORBIT, name)
            box[name] = (c - eps, c + eps)
        lo = MEAN_ORBIT.period_days + 0.02
        box["period_days"] = (lo, lo + 0.18)
        prior = PriorBox(**box)
        start = KeplerOrbit.from_array(prior.center())
        scales = np.zeros(7)
        scales[0] = 0.004
        result = fit_orbit(
            obs, prior, n_steps=20000, burn_in=4000, proposal_scales=scales,
            seed=5, initial=start,
        )
        stats = result.summary["period_days"]
        assert stats["median"] < lo + 0.02  # piled up near the feasible edge
        assert stats["min"] >= lo

    def test_all_rejected_raises(self):
        epochs = 54316.0 + np.arange(10) * 9.0
        obs = synthetic_observations(MEAN_ORBIT, epochs, 1e-6)
        huge = np.full(7, 10.0) * np.array([0.1, 50.0, 0.01, 1.0, 1.0, 1.0, 1.0])
        with pytest.raises(AllRejectedError):
            fit_orbit(
                obs,
                tight_prior(MEAN_ORBIT),
                n_steps=300,
                burn_in=50,
                proposal_scales=huge,
                seed=1,
                initial=MEAN_ORBIT,
            )

    def test_prior_box_validation(self):
        with pytest.raises(RejectedInputError):
            PriorBox(
                period_days=(2.0, 1.0),
                semi_major_axis_km=(1.0, 2.0),
                eccentricity=(0.0, 0.5),
                inclination_deg=(0.0, 10.0),
                ascending_node_deg=(0.0, 360.0),
                arg_periapsis_deg=(0.0, 360.0),
                time_periapsis_rjd=(0.0, 1.0),
            )

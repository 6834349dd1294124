import math

import numpy as np
import pytest

from patternmc.energy import (
    AnnealingSchedule,
    EnergyModel,
    ParameterVector,
    annealing_target,
    total_energy,
)
from patternmc.errors import RejectedInputError


def toy_model(per_object: dict, data_value: float = 0.0) -> EnergyModel:
    """Energies as sums over objects with hand-set per-object terms."""
    return EnergyModel(
        interaction=lambda state, theta: sum(per_object[obj] for obj in state),
        data=lambda state, theta, d: data_value if state else 0.0,
    )


class TestTotalEnergy:
    def test_empty_configuration_is_zero(self):
        model = toy_model({})
        assert total_energy((), None, None, model) == 0.0

    def test_hard_core_is_infinite(self):
        model = EnergyModel(
            interaction=lambda state, theta: math.inf,
            data=lambda state, theta, d: 0.0,
        )
        assert total_energy(("s",), None, None, model) == math.inf

    def test_three_object_toy_sum(self):
        # hand sum: 1.0 + 2.0 + 0.5 + 0.25 = 3.75
        model = toy_model({"a": 1.0, "b": 2.0, "c": 0.5}, data_value=0.25)
        assert total_energy(("a", "b", "c"), None, None, model) == pytest.approx(3.75)

    def test_deterministic(self):
        model = toy_model({"a": 1.0, "b": 2.0, "c": 0.5}, data_value=0.25)
        first = total_energy(("a", "b", "c"), None, None, model)
        assert all(
            total_energy(("a", "b", "c"), None, None, model) == first for _ in range(5)
        )

    def test_nan_energy_rejected(self):
        model = EnergyModel(
            interaction=lambda state, theta: math.nan,
            data=lambda state, theta, d: 0.0,
        )
        with pytest.raises(RejectedInputError):
            total_energy(("s",), None, None, model)

    def test_invalid_state_rejected(self):
        def validate(state):
            if any(length <= 0 for length in state):
                raise RejectedInputError("non-positive length")

        model = EnergyModel(
            interaction=lambda state, theta: 0.0,
            data=lambda state, theta, d: 0.0,
            validate_state=validate,
        )
        with pytest.raises(RejectedInputError):
            total_energy((1.0, -2.0), None, None, model)

    def test_permutation_invariance(self):
        model = toy_model({"a": 0.3, "b": 1.7, "c": -0.4, "d": 2.2}, data_value=0.1)
        base = total_energy(("a", "b", "c", "d"), None, None, model)
        for perm in (("d", "a", "c", "b"), ("b", "a", "d", "c"), ("c", "d", "b", "a")):
            assert total_energy(perm, None, None, model) == pytest.approx(base)

    def test_energy_difference_is_log_density_ratio(self):
        # explicit two-state density p(x) ~ exp(-U(x)); check
        # U(a) - U(b) == log(p(b)/p(a)) on a hand-built toy
        model = toy_model({"a": 1.25, "b": 0.5})
        u_a = total_energy(("a",), None, None, model)
        u_b = total_energy(("b",), None, None, model)
        p = {"a": math.exp(-1.25), "b": math.exp(-0.5)}
        assert u_a - u_b == pytest.approx(math.log(p["b"] / p["a"]))


class TestAnnealingTarget:
    def setup_method(self):
        self.model = toy_model({"a": 1.0, "b": 2.0, "c": 0.5}, data_value=0.25)

    def test_identity_temperature(self):
        assert annealing_target(("a", "b", "c"), None, None, self.model, 1.0) == pytest.approx(3.75)

    def test_half_temperature_doubles(self):
        assert annealing_target(("a", "b", "c"), None, None, self.model, 0.5) == pytest.approx(7.5)

    def test_with_log_prior(self):
        # (2.0 + 1.0) / 2 computed by hand
        model = EnergyModel(
            interaction=lambda state, theta: 2.0,
            data=lambda state, theta, d: 0.0,
            prior_log_density=lambda theta: -1.0,
        )
        assert annealing_target((), None, None, model, 2.0) == pytest.approx(1.5)

    @pytest.mark.parametrize("temperature", [0.0, -1.0, math.nan])
    def test_bad_temperature_rejected(self, temperature):
        with pytest.raises(RejectedInputError):
            annealing_target((), None, None, self.model, temperature)

    def test_monotone_in_temperature_for_positive_energy(self):
        state = ("a", "b", "c")
        temps = [0.25, 0.5, 1.0, 2.0, 8.0]
        values = [annealing_target(state, None, None, self.model, t) for t in temps]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_argmin_invariant_to_temperature(self):
        model = toy_model({"a": 1.0, "b": 2.0, "c": 0.5})
        states = [("a",), ("b",), ("c",), ("a", "c")]
        for temperature in (0.3, 1.0, 5.0):
            values = [annealing_target(s, None, None, model, temperature) for s in states]
            assert int(np.argmin(values)) == 2  # ("c",) has the lowest energy


class TestParameterVector:
    def test_roundtrip(self):
        vec = ParameterVector(("x", "y"), [1.0, 2.0], [0.0, 0.0], [4.0, 4.0])
        assert vec["x"] == 1.0
        assert vec.as_dict() == {"x": 1.0, "y": 2.0}
        moved = vec.with_values([3.0, 0.5])
        assert moved["x"] == 3.0 and vec["x"] == 1.0

    def test_out_of_bounds_rejected(self):
        with pytest.raises(RejectedInputError):
            ParameterVector(("x",), [5.0], [0.0], [4.0])

    def test_duplicate_names_rejected(self):
        with pytest.raises(RejectedInputError):
            ParameterVector(("x", "x"), [1.0, 2.0], [0.0, 0.0], [4.0, 4.0])

    def test_nan_rejected(self):
        with pytest.raises(RejectedInputError):
            ParameterVector(("x",), [math.nan], [0.0], [1.0])


class TestAnnealingSchedule:
    def test_equal_initial_final_is_single_level(self):
        sched = AnnealingSchedule(1.0, 0.5, 10, 1.0)
        assert list(sched.temperatures()) == [1.0]

    def test_final_above_initial_rejected(self):
        with pytest.raises(RejectedInputError):
            AnnealingSchedule(1.0, 0.5, 10, 2.0)

    @pytest.mark.parametrize("factor", [0.0, 1.0, 1.5, -0.2])
    def test_bad_cooling_factor_rejected(self, factor):
        with pytest.raises(RejectedInputError):
            AnnealingSchedule(1.0, factor, 10, 0.1)

    def test_ladder_descends_to_final(self):
        sched = AnnealingSchedule(4.0, 0.5, 3, 0.6)
        temps = list(sched.temperatures())
        assert temps == [4.0, 2.0, 1.0, 0.6]
        assert sched.n_levels == 4

    def test_default_scales_with_dimension(self):
        assert AnnealingSchedule.default(3).steps_per_level == 100
        assert AnnealingSchedule.default(50).steps_per_level == 500

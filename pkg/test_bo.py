#!/usr/bin/env python3
"""
Bayesian optimization tests
Mixed-space encoding, initial design, acquisition functions, the
over-exploitation escape and end-to-end soundness of the loop.
"""

import math
import sys
from pathlib import Path

# Add the app directory to Python path
app_dir = Path(__file__).parent / "app"
sys.path.insert(0, str(app_dir))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernel_selection.bo import (PENALTY_COST, AcquisitionKind, BoState, Candidate, Observation, SearchSpace,
                                 acquisition_ei, acquisition_ei_plus, acquisition_ucb, initial_design,
                                 integer_transform, propose_next, run_bo, run_quadratic_demo, ucb_beta)
from kernel_selection.errors import ObjectiveEvaluationError
from kernel_selection.kernels import HyperparameterDomain, KernelFamily, default_domain, svr_epsilon_domain


class StubSurrogate:
    """Fixed posterior per kernel index"""

    def __init__(self, table, noise_std=0.1):
        self.table = table
        self.noise_std = noise_std

    def predict(self, Z):
        Z = integer_transform(Z)
        mu = np.array([self.table[int(j)][0] for j in Z[:, 0]])
        sigma = np.array([self.table[int(j)][1] for j in Z[:, 0]])
        return mu, sigma


def _table1_space() -> SearchSpace:
    return SearchSpace.from_families(
        [KernelFamily.LINEAR, KernelFamily.POLYNOMIAL_CUBIC, KernelFamily.GAUSSIAN], svr_epsilon_domain())


def test_encoding_pads_and_round_trips():
    space = _table1_space()
    assert space.encoded_dim == 3
    z = space.encode(1, (0.1,))
    assert z[0] == 1.0 and z[1] == 0.5
    assert space.decode(z) == (1, pytest.approx((0.1,)))
    kernel_index, phi = space.decode(space.encode(3, (2.0, 0.05)))
    assert kernel_index == 3
    np.testing.assert_allclose(phi, (2.0, 0.05))


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(min_value=-5.0, max_value=5.0, allow_nan=False), min_size=3, max_size=3))
def test_decoded_points_always_in_space(z):
    space = _table1_space()
    kernel_index, phi = space.decode(z)
    assert space.contains(kernel_index, phi)


def test_initial_design_starts_with_initial_and_interleaves():
    space = _table1_space()
    design = initial_design(space, budget=50, seed=0, initial=(1, (0.034,)))
    assert design[0] == (1, (0.034,))
    assert [p[0] for p in design[1:4]] == [1, 2, 3]
    assert len(design) == len(set(design))
    assert all(space.contains(j, phi) for j, phi in design)
    assert len(initial_design(space, budget=2, seed=0)) == 2
    assert initial_design(space, 50, seed=4) == initial_design(space, 50, seed=4)


def test_ei_is_zero_without_uncertainty():
    surrogate = StubSurrogate({1: (0.5, 0.0)})
    assert acquisition_ei(surrogate, 1.0, np.array([1.0])) == 0.0
    improving = StubSurrogate({1: (0.0, 1.0)})
    expected = 1.0 * 0.8413447460685429 + 1.0 * 0.24197072451914337
    assert acquisition_ei(improving, 1.0, np.array([1.0])) == pytest.approx(expected)


def test_ucb_and_beta_schedule():
    surrogate = StubSurrogate({1: (2.0, 0.5)})
    assert acquisition_ucb(surrogate, np.array([1.0]), 4.0) == pytest.approx(1.0)
    assert acquisition_ucb(surrogate, np.array([1.0]), 0.0) == pytest.approx(2.0)
    assert ucb_beta(1) == pytest.approx(2.0 * math.log(2.0))
    with pytest.raises(ValueError):
        acquisition_ucb(surrogate, np.array([1.0]), -1.0)


def _escape_setup():
    empty = HyperparameterDomain.empty()
    space = SearchSpace((Candidate(empty, label="a"), Candidate(empty, label="b")))
    state = BoState()
    state.record(Observation(1, (), 0.0, 0))
    state.surrogate = StubSurrogate({1: (0.0, 1e-5), 2: (0.39, 0.1)}, noise_std=0.1)
    return space, state


def test_ei_plus_escapes_over_exploitation():
    space, state = _escape_setup()
    assert propose_next(state, space, AcquisitionKind.EI)[0] == 1
    assert state.escapes == 0
    assert propose_next(state, space, AcquisitionKind.EI_PLUS, lam=0.5)[0] == 2
    assert state.escapes == 1
    # lambda = 0 disables the escape and reduces to plain EI
    assert propose_next(state, space, AcquisitionKind.EI_PLUS, lam=0.0)[0] == 1


def _mixed_objective(kernel_index, phi):
    return (math.log10(phi[0]) - 0.5) ** 2 + (0.0 if kernel_index == 1 else 1.0)


def test_mixed_run_is_sound_and_deterministic():
    space = SearchSpace.from_families([KernelFamily.GAUSSIAN, KernelFamily.GAUSSIAN])
    state = run_bo(_mixed_objective, space, budget=14, seed=3)
    assert len(state.history) == 14
    assert all(space.contains(o.kernel_index, o.phi) for o in state.history)
    assert all(a >= b for a, b in zip(state.incumbent_trace, state.incumbent_trace[1:]))
    assert state.incumbent.cost == min(o.cost for o in state.history)
    assert state.incumbent.kernel_index == 1
    again = run_bo(_mixed_objective, space, budget=14, seed=3)
    assert [o.to_dict() for o in again.history] == [o.to_dict() for o in state.history]


def test_initial_point_is_evaluated_first_and_bounds_the_result():
    space = SearchSpace.from_families([KernelFamily.GAUSSIAN])
    initial = (1, (3.0,))
    state = run_bo(_mixed_objective, space, budget=5, seed=0, initial=initial)
    assert state.history[0].phi == (3.0,)
    assert state.incumbent.cost <= _mixed_objective(*initial)
    with pytest.raises(ValueError):
        run_bo(_mixed_objective, space, budget=5, initial=(1, (1e4,)))
    with pytest.raises(ValueError):
        run_bo(_mixed_objective, space, budget=0)


def test_single_evaluation_budget():
    space = SearchSpace.from_families([KernelFamily.GAUSSIAN])
    state = run_bo(_mixed_objective, space, budget=1, seed=0, initial=(1, (2.0,)))
    assert len(state.history) == 1
    assert state.incumbent.cost == _mixed_objective(1, (2.0,))


def test_objective_failures():
    space = SearchSpace.from_families([KernelFamily.GAUSSIAN])

    def broken(kernel_index, phi):
        raise RuntimeError("boom")

    with pytest.raises(ObjectiveEvaluationError) as info:
        run_bo(broken, space, budget=2)
    assert info.value.kernel_index == 1

    state = run_bo(lambda j, phi: float("nan"), space, budget=2)
    assert all(o.failed and o.cost == PENALTY_COST for o in state.history)


def test_state_json_round_trip():
    space = SearchSpace.from_families([KernelFamily.LINEAR, KernelFamily.GAUSSIAN], svr_epsilon_domain())
    state = run_bo(lambda j, phi: sum(phi) + j, space, budget=4, seed=1)
    restored = BoState.from_dict(state.to_dict())
    assert [o.to_dict() for o in restored.history] == [o.to_dict() for o in state.history]
    assert restored.incumbent_trace == state.incumbent_trace
    assert restored.kind is state.kind


def test_ucb_demo_finds_minimizer():
    state = run_quadratic_demo(seed=0, iterations=30)
    assert abs(state.incumbent.phi[0] - 0.3) <= 1e-2
    assert all(a >= b for a, b in zip(state.incumbent_trace, state.incumbent_trace[1:]))


def test_default_domain_matches_space_boxes():
    space = _table1_space()
    assert space.domain(3).lower == default_domain(KernelFamily.GAUSSIAN).lower + svr_epsilon_domain().lower


def test_index_rounding_and_ei_at_incumbent():
    Z = integer_transform([[1.4, 0.2], [0.6, 0.2]])
    np.testing.assert_array_equal(Z[0], Z[1])
    surrogate = StubSurrogate({1: (1.0, 1.0)})
    assert acquisition_ei(surrogate, 1.0, np.array([1.0])) == pytest.approx(0.3989, abs=1e-4)


def test_single_point_space_and_constant_objective():
    space = SearchSpace((Candidate(HyperparameterDomain.empty(), label="only"),))
    state = run_bo(lambda j, phi: 2.5, space, budget=3, seed=0)
    assert state.incumbent.cost == 2.5
    assert all(o.kernel_index == 1 and o.phi == () for o in state.history)
    assert propose_next(state, space) == (1, ())


def test_ei_plus_value_discards_pinned_points():
    space, state = _escape_setup()
    pinned, open_point = space.encode(1, ()), space.encode(2, ())
    assert acquisition_ei(state.surrogate, 0.0, pinned) > 0.0
    assert acquisition_ei_plus(state, pinned, lam=0.5) == 0.0
    assert acquisition_ei_plus(state, open_point, lam=0.5) == acquisition_ei(state.surrogate, 0.0, open_point)
    assert acquisition_ei_plus(state, pinned, lam=0.0) == acquisition_ei(state.surrogate, 0.0, pinned)
    batch = acquisition_ei_plus(state, np.vstack([pinned, open_point]))
    assert batch[0] == 0.0 and batch[1] > 0.0


def test_ei_nonnegative_on_random_points():
    space = SearchSpace.from_families([KernelFamily.GAUSSIAN, KernelFamily.GAUSSIAN])
    state = run_bo(_mixed_objective, space, budget=8, seed=2)
    rng = np.random.default_rng(0)
    Z = np.column_stack([rng.uniform(1.0, 2.0, 1000), rng.uniform(0.0, 1.0, 1000)])
    assert np.all(acquisition_ei(state.surrogate, state.incumbent.cost, Z) >= 0.0)


class QuadraticSurrogate:
    """Bowl in the encoded space centred away from the unit box"""

    def __init__(self, centre, noise_std=0.1):
        self.centre = np.asarray(centre, dtype=float)
        self.noise_std = noise_std

    def predict(self, Z):
        Z = integer_transform(Z)
        mu = np.sum((Z - self.centre) ** 2, axis=1)
        return mu, np.full(len(Z), 0.2)


def test_proposals_stay_in_space_over_1000_iterations():
    space = _table1_space()
    rng = np.random.default_rng(11)
    kinds = list(AcquisitionKind)
    for iteration in range(1000):
        state = BoState()
        state.record(Observation(1, (0.1,), float(rng.uniform(-1.0, 1.0)), 0))
        state.surrogate = QuadraticSurrogate(rng.uniform(-3.0, 4.0, size=space.encoded_dim))
        kernel_index, phi = propose_next(state, space, kinds[iteration % len(kinds)], seed=iteration,
                                         restarts=1, raw_samples=8)
        assert isinstance(kernel_index, int) and 1 <= kernel_index <= space.n_kernels
        assert space.contains(kernel_index, phi)


def test_two_dimensional_quadratic_within_five_percent():
    space = SearchSpace((Candidate(HyperparameterDomain((-2.0, -2.0), (2.0, 2.0), (False, False)), label="bowl"),))
    state = run_bo(lambda _, phi: (phi[0] - 0.5) ** 2 + (phi[1] + 0.3) ** 2 + 1.0, space, budget=40, seed=0)
    assert state.incumbent.cost <= 1.05


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

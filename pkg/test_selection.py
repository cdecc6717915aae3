#!/usr/bin/env python3
"""
Selection pipeline tests
Cross-validation loss, data-based and closed-loop selection, the retrained
after-trials variant and repeated-seed statistics on short budgets.
"""

import sys
from pathlib import Path

# Add the app directory to Python path
app_dir = Path(__file__).parent / "app"
sys.path.insert(0, str(app_dir))

import numpy as np
import pytest

import kernel_selection.selection as selection
from kernel_selection.bo import PENALTY_COST
from kernel_selection.gp import Dataset
from kernel_selection.kernels import KernelFamily, KernelSpec
from kernel_selection.plant import make_training_data
from kernel_selection.selection import (ClosedLoopTask, ModelKind, ModelSettings, build_space,
                                        closed_loop_cost_at, closed_loop_selection, cross_validation_loss,
                                        data_based_after_trials, data_based_selection, likelihood_selection,
                                        merge_trial_data, repeated_study, superset_space)

TABLE1 = [KernelFamily.LINEAR, KernelFamily.POLYNOMIAL_CUBIC, KernelFamily.GAUSSIAN]


@pytest.fixture(scope="module")
def data():
    return make_training_data()


@pytest.fixture(scope="module")
def space():
    return build_space(TABLE1)


@pytest.fixture(scope="module")
def data_based(data, space):
    return data_based_selection(data, space, budget=6, seed=0)


def test_cv_loss_vanishes_on_linear_data():
    inputs = np.linspace(-5.0, 5.0, 10)
    data = Dataset(inputs.reshape(-1, 1), 2.0 * inputs)
    assert cross_validation_loss(data, KernelSpec(KernelFamily.LINEAR), 0.0, folds=5) < 1e-4


def test_leave_one_out_ignores_seed(data):
    spec = KernelSpec(KernelFamily.GAUSSIAN, (2.0,))
    assert cross_validation_loss(data, spec, 0.05, folds=data.m, seed=0) == \
        cross_validation_loss(data, spec, 0.05, folds=data.m, seed=9)


def test_cv_fold_bounds(data):
    spec = KernelSpec(KernelFamily.LINEAR)
    with pytest.raises(ValueError):
        cross_validation_loss(data, spec, 0.1, folds=1)
    with pytest.raises(ValueError):
        cross_validation_loss(data, spec, 0.1, folds=data.m + 1)


def test_data_based_selection_reports_incumbent(data, space, data_based):
    history = data_based.bo_state.history
    assert data_based.loss == min(o.cost for o in history)
    assert data_based.kernel_name in {f.value for f in TABLE1}
    assert data_based.svr_epsilon is not None
    assert data_based.cost == closed_loop_cost_at(data, space, data_based.point, ClosedLoopTask())


def test_data_based_objective_never_rolls_out(data, space, monkeypatch):
    calls = []
    original = selection.rollout

    def counting(*args, **kwargs):
        calls.append(args)
        return original(*args, **kwargs)

    monkeypatch.setattr(selection, "rollout", counting)
    data_based_selection(data, space, budget=4, seed=1)
    # only the final report of the selected model runs the loop
    assert len(calls) == 1


def test_single_candidate_space(data):
    result = data_based_selection(data, build_space([KernelFamily.GAUSSIAN]), budget=3, seed=0)
    assert result.kernel_name == "Gaussian"


def test_single_trial_reproduces_data_based_cost(data, space, data_based):
    result = closed_loop_selection(data, space, budget=1, seed=0, initial=data_based.point)
    assert result.cost == data_based.cost
    assert result.point == data_based.point


def test_closed_loop_never_worse_than_initial(data, space, data_based):
    result = closed_loop_selection(data, space, budget=6, seed=2, initial=data_based.point)
    assert result.cost <= data_based.cost
    assert result.cost == closed_loop_cost_at(data, space, result.point, ClosedLoopTask())
    incumbent = result.bo_state.incumbent_trace
    assert all(a >= b for a, b in zip(incumbent, incumbent[1:]))
    with pytest.raises(ValueError):
        closed_loop_selection(data, space, budget=0)


def test_after_trials_merges_transitions(data, space):
    runs = [closed_loop_selection(data, space, budget=3, seed=seed) for seed in (0, 1)]
    traces = [trace for run in runs for trace in run.traces]
    pooled = np.vstack([t.transitions().inputs for t in traces if t.steps])
    merged = merge_trial_data(data, traces)
    assert merged.m == data.m + np.unique(pooled, axis=0).shape[0]
    thinned = merge_trial_data(data, traces, max_transitions=4)
    assert thinned.m == data.m + min(4, np.unique(pooled, axis=0).shape[0])
    assert merge_trial_data(data, []).m == data.m
    retrained = data_based_after_trials(data, runs, space, budget=3, seed=0)
    assert retrained.method == "Data-based AT"
    assert retrained.bo_state.history
    single = data_based_after_trials(data, runs[0], space, budget=3, seed=0)
    assert single.method == "Data-based AT"


def test_repeated_study_single_run(data, space):
    summary = repeated_study(1, budget=3, base_seed=4, data=data, space=space)
    run = summary.results[0]
    np.testing.assert_array_equal(summary.curve_mean, run.bo_state.incumbent_trace)
    np.testing.assert_array_equal(summary.curve_std, np.zeros(3))
    assert summary.majority_kernel == run.kernel_name
    assert list(summary.to_frame().columns) == ["trial", "mean", "std"]
    with pytest.raises(ValueError):
        repeated_study(0, data=data, space=space)


def test_repeated_study_parallel_matches_sequential(data, space):
    sequential = repeated_study(2, budget=3, base_seed=0, data=data, space=space)
    parallel = repeated_study(2, budget=3, base_seed=0, data=data, space=space, workers=2)
    assert [r.seed for r in parallel.results] == [0, 1]
    np.testing.assert_array_equal(sequential.final_costs, parallel.final_costs)


def test_superset_space_contains_selection(data):
    spec = KernelSpec(KernelFamily.GAUSSIAN, (0.3,))
    space = superset_space(spec, extra=0.034)
    assert space.n_kernels == 1 and space.n_extra == 0
    assert space.contains(1, (0.3, 0.034))
    result = closed_loop_selection(data, space, budget=3, seed=0, initial=(1, (0.3, 0.034)))
    assert result.kernel_phi[0] == pytest.approx(result.phi[0])
    assert result.svr_epsilon == result.phi[1]


def test_gp_model_kind(data):
    space = build_space([KernelFamily.GAUSSIAN], ModelKind.GP)
    result = closed_loop_selection(data, space, budget=3, seed=0, settings=ModelSettings(kind=ModelKind.GP))
    assert result.noise_sigma is not None and result.svr_epsilon is None
    assert 0.0 <= result.cost <= PENALTY_COST


def test_likelihood_baseline(data):
    result = likelihood_selection(data, KernelFamily.GAUSSIAN, restarts=2, seed=0)
    assert result.method == "Likelihood"
    assert np.isfinite(result.loss)
    assert 0.0 <= result.cost <= PENALTY_COST


def test_multiple_initial_states_average(data, space, data_based):
    task = ClosedLoopTask(initial_states=(3.0, -3.0))
    both = closed_loop_cost_at(data, space, data_based.point, task)
    left = closed_loop_cost_at(data, space, data_based.point, ClosedLoopTask(x0=3.0))
    right = closed_loop_cost_at(data, space, data_based.point, ClosedLoopTask(x0=-3.0))
    assert both == pytest.approx(0.5 * (left + right))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

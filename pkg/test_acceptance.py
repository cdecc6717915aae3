#!/usr/bin/env python3
"""
Acceptance runs for the simulation study
Full-budget data-based and closed-loop selections on the benchmark plant.
Slow: deselect with -m "not slow".
"""

import sys
import time
from pathlib import Path

# Add the app directory to Python path
app_dir = Path(__file__).parent / "app"
sys.path.insert(0, str(app_dir))

import numpy as np
import pytest

from kernel_selection.kernels import KernelFamily
from kernel_selection.plant import make_training_data
from kernel_selection.selection import build_space, data_based_selection, repeated_study

pytestmark = pytest.mark.slow

TABLE1 = [KernelFamily.LINEAR, KernelFamily.POLYNOMIAL_CUBIC, KernelFamily.GAUSSIAN]


@pytest.fixture(scope="module")
def setup():
    return make_training_data(), build_space(TABLE1)


@pytest.fixture(scope="module")
def data_based(setup):
    data, space = setup
    start = time.time()
    result = data_based_selection(data, space, budget=30, seed=0)
    return result, time.time() - start


def test_data_based_row(data_based):
    result, elapsed = data_based
    print(f"✅ Data-based: {result.kernel_name} phi={result.kernel_phi} eps={result.svr_epsilon} "
          f"loss={result.loss:.4f} cost={result.cost:.3f} ({elapsed:.1f}s)")
    assert result.kernel_name == "Linear"
    assert 100.0 <= result.cost <= 400.0
    assert elapsed < 60.0


def test_closed_loop_row_and_never_worse(setup, data_based):
    data, space = setup
    baseline, _ = data_based
    start = time.time()
    summary = repeated_study(10, budget=50, base_seed=0, data=data, space=space, initial=baseline.point)
    elapsed = time.time() - start
    costs = summary.final_costs
    print(f"✅ Closed-loop: mean {costs.mean():.3f} std {costs.std():.3f} kernels {summary.kernel_counts} "
          f"({elapsed:.1f}s)")
    assert costs.mean() <= 30.0
    assert np.mean(costs <= 30.0) >= 0.8
    assert summary.majority_kernel == "Gaussian"
    # every run started from the data-based point, so none can end above it
    assert np.all(costs <= baseline.cost)
    assert np.all(np.diff(summary.curve_mean) <= 0.0)
    assert elapsed < 600.0


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))

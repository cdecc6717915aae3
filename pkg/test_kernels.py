#!/usr/bin/env python3
"""
Kernel catalog tests
Closed-form kernel values, Gram matrices, hyperparameter boxes and the
symmetry / PSD properties every candidate must satisfy.
"""

import sys
from pathlib import Path

# Add the app directory to Python path
app_dir = Path(__file__).parent / "app"
sys.path.insert(0, str(app_dir))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernel_selection.errors import DomainError, KernelError
from kernel_selection.kernels import (HyperparameterDomain, KernelFamily, KernelSpec, default_domain,
                                      eval_kernel, gram_matrix, kernel_diag, svr_epsilon_domain)

finite = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, allow_infinity=False)
scales = st.floats(min_value=0.05, max_value=20.0, allow_nan=False, allow_infinity=False)


def _spec(family: KernelFamily, input_dim: int = 1, scale: float = 1.0) -> KernelSpec:
    return KernelSpec(family, (scale,) * family.arity(input_dim), input_dim)


def test_closed_form_values():
    assert eval_kernel(_spec(KernelFamily.LINEAR), [1.0], [2.0]) == 2.0
    assert eval_kernel(_spec(KernelFamily.POLYNOMIAL_CUBIC), [0.0], [0.0]) == 1.0
    assert eval_kernel(KernelSpec(KernelFamily.GAUSSIAN, (2.0,)), [1.7], [1.7]) == 1.0
    ard = KernelSpec(KernelFamily.SQUARED_EXPONENTIAL_ARD, (3.0, 1.0, 2.0), 2)
    assert eval_kernel(ard, [0.0, 0.0], [0.0, 0.0]) == pytest.approx(9.0)
    assert eval_kernel(ard, [1.0, 2.0], [0.0, 0.0]) == pytest.approx(9.0 * np.exp(-2.0))


def test_gram_matrix_examples():
    np.testing.assert_array_equal(gram_matrix(_spec(KernelFamily.LINEAR), [[1.0], [2.0]]),
                                  [[1.0, 2.0], [2.0, 4.0]])
    np.testing.assert_array_equal(gram_matrix(KernelSpec(KernelFamily.GAUSSIAN, (1.0,)), [[0.5]]), [[1.0]])
    K = gram_matrix(KernelSpec(KernelFamily.GAUSSIAN, (1.0,)), [[0.0], [10.0]])
    assert K[0, 1] == pytest.approx(np.exp(-100.0), abs=1e-300)
    assert K[0, 1] < 1e-40


def test_kernel_diag_matches_gram():
    points = np.linspace(-2.0, 2.0, 7).reshape(-1, 1)
    for family in (KernelFamily.LINEAR, KernelFamily.POLYNOMIAL_CUBIC, KernelFamily.GAUSSIAN,
                   KernelFamily.SQUARED_EXPONENTIAL_ARD):
        spec = _spec(family, scale=0.7)
        np.testing.assert_allclose(kernel_diag(spec, points), np.diag(gram_matrix(spec, points)))


def test_spec_validation():
    with pytest.raises(KernelError):
        KernelSpec(KernelFamily.GAUSSIAN, ())
    with pytest.raises(KernelError):
        KernelSpec(KernelFamily.GAUSSIAN, (-1.0,))
    with pytest.raises(KernelError):
        KernelSpec(KernelFamily.LINEAR, (1.0,))
    with pytest.raises(KernelError):
        eval_kernel(_spec(KernelFamily.LINEAR), [1.0, 2.0], [1.0])


def test_spec_json_shape():
    spec = KernelSpec(KernelFamily.GAUSSIAN, (0.3,))
    assert spec.to_dict() == {"family": "Gaussian", "phi": [0.3]}
    assert KernelSpec.from_dict(spec.to_dict()) == spec
    ard = KernelSpec.from_dict({"family": "SquaredExponentialARD", "phi": [1.0, 2.0, 3.0]})
    assert ard.input_dim == 2


def test_default_domains():
    assert default_domain(KernelFamily.LINEAR).dim == 0
    gaussian = default_domain(KernelFamily.GAUSSIAN)
    assert gaussian.lower == (1e-2,) and gaussian.upper == (1e2,) and gaussian.log_scale == (True,)
    assert default_domain(KernelFamily.SQUARED_EXPONENTIAL_ARD, 6).dim == 7
    # both selected tube widths of the simulation study lie inside the epsilon box
    assert svr_epsilon_domain().contains([0.0336]) and svr_epsilon_domain().contains([0.301])


def test_domain_unit_mapping():
    domain = HyperparameterDomain((1e-2, -1.0), (1e2, 3.0), (True, False))
    np.testing.assert_allclose(domain.to_unit([1.0, 1.0]), [0.5, 0.5])
    np.testing.assert_allclose(domain.from_unit([0.5, 0.25]), [1.0, 0.0])
    np.testing.assert_allclose(domain.from_unit([2.0, -1.0]), [1e2, -1.0])
    degenerate = HyperparameterDomain((2.0,), (2.0,), (True,))
    assert degenerate.to_unit([2.0])[0] == 0.5
    with pytest.raises(DomainError):
        HyperparameterDomain((0.0,), (1.0,), (True,))
    with pytest.raises(DomainError):
        HyperparameterDomain((2.0,), (1.0,), (False,))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(list(KernelFamily)), finite, finite, scales)
def test_kernel_symmetry(family, a, b, scale):
    spec = _spec(family, scale=scale)
    assert eval_kernel(spec, [a], [b]) == pytest.approx(eval_kernel(spec, [b], [a]), rel=1e-12, abs=1e-300)


@settings(max_examples=40, deadline=None)
@given(finite, finite, scales)
def test_gaussian_range(a, b, scale):
    value = eval_kernel(KernelSpec(KernelFamily.GAUSSIAN, (scale,)), [a], [b])
    assert 0.0 <= value <= 1.0


def test_gram_psd_on_random_sets():
    rng = np.random.default_rng(0)
    for family in KernelFamily:
        for _ in range(100):
            m = int(rng.integers(1, 12))
            points = rng.uniform(-3.0, 3.0, size=(m, 1))
            K = gram_matrix(_spec(family, scale=float(rng.uniform(0.2, 3.0))), points)
            np.testing.assert_array_equal(K, K.T)
            assert np.linalg.eigvalsh(K)[0] >= -1e-10 * max(np.trace(K), 1.0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

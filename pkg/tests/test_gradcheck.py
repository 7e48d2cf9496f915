import numpy as np
import pytest

from dianet.gradcheck import SCOPES, check_gradients, numeric_gradient, relative_error, run_suite
from dianet.tensor import Tensor


def test_relative_error_definition():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_numeric_gradient_of_cubic():
    x = np.array([0.5, -1.0, 2.0])
    g = numeric_gradient(lambda: float(np.sum(x ** 3)), x)
    np.testing.assert_allclose(g, 3 * x ** 2, rtol=1e-9)
    np.testing.assert_array_equal(x, [0.5, -1.0, 2.0])


def test_check_gradients_catches_wrong_backward():
    # square whose backward forgets the factor 2
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = lambda: Tensor.make(x.data ** 2, [x], lambda g: (g * x.data,), "bad_square").sum()
    assert check_gradients(loss, [x]) == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("scope", sorted(SCOPES))
def test_suite_passes(scope):
    results = run_suite(scope, seed=1)
    assert results and all(r.passed for r in results), [(r.name, r.error) for r in results if not r.passed]


def test_cell_scope_covers_unrolled_sequence():
    assert "dia_lstm_unroll5" in [r.name for r in run_suite("cell")]


def test_corrupted_gradients_fail():
    assert not any(r.passed for r in run_suite("ops", corrupt=True))

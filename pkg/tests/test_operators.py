import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fnhom.errors import OperatorError
from fnhom.operators import (BellmanOperator, LinearOperator, PucciOperator, ShiftedOperator,
                             check_uniform_ellipticity, eval_operator, eval_pucci,
                             oscillation_beta, oscillation_norms, random_psd, random_symmetric)
from fnhom.presets import make_operator


def test_linear_constant_coefficient_is_trace():
    op = LinearOperator(np.eye(2), 1, 1)
    M = np.array([[1.0, 2.0], [2.0, 3.0]])
    assert eval_operator(op, M, np.zeros(2)) == 4.0


def test_non_symmetric_matrix_rejected():
    op = LinearOperator(np.eye(2), 1, 1)
    with pytest.raises(OperatorError):
        op(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros(2))


def test_operator_is_periodic_in_x():
    op = make_operator("smooth2d")
    M = np.diag([1.0, -0.5])
    x = np.array([0.13, 0.4])
    assert op(M, x) == pytest.approx(op(M, x + [3.0, -2.0]), abs=1e-13)


def test_pucci_values():
    M = np.diag([2.0, -1.0])
    assert eval_pucci(1, M, 1.0, 3.0) == 3 * 2 - 1
    assert eval_pucci(-1, M, 1.0, 3.0) == 2 - 3
    with pytest.raises(OperatorError):
        eval_pucci(1, M, 2.0, 1.0)


@given(arrays(float, (3, 3), elements=st.floats(-10, 10)))
def test_pucci_bounds_every_linear_operator(G):
    M = (G + G.T) / 2
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    a = Q @ np.diag(rng.uniform(1.0, 2.0, 3)) @ Q.T
    val = np.trace(a @ M)
    assert eval_pucci(-1, M, 1.0, 2.0) - 1e-9 <= val <= eval_pucci(1, M, 1.0, 2.0) + 1e-9


@given(arrays(float, (2, 2), elements=st.floats(-5, 5)),
       arrays(float, (2, 2), elements=st.floats(-5, 5)))
def test_pucci_subadditive(G, H):
    M, N = (G + G.T) / 2, (H + H.T) / 2
    assert eval_pucci(1, M + N, 1, 2) <= eval_pucci(1, M, 1, 2) + eval_pucci(1, N, 1, 2) + 1e-9


def test_bellman_is_min_of_branches():
    a1 = LinearOperator(np.diag([1.0, 2.0]), 1, 2)
    a2 = LinearOperator(np.diag([2.0, 1.0]), 1, 2)
    op = BellmanOperator([a1, a2])
    M = np.diag([1.0, 0.0])
    assert op(M, np.zeros(2)) == 1.0


def test_shifted_operator_offset():
    op = ShiftedOperator(LinearOperator(np.eye(2), 1, 1), 0.5)
    assert op(np.zeros((2, 2)), np.zeros(2)) == 0.5


@pytest.mark.parametrize("name", ["laplace2d", "smooth2d", "bellman", "pucci", "diagcos"])
def test_presets_pass_sandwich(name):
    op = make_operator(name)
    rep = check_uniform_ellipticity(op, samples=100, seed=1)
    assert rep.passed, rep.witness


def test_sandwich_detects_bad_declared_constants():
    op = LinearOperator(np.diag([1.0, 4.0]), 1.0, 2.0)  # declared Lambda too small
    rep = check_uniform_ellipticity(op, samples=100, seed=0)
    assert not rep.passed and rep.witness is not None


def test_validate_rejects_out_of_range_coefficients():
    op = LinearOperator(np.diag([0.5, 1.0]), 1.0, 2.0)
    with pytest.raises(OperatorError):
        op.validate(np.zeros((1, 2)))


def test_oscillation_constant_coefficients_zero():
    rep = oscillation_norms(make_operator("laplace2d"), [0.0, 0.0], [0.5, 0.25])
    assert all(v == 0 for v in rep.local_norms.values())


def test_oscillation_beta_linear_oracle():
    # beta = |a(x) - a(x0)|_F = sqrt(2) * 0.5 * |sin(2 pi x1) - sin(2 pi y1)|
    op = make_operator("smooth2d")
    x, x0 = np.array([0.25, 0.1]), np.array([0.0, 0.3])
    assert oscillation_beta(op, x, x0) == pytest.approx(np.sqrt(2) * 0.5, rel=1e-12)


def test_oscillation_norm_smooth_scaling():
    # smooth coefficients: local L^n average of beta shrinks like r
    op = make_operator("smooth2d")
    rep = oscillation_norms(op, [0.0, 0.0], [0.2, 0.1, 0.05, 0.025])
    assert rep.holder_fit[1] == pytest.approx(1.0, abs=0.05)
    raw = [rep.raw_integrals[r] for r in sorted(rep.radii)]
    assert all(a <= b for a, b in zip(raw, raw[1:]))


def test_random_psd_is_psd():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert np.linalg.eigvalsh(random_psd(rng, 3)).min() >= -1e-12
        S = random_symmetric(rng, 3)
        np.testing.assert_array_equal(S, S.T)


def test_pucci_operator_combine():
    assert PucciOperator(1, 1, 2, 2).combine == "max"
    assert PucciOperator(-1, 1, 2, 2).combine == "min"

import dataclasses
import math

import numpy as np
import pytest

from fnhom.cell import SolverConfig
from fnhom.errors import DecompositionFailed, GridError, OperatorError, SolverError
from fnhom.exterior import (AnnulusProblem, asymptotic_extraction, barrier_data_bounds,
                            barrier_params, check_barrier, comparison_sandwich, decay_exponent,
                            decay_fit, exterior_solve, farfield_values)
from fnhom.liouville import Decomposition
from fnhom.presets import make_datum, make_operator
from fnhom.torus import TorusField, TorusGrid

from oracles import radial_harmonic


def _laplace_problem(res=8, R_out=4.0, A=None, c=0.0, phi=1.0):
    op = make_operator("laplace3d")
    g = TorusGrid(3, res)
    z = TorusField(g, np.zeros(g.shape), zero_mean=True)
    far = Decomposition(np.zeros((3, 3)) if A is None else A, np.zeros(3), c, z)
    return op, AnnulusProblem(op, z, 1.0, R_out, lambda x: np.full(len(x), phi), far), far


@pytest.fixture(scope="module")
def laplace_annulus():
    op, prob, far = _laplace_problem()
    return op, prob, far, exterior_solve(prob, SolverConfig(tol=1e-9))


def test_decay_exponent_values():
    assert decay_exponent(3, 1, 1) == -1
    assert decay_exponent(3, 1, 1.5) == pytest.approx(-1 / 3)


def test_annulus_matches_radial_harmonic(laplace_annulus):
    op, prob, far, u = laplace_annulus
    assert u.octant
    ref = radial_harmonic(u.radius[u.active], 1.0, 4.0)
    err = np.abs(u.values[u.active] - ref).max()
    assert err < 0.1  # staircase boundary is O(h)


def test_octant_and_full_agree():
    op, prob, far = _laplace_problem(res=4)
    a = exterior_solve(prob, symmetry="octant")
    b = exterior_solve(prob, symmetry="none")
    assert a.octant and not b.octant
    # compare on the positive octant of the full solve
    full = b.values.reshape(b.domain.shape)
    K = b.domain.shape[0] // 2
    np.testing.assert_allclose(full[K:, K:, K:].ravel(), a.values, atol=1e-8)


def test_octant_refused_for_asymmetric_datum():
    op = make_operator("laplace3d")
    g = TorusGrid(3, 4)
    f = make_datum("sin", g)  # odd in x1
    far = Decomposition(np.zeros((3, 3)), np.zeros(3), 0.0, TorusField(g, np.zeros(g.shape)))
    prob = AnnulusProblem(op, f, 1.0, 4.0, lambda x: np.ones(len(x)), far)
    with pytest.raises(GridError):
        exterior_solve(prob, symmetry="octant")


def test_sandwich_holds(laplace_annulus):
    op, prob, far, u = laplace_annulus
    rep = comparison_sandwich(u, far, None)
    assert rep["passed"] and rep["Cbar"] == pytest.approx(1.0)


def test_decay_fit_laplacian(laplace_annulus):
    op, prob, far, u = laplace_annulus
    fit = decay_fit(u, farfield_values(u, far), radii=[1.3, 1.6, 2.0, 2.5, 3.0, 3.4])
    assert -1.2 <= fit.exponent <= -0.8
    assert fit.passed and not fit.degenerate


def test_decay_fit_degenerate_when_exact(laplace_annulus):
    op, prob, far, u = laplace_annulus
    fit = decay_fit(u, u.values, radii=[1.3, 1.6, 2.0, 2.5, 3.0])
    assert fit.degenerate and fit.passed


def test_decay_fit_needs_four_shells(laplace_annulus):
    op, prob, far, u = laplace_annulus
    with pytest.raises(GridError):
        decay_fit(u, u.values, radii=[1.5, 2.0, 50.0])


def test_decay_bounded_only_regime():
    op = make_operator("pucci", {"sign": 1, "lam": 1.0, "Lam": 2.0, "dim": 3})
    g = TorusGrid(3, 4)
    z = TorusField(g, np.zeros(g.shape))
    far = Decomposition(np.zeros((3, 3)), np.zeros(3), 0.0, z)
    u = exterior_solve(AnnulusProblem(op, z, 1.0, 4.0, lambda x: np.ones(len(x)), far))
    fit = decay_fit(u, farfield_values(u, far))
    assert fit.bounded_only and 0 < fit.sup_abs <= 1.0 + 1e-9


def test_decay_csv(tmp_path, laplace_annulus):
    op, prob, far, u = laplace_annulus
    fit = decay_fit(u, farfield_values(u, far), radii=[1.3, 1.6, 2.0, 2.5, 3.0])
    fit.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "r,max_abs_error" and len(lines) == 6


def test_barrier_params_strict_and_checked():
    op = make_operator("bellman")
    g = TorusGrid(2, 16)
    f = make_datum("sin", g, {"amp": 0.5})
    data = barrier_data_bounds(op, f, 1.0, 0.5, outer=2.0)
    bp = barrier_params(2, op.lam, op.Lam, 1.0, 2.0, data)
    assert bp.A_hat > 2 * op.Lam / (2 * op.lam)
    rep = check_barrier(op, f, bp, data, 1.0, h=1 / 8)
    assert rep["passed"] and rep["collar_nodes"] > 0


def test_barrier_hessian_matches_finite_differences():
    op = make_operator("laplace2d")
    data = {"F_plus": 0.0, "F_minus": 0.0, "inf_f": 0.0, "sup_f": 0.0, "outer": 1.0}
    bp = barrier_params(2, 1.0, 1.0, 1.0, 2.0, data)
    x = np.array([[1.3, -0.4]])
    e = 1e-4
    H = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            di, dj = np.eye(2)[i] * e, np.eye(2)[j] * e
            H[i, j] = (bp.value(x + di + dj) - bp.value(x + di - dj) - bp.value(x - di + dj)
                       + bp.value(x - di - dj))[0] / (4 * e * e)
    np.testing.assert_allclose(bp.hessian(x)[0], H, rtol=1e-5)


def test_barrier_infeasible():
    data = {"F_plus": 1.0, "F_minus": -1.0, "inf_f": 0.0, "sup_f": 0.0, "outer": 1.0}
    with pytest.raises(SolverError, match="infeasible"):
        barrier_params(3, 1.0, 1.0, 1.0, 200.0, data)
    with pytest.raises(OperatorError):
        barrier_params(3, 2.0, 1.0, 1.0, 2.0, data)


@pytest.fixture(scope="module")
def quadratic_annulus():
    A = np.diag([0.2, 0.1, -0.3])
    op, prob, far = _laplace_problem(R_out=8.0, A=A, c=0.5)
    return op, far, exterior_solve(prob, SolverConfig(tol=1e-9))


def test_asymptotic_extraction_recovers_profile(quadratic_annulus):
    op, far, u = quadratic_annulus
    dec = asymptotic_extraction(u, op)
    assert np.abs(dec.A - far.A).max() <= 1e-3
    assert np.abs(dec.b).max() <= 1e-8
    assert dec.extra["decay"]["exponent"] <= -0.8
    assert dec.extra["envelope_ok"]


def test_asymptotic_extraction_rejects_noise(quadratic_annulus):
    op, far, u = quadratic_annulus
    rng = np.random.default_rng(0)
    noisy = dataclasses.replace(u, values=u.values + 0.2 * rng.choice([-1, 1], u.values.size))
    with pytest.raises(DecompositionFailed, match="no admissible asymptotic profile"):
        asymptotic_extraction(noisy, op)


def test_problem_validation():
    op = make_operator("laplace3d")
    g = TorusGrid(3, 8)
    z = TorusField(g, np.zeros(g.shape))
    far = Decomposition(np.zeros((3, 3)), np.zeros(3), 0.0, z)
    with pytest.raises(GridError):
        AnnulusProblem(op, z, 1.0, 3.0, lambda x: x[:, 0], far)
    assert math.isfinite(decay_exponent(3, 1, 2))

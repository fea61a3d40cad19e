import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnhom.errors import CriterionViolated, GridError
from fnhom.homogenized import HbarEvaluator, recession_root
from fnhom.lattice import LatticeDomain
from fnhom.liouville import (BoxField, Decomposition, blow_down, entire_witness,
                             fit_decomposition, second_difference_bound)
from fnhom.presets import make_datum, make_operator
from fnhom.torus import TorusGrid, project_zero_mean


@pytest.fixture(scope="module")
def smooth_witness():
    op = make_operator("smooth2d")
    g = TorusGrid(2, 16)
    f = make_datum("cos", g)
    ev = HbarEvaluator(op, f)
    base = np.array([[1.0, 0.4], [0.4, -0.7]])
    t = recession_root(ev, float(f.values.mean()), base=base)
    A = base + t * np.eye(2)
    b = np.array([0.3, -0.2])
    dec = entire_witness(op, f, A, b, 1.5, g, R=4, evaluator=ev)
    return op, f, g, A, b, dec


def test_witness_solves_pde(smooth_witness):
    *_, dec = smooth_witness
    assert dec.residual_sup <= 1e-9


def test_off_surface_is_violated(smooth_witness):
    op, f, g, A, b, _ = smooth_witness
    with pytest.raises(CriterionViolated) as info:
        entire_witness(op, f, A + 0.1 * np.eye(2), b, 0.0, g, R=2)
    assert abs(info.value.witness["gap"]) >= 0.1


def test_fit_recovers_witness(smooth_witness):
    op, f, g, A, b, dec = smooth_witness
    fit = fit_decomposition(dec.extra["field"], op, f, g, margin=1)
    assert np.linalg.norm(fit.A - A) <= 1e-10
    assert np.abs(fit.b - b).max() <= 1e-10
    assert fit.c == pytest.approx(1.5, abs=1e-10)
    assert np.abs(fit.v.values - dec.v.values).max() <= 1e-10
    assert fit.ok and fit.extra["pde_residual"] <= 1e-9


def test_second_difference_equality_on_witness(smooth_witness):
    *_, A, b, dec = smooth_witness
    u = dec.extra["field"]
    for e in [(1, 0), (0, 1), (1, 1), (1, -1)]:
        rep = second_difference_bound(u, A, e)
        assert rep.passed and abs(rep.gap) <= 1e-10


def test_blow_down_orders(smooth_witness):
    op, f, g, A, b, dec = smooth_witness
    u = dec.extra["field"]
    c = blow_down(u, [1, 2, 4], A)
    assert c.order < -0.9
    with pytest.raises(ValueError):
        blow_down(u, [4, 2], A)


def test_blow_down_exact_quadratic_is_degenerate():
    dom = LatticeDomain.box(2, 8, 2)
    A = np.diag([1.0, 2.0])
    x = dom.points()
    u = BoxField(dom, (0.5 * np.einsum("ki,ij,kj->k", x, A, x)).reshape(dom.shape))
    c = blow_down(u, [1, 2], A)
    assert c.degenerate


def test_fit_margin_too_large():
    dom = LatticeDomain.box(2, 8, 2)
    u = BoxField(dom, np.zeros(dom.shape))
    with pytest.raises(GridError):
        fit_decomposition(u, margin=2)


@settings(max_examples=15)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.lists(st.floats(-2, 2), min_size=2, max_size=2),
       st.floats(-5, 5), st.integers(0, 1000))
def test_fit_round_trip_synthetic(a, b, c, seed):
    # any quadratic + linear + periodic field is recovered exactly (no PDE involved)
    g = TorusGrid(2, 8)
    A = np.array([[a[0], a[1]], [a[1], a[2]]])
    rng = np.random.default_rng(seed)
    v = project_zero_mean(g.sample(lambda p: rng.standard_normal(len(p))))
    dec = Decomposition(A, np.array(b), c, v)
    dom = LatticeDomain.box(3, 8, 2)
    u = BoxField(dom, dec.evaluate(dom))
    fit = fit_decomposition(u, margin=1)
    assert np.abs(fit.A - A).max() <= 1e-9
    assert np.abs(fit.b - np.array(b)).max() <= 1e-8
    assert np.abs(fit.v.values - v.values).max() <= 1e-8
    assert fit.c == pytest.approx(c, abs=1e-8)

import numpy as np
import pytest

from fnhom.cell import SolverConfig
from fnhom.dirichlet import DomainScheme, solve_dirichlet
from fnhom.errors import GridError
from fnhom.lattice import LatticeDomain
from fnhom.liouville import BoxProblem, active_box, dirichlet_solve
from fnhom.presets import make_operator
from fnhom.torus import TorusField, TorusGrid


def test_torus_index_matches_coordinates():
    dom = LatticeDomain.box(2, 8, 2)
    g = TorusGrid(2, 8)
    x = dom.points()
    y = g.points()[dom.torus_index()]
    d = x - y
    np.testing.assert_allclose(d, np.round(d), atol=1e-12)


def test_box_requires_whole_periods():
    with pytest.raises(GridError):
        LatticeDomain.box(1.5, 8, 2)
    with pytest.raises(GridError):
        LatticeDomain(7, (0,), (3,))


def test_mirror_neighbours_reflect():
    dom = LatticeDomain(8, (0,), (5,), mirror=(True,))
    plus, minus = dom.neighbours(np.array([[1]]))
    assert minus[0, 0] == 0  # k=-1 reflects onto k=0
    assert plus[0, 5] == -1


def test_laplace_box_exact_on_harmonic_quadratic():
    op = make_operator("laplace2d")
    f = TorusField(TorusGrid(2, 8), np.zeros((8, 8)))
    g = lambda p: p[:, 0] ** 2 - p[:, 1] ** 2 + 0.3 * p[:, 0] * p[:, 1]  # noqa: E731
    u = dirichlet_solve(BoxProblem(op, f, 1, g))
    dom = u.domain
    np.testing.assert_allclose(u.flat, g(dom.points()), atol=1e-10)


def test_bellman_box_exact_on_quadratic():
    op = make_operator("bellman")
    grid = TorusGrid(2, 8)
    A = np.array([[0.5, -0.2], [-0.2, 1.0]])
    from fnhom.scheme import discretize

    # scheme-exact datum: f = min_b tr(a_b A)
    f = TorusField(grid, discretize(op, grid).constants(A).min(axis=0).reshape(grid.shape))
    quad = lambda p: 0.5 * np.einsum("ki,ij,kj->k", p, A, p)  # noqa: E731
    u = dirichlet_solve(BoxProblem(op, f, 2, quad))
    np.testing.assert_allclose(u.flat, quad(u.domain.points()), atol=1e-10)


def test_thin_boundary_layer_rejected():
    from fnhom.operators import LinearOperator

    op = LinearOperator(np.array([[1.0, 1.6], [1.6, 4.0]]), 0.2, 5.0)  # needs width-2 moves
    dom = LatticeDomain.box(1, 8, 2)
    with pytest.raises(GridError, match="too thin"):
        DomainScheme(op, dom, active_box(dom, 1))


def test_residual_reported():
    op = make_operator("smooth2d")
    grid = TorusGrid(2, 8)
    f = TorusField(grid, np.zeros(grid.shape))
    dom = LatticeDomain.box(1, 8, 2)
    sch = DomainScheme(op, dom, active_box(dom, 2))
    g = np.cos(dom.points()[:, 0])
    out = solve_dirichlet(sch, g, f.flat[sch.tidx[sch.rows]], SolverConfig())
    assert out.converged and sch.residual(out.u, np.zeros(len(sch.rows))) <= 1e-9

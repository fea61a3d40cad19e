import numpy as np
import pytest
from hypothesis import given, strategies as st

from fnhom.errors import GridError
from fnhom.torus import (DirectionSet, TorusField, TorusGrid, compact_directions,
                         default_directions, discrete_hessian, load_field, mean,
                         project_zero_mean, save_field, second_difference)


def test_grid_nodes_are_cell_centred():
    g = TorusGrid(2, 4)
    np.testing.assert_allclose(g.axis(), [-0.375, -0.125, 0.125, 0.375])
    assert g.points().shape == (16, 2)
    assert g.size == 16 and g.spacing == 0.25


def test_grid_rejects_small_res():
    with pytest.raises(GridError):
        TorusGrid(2, 2)


def test_zero_mean_flag_is_validated():
    g = TorusGrid(1, 8)
    with pytest.raises(GridError):
        TorusField(g, np.ones(8), zero_mean=True)
    TorusField(g, np.arange(8) - 3.5, zero_mean=True)


def test_values_are_read_only():
    f = TorusGrid(1, 8).sample(lambda p: p[:, 0])
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_constant_field_mean():
    g = TorusGrid(3, 4)
    assert mean(TorusField(g, np.full(g.shape, 2.5))) == 2.5


def test_project_zero_mean_of_zero_mean_is_identity():
    g = TorusGrid(2, 8)
    f = g.sample(lambda p: np.sin(2 * np.pi * p[:, 0]))
    np.testing.assert_allclose(project_zero_mean(f).values, f.values, atol=1e-15)


@given(st.lists(st.floats(-1e6, 1e6), min_size=16, max_size=16))
def test_project_zero_mean_property(vals):
    g = TorusGrid(1, 16)
    p = project_zero_mean(TorusField(g, np.array(vals)))
    assert abs(p.values.mean()) <= 1e-12 * max(1.0, np.abs(p.values).max())


def test_second_difference_of_cosine():
    # oracle: (2cos(2 pi h) - 2)/h^2 * cos
    g = TorusGrid(1, 32)
    f = g.sample(lambda p: np.cos(2 * np.pi * p[:, 0]))
    h = g.spacing
    expect = (2 * np.cos(2 * np.pi * h) - 2) / h ** 2 * f.values
    np.testing.assert_allclose(second_difference(f, [1]).values, expect, atol=1e-10)


def test_period_second_difference_vanishes_on_torus():
    g = TorusGrid(2, 8)
    f = g.sample(lambda p: np.sin(2 * np.pi * p[:, 0]) * np.cos(2 * np.pi * p[:, 1]))
    assert np.all(second_difference(f, [1, 1], mode="periods").values == 0)


def test_degenerate_direction_rejected():
    with pytest.raises(GridError, match="degenerate direction"):
        DirectionSet(np.array([[1, 0], [0, 0]]))
    with pytest.raises(GridError):
        second_difference(TorusGrid(2, 8).sample(lambda p: p[:, 0]), [0, 0])


def test_direction_set_sizes():
    assert len(default_directions(2)) == 8
    assert len(default_directions(3)) == 13
    assert len(compact_directions(2)) == 4


def test_discrete_hessian_of_trig_field():
    g = TorusGrid(2, 64)
    f = g.sample(lambda p: np.sin(2 * np.pi * p[:, 0]) * np.sin(2 * np.pi * p[:, 1]))
    H = discrete_hessian(f, compact_directions(2))
    x = g.points()
    s0, s1 = np.sin(2 * np.pi * x[:, 0]), np.sin(2 * np.pi * x[:, 1])
    c0, c1 = np.cos(2 * np.pi * x[:, 0]), np.cos(2 * np.pi * x[:, 1])
    k2 = (2 * np.pi) ** 2
    exact = np.stack([np.stack([-k2 * s0 * s1, k2 * c0 * c1], -1),
                      np.stack([k2 * c0 * c1, -k2 * s0 * s1], -1)], -2).reshape(64, 64, 2, 2)
    assert np.abs(H - exact).max() < 0.02 * k2  # O(h^2)
    np.testing.assert_array_equal(H, np.swapaxes(H, -1, -2))


def test_discrete_hessian_of_quadratic_is_exact_in_interior():
    h = 0.1
    ax = np.arange(10) * h
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    A = np.array([[1.0, 0.3], [0.3, -2.0]])
    u = 0.5 * (A[0, 0] * X ** 2 + 2 * A[0, 1] * X * Y + A[1, 1] * Y ** 2)
    H = discrete_hessian(u, compact_directions(2), h=h, periodic=False)
    inner = H[1:-1, 1:-1]
    np.testing.assert_allclose(inner, np.broadcast_to(A, inner.shape), atol=1e-10)
    assert np.isnan(H[0, 0]).all()


def test_discrete_hessian_rejects_wide_stencil():
    f = TorusGrid(2, 4).sample(lambda p: p[:, 0])
    with pytest.raises(GridError, match="too wide"):
        discrete_hessian(f, default_directions(2))


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_field_io_round_trip(tmp_path, suffix):
    g = TorusGrid(2, 8)
    f = project_zero_mean(g.sample(lambda p: np.exp(p[:, 0]) * np.sin(3 * p[:, 1])))
    path = tmp_path / f"f{suffix}"
    save_field(path, f)
    back = load_field(path)
    assert back.grid == g and back.zero_mean
    np.testing.assert_array_equal(back.values, f.values)

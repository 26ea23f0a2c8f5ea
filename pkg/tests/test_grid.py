"""Torus geometry: wrapping, the two metrics, gradients, and grid norms."""

from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torus_schrodinger.grid import (
    GridFunction,
    TorusGrid,
    flat_distance,
    f_lip_norm,
    gradient,
    lip_norm,
    pairwise_flat_distance,
    pairwise_sine_distance,
    sine_distance,
    sup_norm,
    wrap,
)


def test_grid_validation() -> None:
    with pytest.raises(ValueError):
        TorusGrid(0, 1.0, 8)
    with pytest.raises(ValueError):
        TorusGrid(1, -1.0, 8)
    with pytest.raises(ValueError):
        TorusGrid(1, 1.0, 3)


def test_grid_basic_quantities() -> None:
    grid = TorusGrid(2, 2.0, 8)
    assert grid.h == 0.25
    assert grid.node_weight == 0.0625
    assert grid.n_nodes == 64
    assert grid.shape == (8, 8)
    nodes = grid.nodes()
    assert nodes.shape == (64, 2)
    np.testing.assert_allclose(nodes[0], [0.0, 0.0])
    # C-order: the second node advances the last axis
    np.testing.assert_allclose(nodes[1], [0.0, 0.25])
    assert np.all(nodes >= 0.0) and np.all(nodes < 2.0)


def test_wrap_examples() -> None:
    g1 = TorusGrid(1, 1.0, 8)
    np.testing.assert_allclose(wrap(g1, np.array([0.3])), [0.3])
    np.testing.assert_allclose(wrap(g1, np.array([-0.25])), [0.75])
    g2 = TorusGrid(2, 2.0, 8)
    np.testing.assert_allclose(wrap(g2, np.array([2.5, -1.0])), [0.5, 1.0])


def test_sine_distance_examples() -> None:
    g1 = TorusGrid(1, 1.0, 8)
    x = np.array([0.3])
    assert sine_distance(g1, x, x) == 0.0
    assert sine_distance(g1, np.array([0.0]), np.array([0.5])) == pytest.approx(1.0)
    g2 = TorusGrid(2, 2.0, 8)
    got = sine_distance(g2, np.array([0.0, 0.0]), np.array([0.5, 0.5]))
    assert got == pytest.approx(2.0 * math.sqrt(2.0 * math.sin(math.pi / 4) ** 2))


def test_flat_distance_examples() -> None:
    g1 = TorusGrid(1, 1.0, 8)
    assert flat_distance(g1, np.array([0.2]), np.array([0.2])) == 0.0
    assert flat_distance(g1, np.array([0.0]), np.array([0.75])) == pytest.approx(0.25)


def test_distances_are_wrap_invariant() -> None:
    grid = TorusGrid(2, 1.5, 8)
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1.5, size=(20, 2))
    y = rng.uniform(0, 1.5, size=(20, 2))
    shift = 1.5 * rng.integers(-3, 4, size=(20, 2))
    np.testing.assert_allclose(
        sine_distance(grid, x, y), sine_distance(grid, wrap(grid, x + shift), y),
        atol=1e-12,
    )
    np.testing.assert_allclose(
        flat_distance(grid, x, y), flat_distance(grid, wrap(grid, x + shift), y),
        atol=1e-12,
    )


@given(
    d=st.integers(1, 3),
    L=st.floats(0.25, 8.0),
    seed=st.integers(0, 2**32 - 1),
)
@settings(max_examples=60, deadline=None)
def test_metric_equivalence_property(d: int, L: float, seed: int) -> None:
    """2*flat <= sine <= pi*flat for arbitrary point pairs."""
    grid = TorusGrid(d, L, 8)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, L, size=(32, d))
    y = rng.uniform(0, L, size=(32, d))
    delta = sine_distance(grid, x, y)
    dist = flat_distance(grid, x, y)
    assert np.all(2.0 * dist <= delta * (1 + 1e-12) + 1e-15)
    assert np.all(delta <= math.pi * dist * (1 + 1e-12) + 1e-15)


def test_sine_distance_is_a_metric_exhaustively() -> None:
    grid = TorusGrid(2, 1.0, 6)
    delta = pairwise_sine_distance(grid)
    assert np.allclose(delta, delta.T)
    assert np.allclose(np.diag(delta), 0.0)
    assert np.all(delta[~np.eye(grid.n_nodes, dtype=bool)] > 0)
    # triangle inequality over all node triples, vectorized over k
    m = grid.n_nodes
    lhs = delta[:, None, :]  # d(i, k)
    rhs = delta[:, :, None] + delta[None, :, :]  # d(i, j) + d(j, k)
    assert np.all(lhs <= rhs + 1e-12)


def test_sine_distance_max_at_antipodal_pairs() -> None:
    grid = TorusGrid(2, 1.0, 8)
    delta = pairwise_sine_distance(grid)
    assert delta.max() == pytest.approx(grid.diameter_sine, rel=1e-14)
    x = np.array([0.25, 0.5])
    y = wrap(grid, x + 0.5)  # componentwise antipodal point
    assert sine_distance(grid, x, y) == pytest.approx(grid.diameter_sine, rel=1e-14)


def test_pairwise_matches_pointwise() -> None:
    grid = TorusGrid(2, 1.25, 5)
    nodes = grid.nodes()
    delta = pairwise_sine_distance(grid)
    dist = pairwise_flat_distance(grid)
    i, j = 3, 17
    assert delta[i, j] == pytest.approx(sine_distance(grid, nodes[i], nodes[j]))
    assert dist[i, j] == pytest.approx(flat_distance(grid, nodes[i], nodes[j]))


def test_gridfunction_construction_and_arithmetic() -> None:
    grid = TorusGrid(1, 1.0, 8)
    f = GridFunction.from_callable(grid, lambda x: np.sin(2 * np.pi * x[..., 0]))
    g = GridFunction.zeros(grid)
    assert f.values.shape == (8,)
    assert np.all((f + g).values == f.values)
    assert np.all((2.0 * f - f).values == pytest.approx(f.values))
    assert np.all((-f).values == -f.values)
    with pytest.raises(ValueError):
        GridFunction(grid, np.zeros(7))
    with pytest.raises(ValueError):
        GridFunction(grid, np.full(8, np.nan))


def test_gradient_of_constant_is_zero() -> None:
    grid = TorusGrid(2, 1.0, 8)
    f = GridFunction(grid, np.full(grid.shape, 3.7))
    for method in ("spectral", "central"):
        grads = gradient(f, method=method)
        assert np.allclose(grads, 0.0, atol=1e-14)


def test_spectral_gradient_exact_on_fourier_mode() -> None:
    grid = TorusGrid(1, 2.0, 16)
    x = grid.axis_coords
    f = GridFunction(grid, np.sin(2 * np.pi * x / grid.L))
    expected = (2 * np.pi / grid.L) * np.cos(2 * np.pi * x / grid.L)
    got = gradient(f, method="spectral")[0]
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12)


def test_spectral_gradient_exact_on_2d_mixed_mode() -> None:
    grid = TorusGrid(2, 1.0, 16)
    X = grid.nodes().reshape(grid.shape + (2,))
    f = GridFunction(grid, np.sin(2 * np.pi * X[..., 0]) * np.cos(4 * np.pi * X[..., 1]))
    grads = gradient(f, method="spectral")
    expected0 = 2 * np.pi * np.cos(2 * np.pi * X[..., 0]) * np.cos(4 * np.pi * X[..., 1])
    expected1 = -4 * np.pi * np.sin(2 * np.pi * X[..., 0]) * np.sin(4 * np.pi * X[..., 1])
    np.testing.assert_allclose(grads[0], expected0, atol=1e-11)
    np.testing.assert_allclose(grads[1], expected1, atol=1e-11)


def test_central_gradient_is_second_order() -> None:
    """Halving h cuts the central-difference error by about 4x."""

    def err(N: int) -> float:
        grid = TorusGrid(1, 1.0, N)
        x = grid.axis_coords
        f = GridFunction(grid, np.sin(2 * np.pi * x) + 0.3 * np.cos(6 * np.pi * x))
        exact = 2 * np.pi * np.cos(2 * np.pi * x) - 1.8 * np.pi * np.sin(6 * np.pi * x)
        return float(np.max(np.abs(gradient(f, method="central")[0] - exact)))

    ratio = err(64) / err(128)
    assert 3.5 < ratio < 4.5


def test_norms_of_constant_vanish() -> None:
    grid = TorusGrid(1, 1.0, 16)
    f = GridFunction(grid, np.full(grid.shape, -1.25))
    fb = SimpleNamespace(f=lambda r: r)
    assert sup_norm(f - GridFunction(grid, np.full(grid.shape, -1.25))) == 0.0
    assert lip_norm(f) == 0.0
    assert lip_norm(f, method="pairs") == 0.0
    assert f_lip_norm(f, fb) == 0.0


def test_lip_norm_of_sine_close_to_analytic() -> None:
    grid = TorusGrid(1, 1.0, 256)
    x = grid.axis_coords
    f = GridFunction(grid, np.sin(2 * np.pi * x))
    assert lip_norm(f) == pytest.approx(2 * np.pi, rel=0.01)
    assert lip_norm(f, method="pairs") == pytest.approx(2 * np.pi, rel=0.01)
    assert lip_norm(f, method="central") == pytest.approx(2 * np.pi, rel=0.01)


def test_f_lip_norm_with_identity_matches_sine_pairs_norm() -> None:
    grid = TorusGrid(1, 1.0, 32)
    rng = np.random.default_rng(3)
    f = GridFunction(grid, rng.standard_normal(grid.shape))
    fb = SimpleNamespace(f=lambda r: r)
    delta = pairwise_sine_distance(grid)
    diff = np.abs(f.flat[:, None] - f.flat[None, :])
    mask = delta >= grid.h / 2
    expected = float(np.max(diff[mask] / delta[mask]))
    assert f_lip_norm(f, fb) == pytest.approx(expected, rel=1e-14)


def test_norm_sandwich_between_lip_and_f_lip() -> None:
    """(1/pi)*lip <= f_lip <= lip/(2*C) for the zero-drift comparison function."""
    from torus_schrodinger.rates import modulus_constant, rate_triplet

    grid = TorusGrid(1, 1.0, 64)
    x = grid.axis_coords
    f = GridFunction(grid, 0.6 * np.sin(2 * np.pi * x) + 0.2 * np.cos(4 * np.pi * x))
    fb = rate_triplet(modulus_constant(0.0, grid.L, grid.d))
    lip = lip_norm(f, method="pairs")
    weighted = f_lip_norm(f, fb)
    assert lip / math.pi <= weighted * (1 + 1e-12)
    assert weighted <= lip / (2 * fb.C) * (1 + 1e-12)


def test_f_lip_norm_value_for_benchmark_sine() -> None:
    """For a*sin(2*pi*x) on L=1 the zero-drift weighted norm is 2a/f0(1) = 2.4a."""
    from torus_schrodinger.rates import modulus_constant, rate_triplet

    grid = TorusGrid(1, 1.0, 128)
    x = grid.axis_coords
    fb = rate_triplet(modulus_constant(0.0, 1.0, 1))
    for a in (0.5, 0.75):
        f = GridFunction(grid, a * np.sin(2 * np.pi * x))
        assert f_lip_norm(f, fb) == pytest.approx(2.4 * a, rel=1e-10)

"""Rate calculus: moduli, the comparison-function quadrature, and the bounds.

The quadrature is checked against every closed form that can be computed by
hand: the zero-drift triplet (lam = 2/(L^2 d), C = 1/2, cubic f), the
constant-modulus C, and the drift-free perturbed rate
lam = M^2/(e^{DM} - 1 - DM).  The structural inequalities are property
tests over random moduli.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torus_schrodinger.grid import GridFunction, TorusGrid
from torus_schrodinger.rates import (
    ExplicitBounds,
    Modulus,
    contraction_constants,
    explicit_bounds,
    modulus_constant,
    modulus_tabulated,
    modulus_trig,
    perturbation_M,
    perturbed,
    rate_triplet,
    small_time_asymptotics,
    triplet_defects,
    _cumulative_simpson,
)


# ---------------------------------------------------------------------------
# quadrature helper
# ---------------------------------------------------------------------------


def test_cumulative_simpson_against_analytic_antiderivative() -> None:
    n = 512
    h = 2.0 / n
    r = np.arange(n + 1) * h
    got = _cumulative_simpson(np.cos(3.0 * r), h)
    np.testing.assert_allclose(got, np.sin(3.0 * r) / 3.0, atol=5e-10)


def test_cumulative_simpson_polynomial_exactness() -> None:
    n = 8
    h = 0.5
    r = np.arange(n + 1) * h
    # the half-panel (5, 8, -1)/12 rule is exact through quadratics ...
    y2 = 3.0 * r**2 - r + 1.0
    np.testing.assert_allclose(
        _cumulative_simpson(y2, h), r**3 - 0.5 * r**2 + r, rtol=1e-14
    )
    # ... and the even-index entries (pure Simpson pairs) even for cubics
    y3 = 2.0 * r**3 - r + 1.0
    got = _cumulative_simpson(y3, h)
    np.testing.assert_allclose(
        got[0::2], (0.5 * r**4 - 0.5 * r**2 + r)[0::2], rtol=1e-14
    )


def test_cumulative_simpson_rejects_odd_interval_count() -> None:
    with pytest.raises(ValueError):
        _cumulative_simpson(np.zeros(4), 0.1)  # 3 intervals


# ---------------------------------------------------------------------------
# moduli
# ---------------------------------------------------------------------------


def test_constant_modulus_values_and_rejection() -> None:
    m = modulus_constant(-1.0, L=1.0, d=1)
    r = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(m.smooth(r), -1.0)
    m0 = modulus_constant(0.0, L=2.0, d=4)
    assert m0.D == 4.0
    np.testing.assert_array_equal(m0.smooth(r), 0.0)
    with pytest.raises(ValueError):
        modulus_constant(0.5, L=1.0, d=1)


def test_perturbed_modulus_is_base_minus_4M_over_r() -> None:
    m = perturbed(modulus_constant(-1.0, L=1.0, d=1), M=0.5)
    r = np.array([0.25, 0.5, 1.0])
    np.testing.assert_allclose(m.kappa(r), -1.0 - 4.0 * 0.5 / r)
    np.testing.assert_allclose(m.r_times_kappa(r), -r - 2.0)
    assert m.r_times_kappa(np.array([0.0])) == pytest.approx(-2.0)
    with pytest.raises(ValueError):
        perturbed(m, -0.1)


def test_perturbed_drops_accumulate() -> None:
    base = modulus_constant(0.0, L=1.0, d=1)
    m = perturbed(perturbed(base, 0.5), 0.25)
    assert m.drop == 0.75


def test_trig_modulus_d1_is_constant() -> None:
    m = modulus_trig([6.0], [0.0], L=1.0)
    r = np.linspace(0.0, 1.0, 9)
    np.testing.assert_allclose(m.smooth(r), -6.0)


def test_trig_modulus_amplitude_mixes_both_coefficients() -> None:
    # sigma = hypot(3, 4) = 5 regardless of how it splits between sin and cos
    m1 = modulus_trig([3.0], [4.0], L=2.0)
    m2 = modulus_trig([5.0], [0.0], L=2.0)
    r = np.linspace(0.0, 2.0, 7)
    np.testing.assert_allclose(m1.smooth(r), m2.smooth(r))


def test_trig_modulus_d2_piecewise_values() -> None:
    # sigma = (2, 1): constant -2 up to r = L, then -(2 + (r^2 - 1))/r^2
    m = modulus_trig([2.0, 0.0], [0.0, 1.0], L=1.0)
    assert m.smooth(np.array([0.0])) == pytest.approx(-2.0)
    assert m.smooth(np.array([0.7])) == pytest.approx(-2.0)
    assert m.smooth(np.array([1.0])) == pytest.approx(-2.0)
    r = 1.2
    assert m.smooth(np.array([r])) == pytest.approx(-(2.0 + (r**2 - 1.0)) / r**2)
    assert m.smooth(np.array([math.sqrt(2.0)])) == pytest.approx(-1.5)


def test_trig_modulus_sorts_axis_amplitudes() -> None:
    a = modulus_trig([1.0, 2.0], [0.0, 0.0], L=1.0)
    b = modulus_trig([2.0, 1.0], [0.0, 0.0], L=1.0)
    r = np.linspace(0.0, math.sqrt(2.0), 11)
    np.testing.assert_allclose(a.smooth(r), b.smooth(r))


def test_tabulated_modulus_interp_and_validation() -> None:
    m = modulus_tabulated([0.0, 0.5, 1.0], [-2.0, -1.0, -1.0], D=1.0)
    assert m.smooth(np.array([0.25])) == pytest.approx(-1.5)
    assert m.smooth(np.array([0.9])) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        modulus_tabulated([0.0, 1.0], [0.5, -1.0], D=1.0)
    with pytest.raises(ValueError):
        modulus_tabulated([0.0, 0.0], [-1.0, -1.0], D=1.0)


# ---------------------------------------------------------------------------
# closed-form anchors
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("L,d", [(1.0, 1), (2.0, 1), (1.0, 2), (0.5, 3)])
def test_zero_drift_closed_form(L: float, d: int) -> None:
    t = rate_triplet(modulus_constant(0.0, L, d))
    D = L * math.sqrt(d)
    assert t.lam == pytest.approx(2.0 / (L**2 * d), rel=1e-10)
    assert t.C == pytest.approx(0.5, rel=1e-10)
    assert t.f_values[-1] == pytest.approx(5.0 * D / 6.0, rel=1e-10)
    r = np.linspace(0.0, D, 37)
    np.testing.assert_allclose(
        t.f(r), r - r**3 / (6.0 * L**2 * d), rtol=1e-10, atol=1e-12
    )


@pytest.mark.parametrize("alpha", [-0.5, -2.0, -6.0])
def test_constant_modulus_closed_form_C_and_rate_bound(alpha: float) -> None:
    L, d = 1.0, 1
    t = rate_triplet(modulus_constant(alpha, L, d))
    D2 = L**2 * d
    assert t.C == pytest.approx(math.exp(alpha * D2 / 8.0) / 2.0, rel=1e-10)
    eta = math.exp(abs(alpha) * D2 / 8.0)
    assert t.lam >= (abs(alpha) / 4.0) / (eta - 1.0)
    np.testing.assert_allclose(
        t.phi, np.exp(alpha * t.r**2 / 8.0), rtol=1e-12, atol=1e-14
    )


@pytest.mark.parametrize(
    "M,L,d", [(0.5, 1.0, 1), (1.8, 1.0, 1), (3.0, 2.0, 1), (1.0, 1.0, 2)]
)
def test_perturbed_zero_drift_rate_closed_form(M: float, L: float, d: int) -> None:
    t = rate_triplet(perturbed(modulus_constant(0.0, L, d), M))
    D = L * math.sqrt(d)
    exact = M**2 / (math.expm1(D * M) - D * M)
    assert t.lam == pytest.approx(exact, rel=1e-8)
    assert t.C == pytest.approx(math.exp(-M * D) / 2.0, rel=1e-10)


def test_quadrature_node_doubling_is_converged() -> None:
    m = perturbed(modulus_constant(-1.5, 1.0, 2), 0.8)
    lam_1 = rate_triplet(m, quad_nodes=1024).lam
    lam_2 = rate_triplet(m, quad_nodes=2048).lam
    assert abs(lam_2 - lam_1) / lam_1 < 1e-8


def test_rate_triplet_validation() -> None:
    m = modulus_constant(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        rate_triplet(m, quad_nodes=100)
    with pytest.raises(ValueError):
        rate_triplet(m, quad_nodes=1025)
    # an absurdly strong modulus underflows phi and blows up Phi/phi
    with pytest.raises(ValueError):
        rate_triplet(modulus_constant(-1e7, 1.0, 1))


# ---------------------------------------------------------------------------
# structural inequalities
# ---------------------------------------------------------------------------


@given(
    alpha=st.floats(-8.0, 0.0),
    M=st.floats(0.0, 3.0),
    L=st.one_of(st.just(1.0), st.floats(0.5, 2.0)),
    d=st.integers(1, 3),
)
@settings(max_examples=25, deadline=None)
def test_comparison_function_inequalities(
    alpha: float, M: float, L: float, d: int
) -> None:
    t = rate_triplet(perturbed(modulus_constant(alpha, L, d), M), quad_nodes=512)
    r = t.r
    # sandwich between C*r and r, plus the derivative bounds
    assert np.all(t.C * r <= t.f_values + 1e-12)
    assert np.all(t.f_values <= r + 1e-12)
    assert np.all(t.C <= t.fprime_values + 1e-12)
    assert np.all(t.fprime_values <= 1.0 + 1e-12)
    # differential inequality with the stated slack
    lhs = t.fsecond_values - 0.25 * t.modulus.r_times_kappa(r) * t.fprime_values
    assert np.all(lhs <= -0.5 * t.lam * t.f_values + 1e-8)
    # concavity: finite-difference slopes nonincreasing
    slopes = np.diff(t.f_values)
    assert np.all(np.diff(slopes) <= 1e-12)
    # integral sandwich Phi/2 <= f <= Phi
    assert np.all(0.5 * t.Phi <= t.f_values + 1e-12)
    assert np.all(t.f_values <= t.Phi + 1e-12)


def test_rate_and_C_shrink_with_stronger_modulus() -> None:
    base = rate_triplet(modulus_constant(-0.5, 1.0, 1))
    worse = rate_triplet(modulus_constant(-2.0, 1.0, 1))
    assert worse.lam < base.lam
    assert worse.C < base.C
    pert = rate_triplet(perturbed(modulus_constant(-0.5, 1.0, 1), 1.0))
    assert pert.lam < base.lam
    assert pert.C < base.C


def test_perturbation_only_shrinks_f() -> None:
    t = rate_triplet(modulus_constant(-1.0, 1.0, 1))
    tbar = rate_triplet(perturbed(modulus_constant(-1.0, 1.0, 1), 0.7))
    assert np.all(tbar.f_values <= t.f_values + 1e-12)
    assert np.all(t.f_values <= t.r + 1e-12)


def test_triplet_defects_stay_at_quadrature_rounding() -> None:
    moduli = (
        modulus_constant(0.0, 1.0, 1),
        modulus_constant(-2.0, 0.5, 2),
        modulus_trig([1.0], [0.5], L=1.0),
        perturbed(modulus_constant(0.0, 1.0, 1), 1.5),
    )
    for modulus in moduli:
        defects = triplet_defects(rate_triplet(modulus))
        assert set(defects) == {
            "sandwich_lower", "sandwich_upper", "slope_lower", "slope_upper", "ode"
        }
        assert max(defects.values()) <= 1e-8


def test_triplet_defects_flag_a_corrupted_triplet() -> None:
    t = rate_triplet(modulus_constant(0.0, 1.0, 1), quad_nodes=512)
    inflated = dataclasses.replace(t, f_values=1.2 * t.f_values)
    assert triplet_defects(inflated)["sandwich_upper"] > 1e-4
    tilted = dataclasses.replace(t, fprime_values=t.fprime_values + 0.05)
    assert triplet_defects(tilted)["slope_upper"] >= 0.05 - 1e-12
    lazy = dataclasses.replace(t, lam=4.0 * t.lam)  # claims a rate f can't support
    assert triplet_defects(lazy)["ode"] > 1e-2


# ---------------------------------------------------------------------------
# perturbation size M
# ---------------------------------------------------------------------------


def _benchmark_potentials(a: float = 0.75) -> tuple[GridFunction, GridFunction]:
    grid = TorusGrid(1, 1.0, 128)
    x = grid.axis_coords
    return (
        GridFunction(grid, a * np.sin(2 * np.pi * x)),
        GridFunction(grid, a * np.cos(2 * np.pi * x)),
    )


def test_perturbation_M_zero_potentials() -> None:
    grid = TorusGrid(1, 1.0, 16)
    zero = GridFunction.zeros(grid)
    t = rate_triplet(modulus_constant(0.0, 1.0, 1))
    assert perturbation_M(zero, zero, t, T=0.5) == 0.0


def test_perturbation_M_long_horizon_limit() -> None:
    U_mu, U_nu = _benchmark_potentials()
    t = rate_triplet(modulus_constant(0.0, 1.0, 1))
    M_inf = perturbation_M(U_mu, U_nu, t, T=1e6)
    assert M_inf == pytest.approx(2.4 * 0.75, rel=1e-9)


def test_perturbation_M_is_homogeneous_in_the_potentials() -> None:
    U_mu, U_nu = _benchmark_potentials(0.4)
    t = rate_triplet(modulus_constant(0.0, 1.0, 1))
    M1 = perturbation_M(U_mu, U_nu, t, T=0.5)
    M2 = perturbation_M(2.0 * U_mu, 2.0 * U_nu, t, T=0.5)
    assert M2 == 2.0 * M1


# ---------------------------------------------------------------------------
# assembled constants and closed-form bounds
# ---------------------------------------------------------------------------


def test_contraction_constants_on_benchmark() -> None:
    U_mu, U_nu = _benchmark_potentials()
    bundle = contraction_constants(
        U_mu, U_nu, modulus_constant(0.0, 1.0, 1), T=0.5
    )
    assert bundle.norm_mu == pytest.approx(1.8, rel=1e-9)
    assert bundle.norm_nu == pytest.approx(1.8, rel=1e-9)
    M = bundle.M
    assert M == pytest.approx(1.8 / (1.0 - math.exp(-math.pi**2)), rel=1e-9)
    lam_exact = M**2 / (math.expm1(M) - M)
    assert bundle.lam_bar == pytest.approx(lam_exact, rel=1e-8)
    assert 0.0 < bundle.gamma < 1.0
    assert bundle.gamma == pytest.approx(
        math.exp(-bundle.lam_bar * math.pi**2 * 0.5), rel=1e-12
    )
    # the two c_S conventions differ by the fixed factor sqrt(L)*pi/2
    assert bundle.c_S / bundle.c_S_sqrtL == pytest.approx(
        math.sqrt(1.0) * math.pi / 2.0, rel=1e-12
    )
    assert bundle.c_S == pytest.approx(1.0 / (2.0 * bundle.C_bar), rel=1e-12)


@pytest.mark.parametrize("alpha", [0.0, -1.0, -4.0])
@pytest.mark.parametrize("T", [0.1, 0.5, 2.0])
@pytest.mark.parametrize("amplitude", [0.0, 0.3, 0.75])
def test_closed_form_bounds_are_conservative(
    alpha: float, T: float, amplitude: float
) -> None:
    """The quadrature rate always beats the closed-form lower bound."""
    U_mu, U_nu = _benchmark_potentials(amplitude)
    bundle = contraction_constants(
        U_mu, U_nu, modulus_constant(alpha, 1.0, 1), T=T, quad_nodes=512
    )
    b = bundle.bounds
    assert math.log(bundle.gamma) <= b.log_gamma_bound + 1e-12
    assert bundle.lam_V >= b.rate_lower_bound * (1 - 1e-12)
    assert bundle.M <= b.M_upper_bound * (1 + 1e-12)
    # both c_S conventions are covered by the closed-form over-estimate
    assert bundle.c_S_sqrtL <= b.c_S_bound * (1 + 1e-12)


def test_explicit_bounds_values_alpha_zero() -> None:
    b = explicit_bounds(0.0, L=1.0, d=1, T=0.5, norm_mu=1.8, norm_nu=1.8)
    assert b.eta_D == 1.0
    assert b.rate_lower_bound == pytest.approx(2.0)
    Mhat = 1.8 / (1.0 - math.exp(-math.pi**2))
    assert b.M_upper_bound == pytest.approx(Mhat, rel=1e-14)
    assert b.log_gamma_bound == pytest.approx(
        -math.pi**2 * 0.5 * Mhat**2 * math.exp(-Mhat), rel=1e-14
    )
    assert b.c_S_bound == pytest.approx(
        2.0 / math.pi * math.exp(Mhat), rel=1e-14
    )


def test_explicit_bounds_values_alpha_negative() -> None:
    alpha, L, d, T = -2.0, 1.0, 1, 0.5
    b = explicit_bounds(alpha, L, d, T, norm_mu=0.5, norm_nu=1.0)
    eta = math.exp(2.0 / 8.0)
    rate = 0.5 / (eta - 1.0)
    Mhat = 1.0 / (1.0 - math.exp(-rate * math.pi**2 * T))
    assert b.eta_D == pytest.approx(eta, rel=1e-14)
    assert b.rate_lower_bound == pytest.approx(rate, rel=1e-14)
    assert b.log_gamma_bound == pytest.approx(
        -math.pi**2 * T * rate * math.exp(-Mhat), rel=1e-14
    )
    assert b.c_S_bound == pytest.approx(
        2.0 * eta / math.pi * math.exp(Mhat), rel=1e-14
    )
    with pytest.raises(ValueError):
        explicit_bounds(0.1, L, d, T, 0.0, 0.0)


def test_small_time_asymptotics_values() -> None:
    a = small_time_asymptotics(norm_mu=1.8, norm_nu=0.9, L=1.0, d=1, T=0.25)
    D_mu_nu = 1.8 / (2.0 * math.pi**2)
    assert a.D_mu_nu == pytest.approx(D_mu_nu, rel=1e-14)
    assert a.log_c_S0 == pytest.approx(D_mu_nu / 0.25, rel=1e-14)
    assert a.log_gamma0 == pytest.approx(
        -math.pi**2 * D_mu_nu**2 / 0.25 * math.exp(-D_mu_nu / 0.25), rel=1e-14
    )
    # deeper into the small-T regime the factor only becomes more extreme
    a2 = small_time_asymptotics(1.8, 0.9, 1.0, 1, T=0.05)
    assert a2.log_c_S0 > a.log_c_S0

"""Contraction-rate calculus for drifts with a weak-semiconvexity modulus.

A drift b = -grad V on the torus is summarized by a modulus kappa(r) <= 0
bounding how much the drift can push a pair of particles apart as a function
of their sine distance r.  From the modulus, a one-dimensional quadrature
builds a concave comparison function f on [0, D] (D = L*sqrt(d) is the sine
diameter) together with two constants:

* C in (0, 1/2]  with  C*r <= f(r) <= r   (f is equivalent to the identity),
* lam > 0        the exponential contraction rate in the weighted distance
                 E f(delta_t), which decays like exp(-lam * pi^2 * t).

The construction is

    phi(r) = exp( (1/4) * int_0^r s*kappa(s) ds ),
    Phi(r) = int_0^r phi,
    g(r)   = 1 - (int_0^r Phi/phi) / (2 * int_0^D Phi/phi),
    f(r)   = int_0^r phi*g,
    C      = phi(D)/2,
    lam    = 1 / int_0^D Phi/phi.

Time-dependent control drifts are absorbed by a perturbation kappa(r) - 4M/r
whose integrable singularity is handled in closed form: the contribution of
-4M/r to int_0^r s*kappa(s) ds is exactly -4*M*r, so the quadrature only ever
sees the smooth part of the modulus.

Closed-form anchors used by the tests: for kappa == 0 the construction gives
lam = 2/(L^2 d), C = 1/2 and f(r) = r - r^3/(6 L^2 d); for the drift-free
perturbed modulus -4M/r it gives lam = M^2 / (e^{D M} - 1 - D M).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import GridFunction, f_lip_norm

if TYPE_CHECKING:
    from numpy.typing import NDArray

__all__ = [
    "Modulus",
    "RateTriplet",
    "RateBundle",
    "ExplicitBounds",
    "SmallTimeAsymptotics",
    "modulus_constant",
    "modulus_trig",
    "modulus_tabulated",
    "perturbed",
    "rate_triplet",
    "perturbation_M",
    "contraction_constants",
    "explicit_bounds",
    "small_time_asymptotics",
]


@dataclass(frozen=True)
class Modulus:
    """Weak-semiconvexity modulus r -> kappa(r) on [0, D].

    The modulus is stored as a smooth part plus a nonnegative ``drop`` M that
    contributes an additional -4M/r.  Only the combination r*kappa(r) enters
    the rate quadrature, and there the 1/r singularity cancels, so ``smooth``
    must be finite and vectorized on [0, D] while the drop is kept symbolic.

    Attributes:
        D: end of the domain, the sine diameter L*sqrt(d).
        smooth: vectorized evaluation of the integrable part of kappa.
        drop: M >= 0; the full modulus is smooth(r) - 4*drop/r.
        kind: short human-readable label used in reports.
    """

    D: float
    smooth: Callable[["NDArray[np.float64]"], "NDArray[np.float64]"] = field(
        repr=False
    )
    drop: float = 0.0
    kind: str = "custom"

    def __post_init__(self) -> None:
        if not self.D > 0:
            raise ValueError(f"domain end must be positive, got {self.D}")
        if self.drop < 0:
            raise ValueError(f"perturbation size must be >= 0, got {self.drop}")

    def kappa(self, r: "NDArray[np.float64]") -> "NDArray[np.float64]":
        """Full modulus smooth(r) - 4*drop/r (diverges at r = 0 if drop > 0)."""
        r = np.asarray(r, dtype=np.float64)
        base = np.asarray(self.smooth(r), dtype=np.float64)
        if self.drop == 0.0:
            return base
        with np.errstate(divide="ignore"):
            return base - 4.0 * self.drop / r

    def r_times_kappa(self, r: "NDArray[np.float64]") -> "NDArray[np.float64]":
        """r * kappa(r), finite everywhere; this is the quadrature integrand."""
        r = np.asarray(r, dtype=np.float64)
        return r * np.asarray(self.smooth(r), dtype=np.float64) - 4.0 * self.drop


def modulus_constant(alpha: float, L: float, d: int) -> Modulus:
    """Constant modulus kappa == alpha with alpha <= 0.

    A smooth periodic potential cannot be uniformly convex, so a positive
    constant is rejected rather than silently clipped.
    """
    if alpha > 0:
        raise ValueError(
            f"constant modulus requires alpha <= 0 (a periodic potential "
            f"cannot be uniformly convex); got alpha = {alpha}"
        )
    a = float(alpha)

    def smooth(r: "NDArray[np.float64]") -> "NDArray[np.float64]":
        return np.full_like(np.asarray(r, dtype=np.float64), a)

    return Modulus(D=L * math.sqrt(d), smooth=smooth, kind=f"constant({a!r})")


def modulus_trig(alphas, betas, L: float) -> Modulus:
    """Modulus of the separable trigonometric potential.

    For V(x) = (L/8) * sum_i [alpha_i sin(2 pi x_i/L + w_i)
                              + beta_i cos(2 pi x_i/L + w_i)]
    the worst-case pair interaction along each axis has amplitude
    sigma_i = sqrt(alpha_i^2 + beta_i^2), and with the sigma sorted in
    descending order the tight modulus is

        kappa(r) = -(L/r^2) * sum_i sigma_i * min(1, ((r/L)^2 - i + 1)^+),

    continuously extended by kappa(0) = -sigma_1/L.  Phase shifts w_i do not
    enter.  In one dimension this is simply the constant -sigma_1/L.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if alphas.shape != betas.shape or alphas.ndim != 1:
        raise ValueError("alphas and betas must be 1-d arrays of equal length")
    d = alphas.size
    sigma = np.sort(np.hypot(alphas, betas))[::-1].copy()

    def smooth(r: "NDArray[np.float64]") -> "NDArray[np.float64]":
        r = np.asarray(r, dtype=np.float64)
        rsafe = np.where(r > 0, r, 1.0)
        u = (rsafe / L) ** 2
        total = np.zeros_like(u)
        for i in range(d):
            total += sigma[i] * np.clip(u - i, 0.0, 1.0)
        out = -(L / rsafe**2) * total
        return np.where(r > 0, out, -sigma[0] / L)

    return Modulus(
        D=L * math.sqrt(d), smooth=smooth, kind=f"trig(sigma={sigma.tolist()})"
    )


def modulus_tabulated(r_nodes, values, D: float) -> Modulus:
    """Modulus given by linear interpolation of tabulated values <= 0.

    Evaluation clamps to the end values outside [r_nodes[0], r_nodes[-1]].
    """
    r_nodes = np.asarray(r_nodes, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if r_nodes.ndim != 1 or r_nodes.shape != values.shape or r_nodes.size < 2:
        raise ValueError("need matching 1-d node/value arrays with >= 2 entries")
    if np.any(np.diff(r_nodes) <= 0):
        raise ValueError("tabulation nodes must be strictly increasing")
    if np.any(values > 0):
        raise ValueError("a semiconvexity modulus must be <= 0 everywhere")

    def smooth(r: "NDArray[np.float64]") -> "NDArray[np.float64]":
        return np.interp(np.asarray(r, dtype=np.float64), r_nodes, values)

    return Modulus(D=D, smooth=smooth, kind=f"tabulated({r_nodes.size} nodes)")


def perturbed(base: Modulus, M: float) -> Modulus:
    """Modulus kappa(r) - 4M/r accounting for a time-dependent control drift."""
    if M < 0:
        raise ValueError(f"perturbation size must be >= 0, got {M}")
    return Modulus(
        D=base.D,
        smooth=base.smooth,
        drop=base.drop + float(M),
        kind=f"perturbed({base.kind}, M={float(M)!r})",
    )


def _cumulative_simpson(y: "NDArray[np.float64]", h: float) -> "NDArray[np.float64]":
    """Cumulative integral of samples y on a uniform grid of spacing h.

    The even-index prefix integrals use composite Simpson pairs; the
    odd-index ones use the (5, 8, -1)/12 half-panel rule, so the whole
    prefix array is fourth-order accurate.
    """
    n = y.size - 1
    if n < 2 or n % 2:
        raise ValueError(f"need an even number >= 2 of intervals, got {n}")
    pair = h * (y[0:-2:2] + 4.0 * y[1:-1:2] + y[2::2]) / 3.0
    even = np.concatenate(([0.0], np.cumsum(pair)))
    odd = even[:-1] + h * (5.0 * y[0:-2:2] + 8.0 * y[1:-1:2] - y[2::2]) / 12.0
    out = np.empty_like(y)
    out[0::2] = even
    out[1::2] = odd
    return out


@dataclass(frozen=True)
class RateTriplet:
    """Comparison function f with its constants (C, lam) for one modulus.

    All arrays are tabulated on the uniform quadrature grid ``r`` over
    [0, D].  ``fprime_values`` and ``fsecond_values`` come from the analytic
    relations f' = phi*g and f'' = (r*kappa(r)/4)*phi*g - (lam/2)*Phi rather
    than numerical differentiation.  Off-grid evaluation of f uses a cubic
    spline through the nodes (exact for the cubic zero-drift case) with the
    argument clamped to [0, D].
    """

    modulus: Modulus
    r: "NDArray[np.float64]" = field(repr=False)
    phi: "NDArray[np.float64]" = field(repr=False)
    Phi: "NDArray[np.float64]" = field(repr=False)
    g: "NDArray[np.float64]" = field(repr=False)
    f_values: "NDArray[np.float64]" = field(repr=False)
    fprime_values: "NDArray[np.float64]" = field(repr=False)
    fsecond_values: "NDArray[np.float64]" = field(repr=False)
    C: float
    lam: float
    _f_spline: CubicSpline = field(repr=False, compare=False)

    @property
    def D(self) -> float:
        """End of the domain (the sine diameter)."""
        return self.modulus.D

    def f(self, r) -> "NDArray[np.float64]":
        """Evaluate the comparison function, clamping the argument to [0, D]."""
        return self._f_spline(np.clip(np.asarray(r, dtype=np.float64), 0.0, self.D))


def rate_triplet(modulus: Modulus, quad_nodes: int = 1024) -> RateTriplet:
    """Build the comparison function and constants for a modulus by quadrature.

    Args:
        modulus: the weak-semiconvexity modulus (its drop part is integrated
            in closed form, so only the smooth part is sampled).
        quad_nodes: number of Simpson subintervals on [0, D]; must be even
            and at least 256.

    Raises:
        ValueError: if any intermediate quadrature is non-finite.
    """
    if quad_nodes < 256 or quad_nodes % 2:
        raise ValueError(f"quad_nodes must be even and >= 256, got {quad_nodes}")
    D = modulus.D
    r = np.linspace(0.0, D, quad_nodes + 1)
    h = D / quad_nodes

    integrand = modulus.r_times_kappa(r)
    exponent = 0.25 * _cumulative_simpson(integrand, h)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        phi = np.exp(exponent)
        Phi = _cumulative_simpson(phi, h)
        ratio = Phi / phi
        Psi = _cumulative_simpson(ratio, h)
    for name, arr in (("phi", phi), ("Phi", Phi), ("Phi/phi", Psi)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"rate quadrature produced non-finite {name}")

    lam = 1.0 / Psi[-1]
    g = 1.0 - Psi / (2.0 * Psi[-1])
    f_values = _cumulative_simpson(phi * g, h)
    fprime = phi * g
    fsecond = 0.25 * integrand * fprime - 0.5 * lam * Phi
    C = 0.5 * phi[-1]

    return RateTriplet(
        modulus=modulus,
        r=r,
        phi=phi,
        Phi=Phi,
        g=g,
        f_values=f_values,
        fprime_values=fprime,
        fsecond_values=fsecond,
        C=float(C),
        lam=float(lam),
        _f_spline=CubicSpline(r, f_values, bc_type="not-a-knot"),
    )


def triplet_defects(triplet: RateTriplet) -> dict[str, float]:
    """Worst-case violations of the comparison function's guarantees.

    Checks, node by node on the quadrature grid, the sandwich
    ``C*r <= f(r) <= r``, the slope bracket ``C <= f'(r) <= 1``, and the
    differential inequality ``f'' - (r*kappa(r)/4) f' <= -(lam/2) f``.
    Returns the (signed) worst excess per property; a valid triplet keeps
    every entry at or below quadrature rounding (~1e-10 for 1024 nodes).
    """
    r = triplet.r
    f = triplet.f_values
    fp = triplet.fprime_values
    ode = (
        triplet.fsecond_values
        - 0.25 * triplet.modulus.r_times_kappa(r) * fp
        + 0.5 * triplet.lam * f
    )
    return {
        "sandwich_lower": float(np.max(triplet.C * r - f)),
        "sandwich_upper": float(np.max(f - r)),
        "slope_lower": float(np.max(triplet.C - fp)),
        "slope_upper": float(np.max(fp - 1.0)),
        "ode": float(np.max(ode)),
    }


def perturbation_M(
    U_mu: GridFunction, U_nu: GridFunction, triplet_V: RateTriplet, T: float
) -> float:
    """Size M of the control-drift perturbation to the modulus.

    M = max(|U_mu|_{f_V}, |U_nu|_{f_V}) / (1 - exp(-lam_V * pi^2 * T)):
    the f_V-Lipschitz size of the marginal potentials amplified by the
    finite-horizon factor.  Both norms are evaluated on the grid.
    """
    if not T > 0:
        raise ValueError(f"time horizon must be positive, got {T}")
    norm = max(f_lip_norm(U_mu, triplet_V), f_lip_norm(U_nu, triplet_V))
    return norm / (1.0 - math.exp(-triplet_V.lam * math.pi**2 * T))


@dataclass(frozen=True)
class ExplicitBounds:
    """Closed-form (conservative) bounds evaluated from a constant modulus.

    ``rate_lower_bound`` is the closed-form lower bound for the unperturbed
    rate, ``M_upper_bound`` the matching over-estimate of the perturbation
    size, and ``log_gamma_bound`` / ``c_S_bound`` the resulting bounds on the
    per-iteration contraction factor and on the Lipschitz-to-weighted-norm
    conversion constant.  For alpha = 0 with zero potentials the
    log-gamma bound degenerates to 0 (vacuous); the quadrature value from
    :func:`contraction_constants` is the one to use there.
    """

    alpha: float
    eta_D: float
    rate_lower_bound: float
    M_upper_bound: float
    log_gamma_bound: float
    c_S_bound: float


def explicit_bounds(
    alpha: float,
    L: float,
    d: int,
    T: float,
    norm_mu: float,
    norm_nu: float,
) -> ExplicitBounds:
    """Evaluate the closed-form rate bounds for a constant modulus alpha <= 0.

    With D = L*sqrt(d), eta_D = exp(|alpha| D^2 / 8) and the rate lower bound

        Lambda = (|alpha|/4) / (eta_D - 1)        (alpha < 0)
        Lambda = 2 / D^2                          (alpha = 0, the limit),

    the perturbation size is over-estimated by
    Mhat = max(norm_mu, norm_nu) / (1 - exp(-Lambda pi^2 T)) and

        log gamma <= -pi^2 T * Lambda * exp(-D * Mhat)      (alpha < 0)
        log gamma <= -pi^2 T * Mhat^2 * exp(-D * Mhat)      (alpha = 0)
        c_S       <= 2 * (eta_D / (sqrt(L) * pi)) * exp(D * Mhat).

    The norms are the f-Lipschitz norms of the two marginal potentials for
    the unperturbed comparison function.
    """
    if alpha > 0:
        raise ValueError(f"closed-form bounds require alpha <= 0, got {alpha}")
    if not T > 0:
        raise ValueError(f"time horizon must be positive, got {T}")
    D = L * math.sqrt(d)
    eta_D = math.exp(abs(alpha) * D**2 / 8.0)
    if alpha < 0:
        rate = (abs(alpha) / 4.0) / (eta_D - 1.0)
    else:
        rate = 2.0 / D**2
    Mhat = max(norm_mu, norm_nu) / (1.0 - math.exp(-rate * math.pi**2 * T))
    if alpha < 0:
        log_gamma = -math.pi**2 * T * rate * math.exp(-D * Mhat)
    else:
        log_gamma = -math.pi**2 * T * Mhat**2 * math.exp(-D * Mhat)
    c_S = 2.0 * (eta_D / (math.sqrt(L) * math.pi)) * math.exp(D * Mhat)
    return ExplicitBounds(
        alpha=float(alpha),
        eta_D=eta_D,
        rate_lower_bound=rate,
        M_upper_bound=Mhat,
        log_gamma_bound=log_gamma,
        c_S_bound=c_S,
    )


@dataclass(frozen=True)
class SmallTimeAsymptotics:
    """Leading-order behaviour of the zero-drift constants as T -> 0.

    With D_mu_nu = max(norm_mu, norm_nu) / (2 pi^2) in the zero-drift
    weighted norm and D = L*sqrt(d),

        log gamma_0 ~ -pi^2 D_mu_nu^2 D^4 T^{-1} exp(-D_mu_nu D^3 / T),
        log c_S     ~  D_mu_nu D^3 / T.
    """

    D_mu_nu: float
    log_gamma0: float
    log_c_S0: float


def small_time_asymptotics(
    norm_mu: float, norm_nu: float, L: float, d: int, T: float
) -> SmallTimeAsymptotics:
    """Evaluate the T -> 0 leading-order expressions for the zero-drift case."""
    if not T > 0:
        raise ValueError(f"time horizon must be positive, got {T}")
    D = L * math.sqrt(d)
    D_mu_nu = max(norm_mu, norm_nu) / (2.0 * math.pi**2)
    expo = D_mu_nu * D**3 / T
    log_gamma0 = -(math.pi**2) * D_mu_nu**2 * D**4 / T * math.exp(-expo)
    return SmallTimeAsymptotics(
        D_mu_nu=D_mu_nu, log_gamma0=log_gamma0, log_c_S0=expo
    )


@dataclass(frozen=True)
class RateBundle:
    """Everything the contraction analysis of one problem instance produces.

    Attributes:
        T: time horizon of the bridge.
        triplet_V: comparison function for the base drift modulus.
        norm_mu, norm_nu: f_V-Lipschitz norms of the marginal potentials.
        M: perturbation size built from those norms.
        triplet_bar: comparison function for the perturbed modulus.
        gamma: one-iteration contraction factor exp(-lam_bar * pi^2 * T) of
            the half-step map on potentials (a full update contracts by
            gamma^2).
        c_S: Lipschitz-to-weighted-norm conversion constant 1/(2*C_bar),
            which follows from the sandwich f(r) >= C*r.
        c_S_sqrtL: the alternative normalization 1/(C_bar * sqrt(L) * pi),
            reported alongside for cross-checking.
        alpha_floor: constant lower envelope of the base modulus on [0, D],
            used to evaluate the closed-form bounds.
        bounds: closed-form conservative bounds at alpha_floor.
        asymptotics: small-T leading-order constants (zero-drift norms).
    """

    T: float
    triplet_V: RateTriplet
    norm_mu: float
    norm_nu: float
    M: float
    triplet_bar: RateTriplet
    gamma: float
    c_S: float
    c_S_sqrtL: float
    alpha_floor: float
    bounds: ExplicitBounds
    asymptotics: SmallTimeAsymptotics

    @property
    def D(self) -> float:
        return self.triplet_V.D

    @property
    def lam_V(self) -> float:
        return self.triplet_V.lam

    @property
    def C_V(self) -> float:
        return self.triplet_V.C

    @property
    def lam_bar(self) -> float:
        return self.triplet_bar.lam

    @property
    def C_bar(self) -> float:
        return self.triplet_bar.C


def contraction_constants(
    U_mu: GridFunction,
    U_nu: GridFunction,
    modulus: Modulus,
    T: float,
    quad_nodes: int = 1024,
) -> RateBundle:
    """Assemble every contraction constant for one problem instance.

    Runs the rate quadrature for the base modulus, measures the marginal
    potentials in the resulting weighted norm, perturbs the modulus by the
    induced -4M/r term, re-runs the quadrature, and packages the contraction
    factor gamma = exp(-lam_bar * pi^2 * T), both normalizations of the
    conversion constant c_S, the closed-form bounds evaluated at the constant
    lower envelope of the modulus, and the small-T asymptotics.
    """
    if not T > 0:
        raise ValueError(f"time horizon must be positive, got {T}")
    if U_mu.grid != U_nu.grid:
        raise ValueError("marginal potentials must live on the same grid")
    L = U_mu.grid.L
    d = U_mu.grid.d
    triplet_V = rate_triplet(modulus, quad_nodes)
    norm_mu = f_lip_norm(U_mu, triplet_V)
    norm_nu = f_lip_norm(U_nu, triplet_V)
    M = max(norm_mu, norm_nu) / (1.0 - math.exp(-triplet_V.lam * math.pi**2 * T))
    triplet_bar = rate_triplet(perturbed(modulus, M), quad_nodes)
    gamma = math.exp(-triplet_bar.lam * math.pi**2 * T)
    c_S = 1.0 / (2.0 * triplet_bar.C)
    c_S_sqrtL = 1.0 / (triplet_bar.C * math.sqrt(L) * math.pi)

    alpha_floor = float(np.min(modulus.smooth(triplet_V.r)))
    bounds = explicit_bounds(min(alpha_floor, 0.0), L, d, T, norm_mu, norm_nu)

    triplet0 = rate_triplet(modulus_constant(0.0, L, d), quad_nodes)
    asym = small_time_asymptotics(
        f_lip_norm(U_mu, triplet0), f_lip_norm(U_nu, triplet0), L, d, T
    )

    return RateBundle(
        T=float(T),
        triplet_V=triplet_V,
        norm_mu=float(norm_mu),
        norm_nu=float(norm_nu),
        M=float(M),
        triplet_bar=triplet_bar,
        gamma=float(gamma),
        c_S=float(c_S),
        c_S_sqrtL=float(c_S_sqrtL),
        alpha_floor=alpha_floor,
        bounds=bounds,
        asymptotics=asym,
    )

"""Walk the contraction-rate calculus for a drifted instance, end to end.

Starting from a trigonometric drift potential V = 0.25 sin(2 pi x), the
script derives everything the theory needs: the semiconvexity modulus of V,
the comparison function and its constants (lam_V, C_V), the size M of the
control-drift perturbation induced by the marginals, the perturbed
constants (lam_bar, C_bar), and finally the per-sweep solver factor gamma
and the sensitivity constant c_S across a sweep of horizons — each next to
its closed-form bound, which must be conservative at every T.  The
small-horizon asymptotics are printed last; they show why short bridges
are the expensive regime.
"""

from __future__ import annotations

import math

import numpy as np

from torus_schrodinger.config import default_config
from torus_schrodinger.kernels import (
    PotentialSpec,
    potential_modulus,
    potential_values,
    stationary_measure,
)
from torus_schrodinger.rates import contraction_constants, modulus_constant, rate_triplet
from torus_schrodinger.sinkhorn import MarginalPair


def main() -> None:
    config = default_config()
    grid = config.grid()
    drift = PotentialSpec.trig([2.0], [0.0])  # V = 0.25 sin(2 pi x)

    modulus = potential_modulus(grid, drift)
    triplet_V = rate_triplet(modulus, config.rates_quad_nodes)
    triplet_0 = rate_triplet(modulus_constant(0.0, grid.L, grid.d))
    print("drift V = 0.25 sin(2 pi x) on the unit 1-torus")
    print(f"modulus domain D = {modulus.D:.6f} (the sine diameter)")
    print(f"zero-drift rate   lam_0 = {triplet_0.lam:.6f}   C_0 = {triplet_0.C:.6f}")
    print(f"drifted rate      lam_V = {triplet_V.lam:.6f}   C_V = {triplet_V.C:.6f}")
    print("(curvature of V can only slow the rate and widen the sandwich)\n")

    marginals = MarginalPair.from_potentials(
        potential_values(grid, config.mu_potential()),
        potential_values(grid, config.nu_potential()),
        stationary_measure(grid, drift),
    )

    # c_S below is the 1/(2 C_bar) convention; the closed-form over-estimate
    # bounds the sqrt(L)-normalized flavor, so that is what sits next to it.
    print("   T         M      lam_bar        gamma    gamma bound"
          "    c_S_sqrtL        bound")
    for T in (0.25, 0.5, 1.0, 2.0):
        b = contraction_constants(
            marginals.U_mu, marginals.U_nu, modulus, T, config.rates_quad_nodes
        )
        gamma_bound = math.exp(b.bounds.log_gamma_bound)
        print(
            f"{T:4.2f}  {b.M:8.4f}  {b.lam_bar:10.6f}  {b.gamma:11.5e}  "
            f"{gamma_bound:11.5e}  {b.c_S_sqrtL:11.5e}  {b.bounds.c_S_bound:11.5e}"
        )
        # rounding slack: at large T the c_S bound is sharp, so the
        # quadrature value may sit a few ulp on either side of it
        assert b.gamma <= gamma_bound * (1 + 1e-12)
        assert b.c_S_sqrtL <= b.bounds.c_S_bound * (1 + 1e-12)
    print("(the c_S bound tightens to equality as T grows: the perturbation"
          " over-estimate converges to M itself)")

    shortest = contraction_constants(
        marginals.U_mu, marginals.U_nu, modulus, 0.05, config.rates_quad_nodes
    )
    a = shortest.asymptotics
    print("\nsmall-horizon behaviour at T = 0.05:")
    print(f"  perturbation size M = {shortest.M:.3f} "
          f"(grows like 1/T as the horizon closes)")
    print(f"  leading-order gamma ~ exp({a.log_gamma0:.3e}) = "
          f"{math.exp(a.log_gamma0):.3f} "
          f"(approaches 1 doubly exponentially: contraction stalls)")
    print(f"  leading-order log c_S ~ {a.log_c_S0:.3f} "
          f"(sensitivity grows like e^(const/T))")


if __name__ == "__main__":
    main()

"""Solve the benchmark bridge problem and watch the geometric error decay.

The instance is the pinned benchmark: flat 1-torus, N = 128 nodes, horizon
T = 0.5, zero drift, marginals mu ~ e^{-0.75 sin(2 pi x)} and
nu ~ e^{-0.75 cos(2 pi x)} against the uniform stationary measure.  The
script runs the log-domain alternating solver, measures every iterate
against a machine-precision reference, and prints the per-sweep errors next
to the guaranteed per-sweep factor gamma^2, so the contraction is visible
digit by digit.  It finishes with the transported-marginal defect and the
entropic cost of the solved plan.
"""

from __future__ import annotations

from torus_schrodinger.config import default_config
from torus_schrodinger.kernels import (
    kernel_general,
    potential_modulus,
    potential_values,
    stationary_measure,
)
from torus_schrodinger.rates import contraction_constants
from torus_schrodinger.sinkhorn import (
    MarginalPair,
    iteration_table,
    plan_marginals,
    reference_potentials,
    run,
    total_variation,
)


def main() -> None:
    config = default_config()
    grid = config.grid()
    kernel = kernel_general(grid, config.potential(), config.T)
    marginals = MarginalPair.from_potentials(
        potential_values(grid, config.mu_potential()),
        potential_values(grid, config.nu_potential()),
        stationary_measure(grid, config.potential()),
    )

    state = run(kernel, marginals, max_iter=config.solver_max_iter,
                tol=config.solver_tol, keep_iterates=True)
    reference = reference_potentials(kernel, marginals)
    bundle = contraction_constants(
        marginals.U_mu,
        marginals.U_nu,
        potential_modulus(grid, config.potential()),
        config.T,
        config.rates_quad_nodes,
    )
    rows = iteration_table(state, reference, marginals, kernel, bundle.triplet_bar)

    print("benchmark: d=1, L=1, N=128, T=0.5, zero drift")
    print(f"converged after {state.n} sweeps (residual {state.residual:.3e})")
    print(f"guaranteed per-sweep factor gamma^2 = {bundle.gamma**2:.6e}\n")

    print(" n   sup|psi_n - psi*|   |psi_n - psi*|_f   observed factor")
    prev = None
    for row in rows:
        flip = row["flip_err_psi"]
        ratio = "" if prev in (None, 0.0) else f"{flip / prev:.3e}"
        print(f"{row['n']:2.0f}   {row['sup_err_psi']:16.9e}   {flip:16.9e}   {ratio}")
        prev = flip

    mu_hat, nu_hat = plan_marginals(reference.phi_star, reference.psi_star, kernel)
    print("\nplan marginal defects (total variation):")
    print(f"  mu: {total_variation(mu_hat, marginals.mu_weights):.3e}")
    print(f"  nu: {total_variation(nu_hat, marginals.nu_weights):.3e}")
    print(f"entropic cost KL(pi | R) = {rows[-1]['kl_cost']:.12f}")


if __name__ == "__main__":
    main()

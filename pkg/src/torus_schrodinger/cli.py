"""Command-line experiments: one config in, deterministic artifacts out.

Five subcommands share the same configuration grammar (see :mod:`.config`):

``solve``
    Run the log-domain solver, measure every iterate against a
    machine-precision reference, and fit the empirical decay rate.
``rates``
    Evaluate the contraction-rate calculus and emit every constant.
``hjb-check``
    Propagate the converged value function backwards and check the
    weighted-norm contraction node by node.
``couple``
    Run the reflection-coupling Monte Carlo with its supermartingale check.
``verify``
    Execute the full acceptance suite (see :mod:`.verify`).

Every command writes CSV/JSON artifacts into the config's output directory
(``--out`` overrides it), prints a short summary to stdout, and exits 0
exactly when its in-run contracts hold.  Re-running a command with the same
config and seed rewrites every artifact bit-identically: no timestamps, no
machine state, nothing but (config, seed) enters the outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    default_config,
    emit_config,
    parse_config,
)
from .coupling import DriftSpec, contraction_estimate, supermartingale_check
from .grid import TorusGrid, sup_norm
from .hjb import contraction_ratio, evolve, hjb_residual
from .kernels import (
    DENSE_SIZE_CAP,
    MarkovKernel,
    kernel_factory,
    kernel_general,
    potential_modulus,
    potential_values,
    stationary_measure,
)
from .rates import (
    RateBundle,
    Modulus,
    contraction_constants,
    modulus_constant,
    rate_triplet,
    triplet_defects,
)
from .reporting import provenance, write_csv, write_json
from .sinkhorn import MarginalPair, iteration_table, reference_potentials, run

#: Iterates whose sup-error sits below this are float-noise: they are
#: excluded from rate fits and contraction-ratio checks.
RATE_FIT_FLOOR = 1e-9
#: Relative slack on per-iteration contraction ratios (rounding in the norm
#: evaluation), plus an absolute allowance for ratios of noise-floor values.
RATIO_REL_SLACK = 1e-8
RATIO_ABS_SLACK = 1e-14
#: Relative slack on the per-node value-function contraction ratios.
HJB_RATIO_SLACK = 1e-6
#: Node-wise defects of a comparison-function triplet beyond this fail.
TRIPLET_DEFECT_TOL = 1e-8
#: PDE residual gate for the backward evolution.  The centered-difference
#: residual is O(dt^2) but with third time-derivatives of the high modes in
#: the constant, so it needs its own fine ladder; 801 nodes leaves ~6e-3 on
#: the benchmark while an equation mix-up would score O(1).
HJB_RESIDUAL_TOL = 0.05
HJB_RESIDUAL_LADDER = 801

_HISTORY_COLUMNS = (
    "n",
    "sup_err_phi",
    "sup_err_psi",
    "grad_err_phi",
    "grad_err_psi",
    "flip_err_psi",
    "lip_psi",
    "kl_cost",
)


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config from --config (or the built-in benchmark) plus CLI overrides."""
    if args.config is not None:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        config = parse_config(text)
    else:
        config = default_config()
    overrides: dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        overrides["mc_seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = str(args.out)
    if overrides:
        config = dataclasses.replace(config, **overrides)
        config = parse_config(emit_config(config))  # re-validate the merge
    return config


def _modulus(config: ExperimentConfig, grid: TorusGrid) -> Modulus:
    if config.rates_modulus == "constant":
        return modulus_constant(config.rates_alpha, grid.L, grid.d)
    return potential_modulus(grid, config.potential())


def _marginals(config: ExperimentConfig, grid: TorusGrid) -> MarginalPair:
    return MarginalPair.from_potentials(
        potential_values(grid, config.mu_potential()),
        potential_values(grid, config.nu_potential()),
        stationary_measure(grid, config.potential()),
    )


def _kernel(config: ExperimentConfig, grid: TorusGrid) -> MarkovKernel:
    return kernel_general(
        grid,
        config.potential(),
        config.T,
        substeps=config.kernel_substeps or None,
        method=config.kernel_method,
    )


def _bundle(config: ExperimentConfig, grid: TorusGrid, marginals: MarginalPair) -> RateBundle:
    return contraction_constants(
        marginals.U_mu,
        marginals.U_nu,
        _modulus(config, grid),
        config.T,
        config.rates_quad_nodes,
    )


def _require_dense(grid: TorusGrid, command: str) -> None:
    if grid.n_nodes > DENSE_SIZE_CAP:
        raise ConfigError(
            f"{command} diagonalizes the generator and caps at "
            f"{DENSE_SIZE_CAP} nodes; the grid has {grid.n_nodes}"
        )


def fit_decay_slope(rows: list[dict[str, float]]) -> float | None:
    """Least-squares slope of log sup-error against the iterate index.

    Only iterates above RATE_FIT_FLOOR enter the fit — below that the errors
    are rounding noise and would flatten the slope.  Returns None when fewer
    than two iterates resolve above the floor (already converged at n=1).
    """
    pts = [(r["n"], r["sup_err_psi"]) for r in rows if r["sup_err_psi"] >= RATE_FIT_FLOOR]
    if len(pts) < 2:
        return None
    n = np.array([p[0] for p in pts])
    y = np.log(np.array([p[1] for p in pts]))
    return float(np.polyfit(n, y, 1)[0])


def contraction_ratios_ok(rows: list[dict[str, float]], gamma: float) -> bool:
    """Per-iteration weighted-norm contraction, checked while resolvable.

    For consecutive iterates with the earlier sup-error above the noise
    floor, the weighted-Lipschitz error must shrink by at least gamma^2.
    """
    factor = gamma**2 * (1.0 + RATIO_REL_SLACK)
    for prev, cur in zip(rows, rows[1:]):
        if prev["sup_err_psi"] < RATE_FIT_FLOOR:
            break
        if cur["flip_err_psi"] > factor * prev["flip_err_psi"] + RATIO_ABS_SLACK:
            return False
    return True


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def cmd_solve(config: ExperimentConfig, args: argparse.Namespace, out: Path) -> bool:
    grid = config.grid()
    kernel = _kernel(config, grid)
    marginals = _marginals(config, grid)
    psi0 = marginals.U_nu if config.solver_psi0 == "warm" else None
    state = run(
        kernel,
        marginals,
        psi0,
        max_iter=config.solver_max_iter,
        tol=config.solver_tol,
        keep_iterates=True,
    )
    reference = reference_potentials(kernel, marginals)
    bundle = _bundle(config, grid, marginals)
    rows = iteration_table(state, reference, marginals, kernel, bundle.triplet_bar)

    history = [dict(r, n=int(r["n"])) for r in rows]
    write_csv(out / "solve_history.csv", _HISTORY_COLUMNS, history)

    nodes = grid.nodes()
    coord_names = [f"x{i}" for i in range(grid.d)]
    pot_rows = []
    for i in range(grid.n_nodes):
        row: dict[str, Any] = {"index": i}
        row.update({name: nodes[i, a] for a, name in enumerate(coord_names)})
        row.update(
            U_mu=marginals.U_mu.flat[i],
            U_nu=marginals.U_nu.flat[i],
            phi_star=reference.phi_star.flat[i],
            psi_star=reference.psi_star.flat[i],
        )
        pot_rows.append(row)
    write_csv(
        out / "solve_potentials.csv",
        ["index", *coord_names, "U_mu", "U_nu", "phi_star", "psi_star"],
        pot_rows,
    )

    fitted = fit_decay_slope(rows)
    theoretical = 2.0 * math.log(bundle.gamma)  # = -2 lam_bar pi^2 T
    if fitted is None:
        rate_ok = rows[-1]["sup_err_psi"] < RATE_FIT_FLOOR
    else:
        rate_ok = fitted <= theoretical + 1e-9
    ratios_ok = contraction_ratios_ok(rows, bundle.gamma)
    passed = state.converged and rate_ok and ratios_ok

    write_json(
        out / "solve_summary.json",
        {
            "converged": state.converged,
            "n_iterations": state.n,
            "final_residual": state.residual,
            "final_sup_err_psi": rows[-1]["sup_err_psi"],
            "fitted_rate": fitted,
            "theoretical_rate": theoretical,
            "gamma": bundle.gamma,
            "lam_bar": bundle.lam_bar,
            "contraction_ratios_ok": ratios_ok,
            "passed": passed,
            "provenance": provenance(config, config.mc_seed),
        },
    )

    fitted_text = "n/a (converged at once)" if fitted is None else f"{fitted:.4f}"
    print(f"converged: {state.converged} after {state.n} iterations "
          f"(residual {state.residual:.3e})")
    print(f"fitted rate:      {fitted_text}")
    print(f"theoretical rate: {theoretical:.4f}  (slope bound, more negative is faster)")
    print(f"artifacts: {out}/solve_history.csv, solve_potentials.csv, solve_summary.json")
    return passed


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------


def cmd_rates(config: ExperimentConfig, args: argparse.Namespace, out: Path) -> bool:
    grid = config.grid()
    marginals = _marginals(config, grid)
    bundle = _bundle(config, grid, marginals)

    defects_V = triplet_defects(bundle.triplet_V)
    defects_bar = triplet_defects(bundle.triplet_bar)
    worst = max(max(defects_V.values()), max(defects_bar.values()))
    passed = worst <= TRIPLET_DEFECT_TOL and 0.0 < bundle.gamma < 1.0

    L, d = grid.L, grid.d
    payload: dict[str, Any] = {
        "D": bundle.D,
        "lam_V": bundle.lam_V,
        "C_V": bundle.C_V,
        "norm_mu": bundle.norm_mu,
        "norm_nu": bundle.norm_nu,
        "M": bundle.M,
        "lam_bar": bundle.lam_bar,
        "C_bar": bundle.C_bar,
        "gamma": bundle.gamma,
        "c_S": bundle.c_S,
        "c_S_sqrtL": bundle.c_S_sqrtL,
        "alpha_floor": bundle.alpha_floor,
        "eta_D": bundle.bounds.eta_D,
        "rate_lower_bound": bundle.bounds.rate_lower_bound,
        "M_upper_bound": bundle.bounds.M_upper_bound,
        "log_gamma_bound": bundle.bounds.log_gamma_bound,
        "c_S_bound": bundle.bounds.c_S_bound,
        "D_mu_nu": bundle.asymptotics.D_mu_nu,
        "log_gamma0": bundle.asymptotics.log_gamma0,
        "log_c_S0": bundle.asymptotics.log_c_S0,
        # Zero-drift comparison function f0(r) = r - c r^3: the coefficient
        # the quadrature reproduces, and the other convention in circulation
        # (they agree only when L^2 d = 1).
        "f0_cubic_coeff": 1.0 / (6.0 * L**2 * d),
        "f0_cubic_coeff_alt": L**2 * d / 6.0,
        "worst_triplet_defect": worst,
        "passed": passed,
        "provenance": provenance(config, config.mc_seed),
    }
    write_json(out / "rates.json", payload)

    table_rows = [
        {"r": r, "f_V": fv, "f_bar": fb}
        for r, fv, fb in zip(
            bundle.triplet_V.r, bundle.triplet_V.f_values, bundle.triplet_bar.f_values
        )
    ]
    write_csv(out / "rates_f_tables.csv", ["r", "f_V", "f_bar"], table_rows)

    print(f"lam_V = {bundle.lam_V:.12g}   C_V = {bundle.C_V:.12g}   D = {bundle.D:.12g}")
    print(f"M = {bundle.M:.12g}   lam_bar = {bundle.lam_bar:.12g}   C_bar = {bundle.C_bar:.12g}")
    print(f"gamma = {bundle.gamma:.12g}   c_S = {bundle.c_S:.12g}")
    print(f"worst node-wise defect: {worst:.3e} (tolerance {TRIPLET_DEFECT_TOL:.0e})")
    print(f"artifacts: {out}/rates.json, rates_f_tables.csv")
    return passed


# ---------------------------------------------------------------------------
# hjb-check
# ---------------------------------------------------------------------------


def cmd_hjb_check(config: ExperimentConfig, args: argparse.Namespace, out: Path) -> bool:
    grid = config.grid()
    _require_dense(grid, "hjb-check")
    potential = config.potential()
    factory = kernel_factory(grid, potential)
    kernel = factory.kernel(config.T)
    marginals = _marginals(config, grid)
    reference = reference_potentials(kernel, marginals)
    h = reference.psi_star

    times = np.linspace(0.0, config.T, 16)
    evolution = evolve(h, config.T, factory, times)
    triplet = rate_triplet(_modulus(config, grid), config.rates_quad_nodes)
    ratios = contraction_ratio(evolution, triplet)
    bounds = np.exp(-triplet.lam * math.pi**2 * (config.T - times))
    excess = ratios / bounds - 1.0
    ratios_ok = bool(np.all(excess <= HJB_RATIO_SLACK))

    fine = evolve(h, config.T, factory, np.linspace(0.0, config.T, HJB_RESIDUAL_LADDER))
    residual = hjb_residual(fine, potential)
    residual_ok = residual <= HJB_RESIDUAL_TOL * max(1.0, sup_norm(h))
    passed = ratios_ok and residual_ok

    write_csv(
        out / "hjb_ratios.csv",
        ["t", "ratio", "bound"],
        [{"t": t, "ratio": r, "bound": b} for t, r, b in zip(times, ratios, bounds)],
    )

    du_names = ["du"] if grid.d == 1 else [f"du{a}" for a in range(grid.d)]
    snap_rows = []
    for k, t in enumerate(times):
        u = evolution.values[k].flat
        g = evolution.gradients[k].reshape(grid.d, grid.n_nodes)
        for i in range(grid.n_nodes):
            row: dict[str, Any] = {"t": t, "node": i, "u": u[i]}
            row.update({name: g[a, i] for a, name in enumerate(du_names)})
            snap_rows.append(row)
    write_csv(out / "hjb_snapshots.csv", ["t", "node", "u", *du_names], snap_rows)

    write_json(
        out / "hjb_summary.json",
        {
            "lam": triplet.lam,
            "terminal_sup": sup_norm(h),
            "max_ratio_excess": float(np.max(excess)),
            "pde_residual": residual,
            "ratios_ok": ratios_ok,
            "residual_ok": residual_ok,
            "passed": passed,
            "provenance": provenance(config, config.mc_seed),
        },
    )

    print(f"contraction ratios at 16 nodes: max excess over bound "
          f"{float(np.max(excess)):.3e} (slack {HJB_RATIO_SLACK:.0e})")
    print(f"backward-equation residual: {residual:.3e}")
    print(f"artifacts: {out}/hjb_ratios.csv, hjb_snapshots.csv, hjb_summary.json")
    return passed


# ---------------------------------------------------------------------------
# couple
# ---------------------------------------------------------------------------


def cmd_couple(config: ExperimentConfig, args: argparse.Namespace, out: Path) -> bool:
    grid = config.grid()
    potential = config.potential()

    if config.couple_control == "feedback":
        _require_dense(grid, "couple with feedback control")
        factory = kernel_factory(grid, potential)
        kernel = factory.kernel(config.T)
        marginals = _marginals(config, grid)
        reference = reference_potentials(kernel, marginals)
        bundle = _bundle(config, grid, marginals)
        ladder = np.linspace(0.0, config.T, int(round(config.T / config.mc_dt)) + 1)
        control = evolve(reference.psi_star, config.T, factory, ladder)
        drift = DriftSpec(grid, potential, control)
        fb = bundle.triplet_bar
    else:
        drift = DriftSpec(grid, potential)
        fb = rate_triplet(_modulus(config, grid), config.rates_quad_nodes)

    x = np.array(config.couple_x, dtype=float)
    y = np.array(config.couple_y, dtype=float)
    checkpoints = np.linspace(0.0, config.T, config.mc_checkpoints)
    estimate = contraction_estimate(
        x,
        y,
        0.0,
        config.T,
        config.mc_dt,
        drift,
        fb,
        n_paths=config.mc_n_paths,
        seed=config.mc_seed,
        checkpoints=checkpoints,
        coalesce_tol=config.mc_coalesce_tol,
        jobs=getattr(args, "jobs", 1) or 1,
    )
    report = supermartingale_check(estimate, fb.lam)
    bound = estimate.contraction_bound(fb.lam)
    bound_ok = estimate.mean <= bound + 2.0 * estimate.std_error
    passed = bound_ok and report.passed

    write_json(
        out / "couple.json",
        {
            "control": config.couple_control,
            "n_paths": estimate.n_paths,
            "delta0": estimate.delta0,
            "horizon": estimate.horizon,
            "mean": estimate.mean,
            "std_error": estimate.std_error,
            "coalesced_fraction": estimate.coalesced_fraction,
            "lam": fb.lam,
            "bound": bound,
            "bound_ok": bound_ok,
            "supermartingale_ok": report.passed,
            "passed": passed,
            "provenance": provenance(config, config.mc_seed),
        },
    )

    margins = [math.nan, *report.margins]  # margin k compares checkpoint k-1 -> k
    write_csv(
        out / "couple_checkpoints.csv",
        ["k", "time", "weighted_mean", "margin"],
        [
            {"k": k, "time": t, "weighted_mean": m, "margin": g}
            for k, (t, m, g) in enumerate(
                zip(report.times, report.weighted_means, margins)
            )
        ],
    )

    print(f"mean f(delta_T) = {estimate.mean:.6e} +- {estimate.std_error:.2e}   "
          f"bound {bound:.6e}   coalesced {estimate.coalesced_fraction:.3f}")
    print(f"supermartingale margins: max "
          f"{max(report.margins):.3e} (must stay <= 0 within noise)")
    print(f"artifacts: {out}/couple.json, couple_checkpoints.csv")
    return passed


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(config: ExperimentConfig, args: argparse.Namespace, out: Path) -> bool:
    from .verify import run_verify  # heavy import, deferred

    _, all_pass = run_verify(
        config,
        quick=getattr(args, "quick", False),
        jobs=getattr(args, "jobs", 1) or 1,
        out_dir=out,
    )
    return all_pass


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "solve": cmd_solve,
    "rates": cmd_rates,
    "hjb-check": cmd_hjb_check,
    "couple": cmd_couple,
    "verify": cmd_verify,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="torus-schrodinger",
        description="Entropic optimal transport on the torus: solver, "
        "rate calculus, and Monte-Carlo verification experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "run the solver against a machine-precision reference",
        "rates": "evaluate every contraction constant for one instance",
        "hjb-check": "verify the value-function contraction node by node",
        "couple": "reflection-coupling Monte Carlo with supermartingale check",
        "verify": "run the full acceptance suite",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument(
            "--config",
            type=Path,
            default=None,
            metavar="PATH",
            help="experiment config file (defaults to the built-in benchmark)",
        )
        sp.add_argument("--seed", type=int, default=None, help="override mc.seed")
        sp.add_argument(
            "--out", type=Path, default=None, metavar="DIR", help="override output.dir"
        )
        if name == "verify":
            sp.add_argument(
                "--quick",
                action="store_true",
                help="reduced Monte-Carlo budgets (target < 60 s)",
            )
        if name in ("couple", "verify"):
            sp.add_argument(
                "--jobs",
                type=int,
                default=1,
                metavar="K",
                help="worker processes for Monte-Carlo blocks",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        passed = _COMMANDS[args.command](config, args, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("PASS" if passed else "FAIL")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())

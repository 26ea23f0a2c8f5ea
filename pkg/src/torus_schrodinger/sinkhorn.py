"""Log-domain Sinkhorn iteration for the static Schrödinger problem.

Everything here works with the *potentials* (phi, psi) rather than with
scaling vectors: one update reads

    phi <- U_mu + log P_t e^{-psi},      psi <- U_nu + log P_t e^{-phi},

evaluated through :func:`~torus_schrodinger.kernels.apply_log`, so the solver
never under- or overflows no matter how large the potentials grow.  Plans are
only materialized on demand (and only for modest grids); marginals, costs and
residuals are all available matrix-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .grid import GridFunction, gradient, lip_norm, sup_norm
from .kernels import DENSE_SIZE_CAP, MarkovKernel, apply_log

__all__ = [
    "MarginalPair",
    "IterationRecord",
    "SinkhornState",
    "ReferencePotentials",
    "initial_state",
    "sinkhorn_step",
    "run",
    "reference_potentials",
    "symmetric_normalize",
    "normalize_iterates",
    "plan",
    "plan_marginals",
    "kl_divergence",
    "total_variation",
    "entropic_cost",
    "entropic_cost_from_potentials",
    "iteration_table",
]

#: Residual (sup-norm fixed-point defect) the reference potentials must meet.
REFERENCE_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class MarginalPair:
    """The two marginals mu = e^{-U_mu} m and nu = e^{-U_nu} m.

    The stored potentials are re-centered at construction so that the weight
    vectors are *literally* ``m_weights * exp(-U)`` — no hidden normalization
    constant survives ingestion.
    """

    U_mu: GridFunction
    U_nu: GridFunction
    mu_weights: np.ndarray
    nu_weights: np.ndarray

    def __post_init__(self) -> None:
        if self.U_mu.grid != self.U_nu.grid:
            raise ValueError("marginal potentials must live on the same grid")
        for name, w in (("mu", self.mu_weights), ("nu", self.nu_weights)):
            if w.shape != (self.U_mu.grid.n_nodes,):
                raise ValueError(f"{name} weights have the wrong shape")
            if not np.all(w > 0):
                raise ValueError(f"{name} weights must be strictly positive")
            if abs(float(w.sum()) - 1.0) > 1e-12:
                raise ValueError(f"{name} weights must sum to one")

    @classmethod
    def from_potentials(
        cls, U_mu: GridFunction, U_nu: GridFunction, m_weights: np.ndarray
    ) -> MarginalPair:
        """Build the pair, re-centering each potential so e^{-U} m sums to 1."""
        if U_mu.grid != U_nu.grid:
            raise ValueError("marginal potentials must live on the same grid")
        if m_weights.shape != (U_mu.grid.n_nodes,):
            raise ValueError("m_weights do not match the potentials' grid")

        def centered(U: GridFunction) -> tuple[GridFunction, np.ndarray]:
            shift = float(logsumexp(np.log(m_weights) - U.flat))
            U_c = U + shift
            return U_c, m_weights * np.exp(-U_c.flat)

        U_mu_c, mu = centered(U_mu)
        U_nu_c, nu = centered(U_nu)
        return cls(U_mu_c, U_nu_c, mu / mu.sum(), nu / nu.sum())

    @property
    def grid(self):
        return self.U_mu.grid

    def mean_mu(self, f: GridFunction) -> float:
        """Expectation of ``f`` under mu."""
        return float(self.mu_weights @ f.flat)

    def mean_nu(self, f: GridFunction) -> float:
        """Expectation of ``f`` under nu."""
        return float(self.nu_weights @ f.flat)


@dataclass(frozen=True)
class IterationRecord:
    """Scalar diagnostics appended after each full Sinkhorn update."""

    n: int
    sup_change_phi: float
    sup_change_psi: float
    lip_psi: float


@dataclass
class SinkhornState:
    """Mutable solver state: iterate counter, current potentials, history.

    ``phi`` holds the zero function until the first update; the natural
    zeroth iterate of the alternating scheme is (0, psi0).  When
    ``keep_iterates`` is requested, ``phi_iterates[n]``/``psi_iterates[n]``
    hold the n-th iterates starting from n = 0.
    """

    n: int
    phi: GridFunction
    psi: GridFunction
    history: list[IterationRecord] = field(default_factory=list)
    phi_iterates: list[GridFunction] = field(default_factory=list)
    psi_iterates: list[GridFunction] = field(default_factory=list)
    converged: bool = False

    @property
    def residual(self) -> float:
        """Sup-norm change of psi over the most recent update."""
        return self.history[-1].sup_change_psi if self.history else np.inf


def initial_state(
    marginals: MarginalPair, psi0: GridFunction | None = None, *, keep_iterates: bool = False
) -> SinkhornState:
    """Fresh state at n = 0 with psi = psi0 (zero unless supplied)."""
    grid = marginals.grid
    psi = GridFunction.zeros(grid) if psi0 is None else psi0
    if psi.grid != grid:
        raise ValueError("psi0 must live on the marginals' grid")
    state = SinkhornState(n=0, phi=GridFunction.zeros(grid), psi=psi)
    if keep_iterates:
        state.phi_iterates.append(state.phi)
        state.psi_iterates.append(state.psi)
    return state


def sinkhorn_step(
    state: SinkhornState, kernel: MarkovKernel, marginals: MarginalPair
) -> SinkhornState:
    """One full update (phi half-step then psi half-step), in place."""
    if kernel.grid != marginals.grid:
        raise ValueError("kernel and marginals must share a grid")
    phi = marginals.U_mu + apply_log(kernel, -state.psi)
    psi = marginals.U_nu + apply_log(kernel, -phi)
    record = IterationRecord(
        n=state.n + 1,
        sup_change_phi=sup_norm(phi - state.phi),
        sup_change_psi=sup_norm(psi - state.psi),
        lip_psi=lip_norm(psi),
    )
    state.n += 1
    state.phi = phi
    state.psi = psi
    state.history.append(record)
    if state.phi_iterates or state.psi_iterates:
        state.phi_iterates.append(phi)
        state.psi_iterates.append(psi)
    return state


def run(
    kernel: MarkovKernel,
    marginals: MarginalPair,
    psi0: GridFunction | None = None,
    *,
    max_iter: int = 500,
    tol: float = 1e-12,
    keep_iterates: bool = False,
) -> SinkhornState:
    """Iterate until the sup-norm change of psi drops below ``tol``.

    Non-convergence is not fatal: the returned state carries
    ``converged = False`` and the final residual sits in the history.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    state = initial_state(marginals, psi0, keep_iterates=keep_iterates)
    for _ in range(max_iter):
        sinkhorn_step(state, kernel, marginals)
        if state.residual <= tol:
            state.converged = True
            break
    return state


def symmetric_normalize(
    phi: GridFunction, psi: GridFunction, marginals: MarginalPair
) -> tuple[GridFunction, GridFunction, float]:
    """Shift to (phi + c, psi - c) so both sides carry equal transport cost.

    The balancing condition is
    ``int phi dmu - int U_mu dmu  =  int psi dnu - int U_nu dnu``;
    returns the shifted pair together with the constant c that achieves it.
    """
    lhs = marginals.mean_mu(phi) - marginals.mean_mu(marginals.U_mu)
    rhs = marginals.mean_nu(psi) - marginals.mean_nu(marginals.U_nu)
    c = 0.5 * (rhs - lhs)
    return phi + c, psi - c, c


@dataclass(frozen=True)
class ReferencePotentials:
    """Converged, symmetrically normalized potentials (the solver's target)."""

    phi_star: GridFunction
    psi_star: GridFunction
    residual: float
    shift: float
    iterations: int


def _fixed_point_residual(
    phi: GridFunction, psi: GridFunction, kernel: MarkovKernel, marginals: MarginalPair
) -> float:
    defect_phi = sup_norm(marginals.U_mu + apply_log(kernel, -psi) - phi)
    defect_psi = sup_norm(marginals.U_nu + apply_log(kernel, -phi) - psi)
    return max(defect_phi, defect_psi)


def reference_potentials(
    kernel: MarkovKernel,
    marginals: MarginalPair,
    *,
    tol: float = 1e-13,
    max_iter: int = 2000,
) -> ReferencePotentials:
    """Solve to (near) machine precision and symmetrically normalize.

    Stops at ``tol`` or once the residual has plateaued for five consecutive
    updates (rounding noise floor), whichever comes first.
    """
    state = initial_state(marginals)
    best = np.inf
    stall = 0
    for _ in range(max_iter):
        sinkhorn_step(state, kernel, marginals)
        change = state.residual
        if change <= tol:
            break
        if change < best:
            best = change
            stall = 0
        else:
            stall += 1
            if stall >= 5:
                break
    phi, psi, shift = symmetric_normalize(state.phi, state.psi, marginals)
    residual = _fixed_point_residual(phi, psi, kernel, marginals)
    if residual > REFERENCE_RESIDUAL_TOL:
        raise RuntimeError(
            f"reference potentials did not reach a fixed point: residual "
            f"{residual:.3e} after {state.n} iterations"
        )
    return ReferencePotentials(phi, psi, residual, shift, state.n)


def normalize_iterates(
    state: SinkhornState, reference: ReferencePotentials, marginals: MarginalPair
) -> tuple[list[GridFunction], list[GridFunction]]:
    """Re-center every kept iterate to share the reference's mean.

    Returns lists indexed by n with ``int phi_n dmu = int phi* dmu`` (and the
    nu-analogue for psi) holding exactly; gradients are untouched because the
    adjustment is an additive constant.
    """
    if not state.psi_iterates:
        raise ValueError("run with keep_iterates=True to normalize iterates")
    mean_phi_star = marginals.mean_mu(reference.phi_star)
    mean_psi_star = marginals.mean_nu(reference.psi_star)
    phis = [f - (marginals.mean_mu(f) - mean_phi_star) for f in state.phi_iterates]
    psis = [f - (marginals.mean_nu(f) - mean_psi_star) for f in state.psi_iterates]
    return phis, psis


def plan(phi: GridFunction, psi: GridFunction, kernel: MarkovKernel) -> np.ndarray:
    """Dense coupling pi[x, y] = m[x] K[x, y] e^{-phi(x) - psi(y)}.

    Assembled in log space and exponentiated at the end; no normalization is
    applied, so the total mass is a genuine diagnostic.  Refuses grids past
    the dense cap — use :func:`plan_marginals` there instead.
    """
    M = kernel.grid.n_nodes
    if M > DENSE_SIZE_CAP:
        raise ValueError(
            f"grid has {M} nodes; dense plans are limited to {DENSE_SIZE_CAP}"
        )
    with np.errstate(divide="ignore"):
        log_pi = (
            np.log(kernel.m_weights)[:, None]
            + np.log(kernel.K)
            - phi.flat[:, None]
            - psi.flat[None, :]
        )
    return np.exp(log_pi)


def plan_marginals(
    phi: GridFunction, psi: GridFunction, kernel: MarkovKernel
) -> tuple[np.ndarray, np.ndarray]:
    """Both marginals of the plan, without materializing it.

    Reversibility of the kernel lets the second marginal reuse the forward
    kernel: sum_x m[x] K[x,y] e^{-phi(x)} = m[y] (K e^{-phi})(y).
    """
    first = kernel.m_weights * np.exp(apply_log(kernel, -psi).flat - phi.flat)
    second = kernel.m_weights * np.exp(apply_log(kernel, -phi).flat - psi.flat)
    return first, second


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Relative entropy sum p log(p/q) with the 0 log 0 = 0 convention."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ValueError("weight vectors must have matching shapes")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("weights must be nonnegative")
    support = p > 0
    if np.any(q[support] == 0):
        raise ValueError("p has mass where q vanishes")
    ps, qs = p[support], q[support]
    return float(np.sum(ps * np.log(ps / qs)))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """Total-variation distance between two weight vectors."""
    return 0.5 * float(np.sum(np.abs(np.asarray(p).ravel() - np.asarray(q).ravel())))


def entropic_cost(pi: np.ndarray, reference: np.ndarray) -> float:
    """KL(pi | R) for dense plan matrices."""
    return kl_divergence(pi.ravel(), reference.ravel())


def entropic_cost_from_potentials(
    phi: GridFunction, psi: GridFunction, kernel: MarkovKernel
) -> float:
    """KL(pi | R) via the potentials only.

    Since log(dpi/dR) = -phi(x) - psi(y), the divergence collapses to
    ``-int phi dpi_0 - int psi dpi_1`` with pi's own marginals — no dense
    matrix needed.
    """
    first, second = plan_marginals(phi, psi, kernel)
    return -float(first @ phi.flat) - float(second @ psi.flat)


def iteration_table(
    state: SinkhornState,
    reference: ReferencePotentials,
    marginals: MarginalPair,
    kernel: MarkovKernel,
    fbar,
) -> list[dict[str, float]]:
    """Per-iterate error table against the reference potentials.

    One row per kept iterate n: sup and gradient errors of the re-centered
    iterates, the weighted-Lipschitz error of psi measured through ``fbar``
    (a rate triplet), the raw Lipschitz norm of psi, and the plan cost.
    """
    from .grid import f_lip_norm  # local import: avoids a cycle at load time

    phis, psis = normalize_iterates(state, reference, marginals)
    rows: list[dict[str, float]] = []
    for n, (phi_n, psi_n) in enumerate(zip(phis, psis)):
        grad_phi_err = float(
            np.max(np.abs(gradient(phi_n) - gradient(reference.phi_star)))
        )
        grad_psi_err = float(
            np.max(np.abs(gradient(psi_n) - gradient(reference.psi_star)))
        )
        rows.append(
            {
                "n": float(n),
                "sup_err_phi": sup_norm(phi_n - reference.phi_star),
                "sup_err_psi": sup_norm(psi_n - reference.psi_star),
                "grad_err_phi": grad_phi_err,
                "grad_err_psi": grad_psi_err,
                "flip_err_psi": f_lip_norm(
                    state.psi_iterates[n] - reference.psi_star, fbar
                ),
                "lip_psi": lip_norm(state.psi_iterates[n]),
                "kl_cost": entropic_cost_from_potentials(
                    state.phi_iterates[n], state.psi_iterates[n], kernel
                ),
            }
        )
    return rows

"""Reflection-coupled diffusion pairs and empirical contraction checks.

Two copies of the Langevin diffusion are driven by mirrored Brownian
increments: the second process sees the increment reflected across the unit
vector e pointing along the (sine-mapped) separation.  Because the reflection
only flips the component along e, the separation carries all of its noise in
that single direction — which is what makes coalescence detectable with a
one-dimensional Brownian-bridge crossing probability on top of the plain
proximity threshold.

The controlled variant applies the feedback force evaluated at the *first*
process to both equations; that asymmetry is what the one-step solver
contraction needs, and it is deliberate, not a bug.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .grid import TorusGrid, _wrapped_difference, sine_distance
from .hjb import HjbEvolution, _drift_sampler, _interp_periodic, _upsample
from .kernels import PotentialSpec

__all__ = [
    "DriftSpec",
    "CouplingPath",
    "CouplingEstimate",
    "SupermartingaleReport",
    "step_pair",
    "simulate_pair",
    "contraction_estimate",
    "supermartingale_check",
]

#: Separation below which a pair is declared coalesced (fraction of L).
COALESCE_TOL_FACTOR = 1e-4


@dataclass(frozen=True)
class DriftSpec:
    """Drift b = -grad V plus an optional feedback control field.

    The control is an :class:`~torus_schrodinger.hjb.HjbEvolution`; its
    gradient enters both coupled equations evaluated at the X state,
    piecewise-constant in time on the evolution's own ladder.
    """

    grid: TorusGrid
    potential: PotentialSpec
    control: HjbEvolution | None = None
    upsample: int = 8

    def __post_init__(self) -> None:
        if self.control is not None and self.control.grid != self.grid:
            raise ValueError("control field must live on the drift's grid")

    @cached_property
    def _base(self):
        return _drift_sampler(self.grid, self.potential, self.upsample)

    @cached_property
    def _control_grad(self) -> np.ndarray | None:
        if self.control is None:
            return None
        return np.stack(
            [
                np.stack([_upsample(g, self.upsample) for g in gk])
                for gk in self.control.gradients
            ]
        )

    def drift_pair(self, s: float, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Drifts of both processes at time s; control at X in both."""
        bX = self._base(X)
        bY = self._base(Y)
        grad = self._control_grad
        if grad is not None:
            times = self.control.times
            node = int(np.searchsorted(times, s + 1e-12, side="right")) - 1
            node = min(max(node, 0), len(times) - 1)
            q = np.stack(
                [
                    -_interp_periodic(grad[node, a], X, self.grid.L)
                    for a in range(self.grid.d)
                ],
                axis=1,
            )
            bX = bX + q
            bY = bY + q
        return bX, bY


def step_pair(
    X: np.ndarray,
    Y: np.ndarray,
    s: float,
    dt: float,
    drift: DriftSpec,
    increment: np.ndarray,
    *,
    coalesce_tol: float,
    bridge_uniform: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One Euler step of the coupled pair; vectorized over rows of X, Y.

    ``increment`` is the N(0, dt I) draw for the X process; Y receives its
    Householder reflection across the separation direction.  Returns the
    wrapped states and a bool mask of pairs that coalesced during this step
    (already-identical pairs move synchronously and stay marked).

    Coalescence fires on (a) proximity of the new states, or (b) a sign
    change / Brownian-bridge crossing of the separation projected on e —
    the latter needs ``bridge_uniform`` in [0,1) per row and is gated on the
    transverse separation staying within tolerance, since the noise cannot
    close a transverse gap within one step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = drift.grid
    L = grid.L
    bX, bY = drift.drift_pair(s, X, Y)
    z = _wrapped_difference(grid, X, Y)
    e_raw = np.sin(np.pi * z / L)
    norms = np.linalg.norm(e_raw, axis=1)
    sync = norms == 0.0
    safe = np.where(sync, 1.0, norms)
    e = e_raw / safe[:, None]
    proj = np.einsum("ij,ij->i", e, increment)
    reflected = increment - 2.0 * e * proj[:, None]
    X_new = np.mod(X + bX * dt + increment, L)
    Y_new = np.mod(Y + bY * dt + reflected, L)

    # the separation moves only along e (plus drift): track it unwrapped
    z_new = z + (bX - bY) * dt + 2.0 * e * proj[:, None]
    p0 = np.einsum("ij,ij->i", e, z)
    p1 = np.einsum("ij,ij->i", e, z_new)
    perp = z_new - p1[:, None] * e
    gate = np.linalg.norm(perp, axis=1) <= coalesce_tol
    crossed = p1 <= 0.0
    if bridge_uniform is not None:
        prob = np.exp(-p0 * np.maximum(p1, 0.0) / (2.0 * dt))
        crossed = crossed | (bridge_uniform < prob)
    coalesced = sync | (gate & crossed) | (sine_distance(grid, X_new, Y_new) <= coalesce_tol)
    Y_new = np.where(coalesced[:, None], X_new, Y_new)
    return X_new, Y_new, coalesced


@dataclass(frozen=True)
class CouplingPath:
    """A single simulated pair, kept step by step for inspection."""

    dt: float
    times: np.ndarray = field(repr=False)
    X: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    tau: float | None
    seed: int


@dataclass(frozen=True)
class CouplingEstimate:
    """Monte Carlo summary of f_b(separation) at the horizon and checkpoints.

    ``checkpoint_values[k]`` holds the per-path f_b(delta) samples at
    ``checkpoint_times[k]`` — kept so downstream checks can run paired tests.
    """

    n_paths: int
    mean: float
    std_error: float
    coalesced_fraction: float
    delta0: float
    horizon: float
    start_time: float
    checkpoint_times: np.ndarray = field(repr=False)
    checkpoint_values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.mean < 0 or self.std_error < 0:
            raise ValueError("mean and standard error must be nonnegative")

    def contraction_bound(self, lam: float) -> float:
        """The target e^{-lam pi^2 (T - t)} * delta0."""
        return math.exp(-lam * math.pi**2 * (self.horizon - self.start_time)) * self.delta0


def _path_noise(
    seed: int, start: int, count: int, steps: int, d: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-path Gaussian and uniform draws from counter-based streams."""
    normals = np.empty((count, steps, d))
    uniforms = np.empty((count, steps))
    for i in range(count):
        bits = np.random.Philox(key=np.array([seed, start + i], dtype=np.uint64))
        gen = np.random.Generator(bits)
        normals[i] = gen.standard_normal((steps, d))
        uniforms[i] = gen.uniform(size=steps)
    return normals, uniforms


def _step_schedule(t: float, T: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    n_steps = int(math.ceil((T - t) / dt - 1e-12))
    sizes = np.full(n_steps, dt)
    sizes[-1] = (T - t) - dt * (n_steps - 1)
    boundaries = t + np.concatenate([[0.0], np.cumsum(sizes)])
    boundaries[-1] = T
    return sizes, boundaries


def simulate_pair(
    x: np.ndarray,
    y: np.ndarray,
    t: float,
    T: float,
    dt: float,
    drift: DriftSpec,
    seed: int = 0,
    coalesce_tol: float | None = None,
) -> CouplingPath:
    """One coupled pair with full trajectory; uses the stream of path 0."""
    grid = drift.grid
    if coalesce_tol is None:
        coalesce_tol = COALESCE_TOL_FACTOR * grid.L
    sizes, boundaries = _step_schedule(t, T, dt)
    normals, uniforms = _path_noise(seed, 0, 1, len(sizes), grid.d)
    X = np.asarray(x, dtype=float).reshape(1, grid.d) % grid.L
    Y = np.asarray(y, dtype=float).reshape(1, grid.d) % grid.L
    xs, ys = [X[0].copy()], [Y[0].copy()]
    tau: float | None = None
    if np.array_equal(X, Y):
        tau = t
    for k, ds in enumerate(sizes):
        X, Y, hit = step_pair(
            X,
            Y,
            boundaries[k],
            ds,
            drift,
            math.sqrt(ds) * normals[:, k, :],
            coalesce_tol=coalesce_tol,
            bridge_uniform=uniforms[:, k],
        )
        if tau is None and hit[0]:
            tau = float(boundaries[k + 1])
        xs.append(X[0].copy())
        ys.append(Y[0].copy())
    return CouplingPath(dt, boundaries, np.array(xs), np.array(ys), tau, seed)


def contraction_estimate(
    x: np.ndarray,
    y: np.ndarray,
    t: float,
    T: float,
    dt: float,
    drift: DriftSpec,
    fb,
    *,
    n_paths: int = 10_000,
    seed: int = 0,
    checkpoints: np.ndarray | None = None,
    coalesce_tol: float | None = None,
    block_size: int = 4096,
    jobs: int = 1,
) -> CouplingEstimate:
    """Mean f_b(separation at T) over coupled pairs started at (x, y).

    ``fb`` is a rate triplet (only its concave distortion ``.f`` is used).
    Checkpoints are snapped to step boundaries; per-path samples at each are
    retained in the estimate for supermartingale checks.  Bit-reproducible
    for fixed seed, independent of block size and ``jobs``.
    """
    grid = drift.grid
    if n_paths < 100:
        raise ValueError("need at least 100 paths for a meaningful estimate")
    if dt > 1e-2:
        raise ValueError("dt above 1e-2 is too coarse for the coupling step")
    if not t < T:
        raise ValueError("need t < T")
    if coalesce_tol is None:
        coalesce_tol = COALESCE_TOL_FACTOR * grid.L
    x = np.asarray(x, dtype=float).reshape(grid.d) % grid.L
    y = np.asarray(y, dtype=float).reshape(grid.d) % grid.L
    sizes, boundaries = _step_schedule(t, T, dt)
    if checkpoints is None:
        checkpoints = np.linspace(t, T, 9)
    cp_idx = np.unique(
        [int(np.argmin(np.abs(boundaries - c))) for c in np.asarray(checkpoints)]
    )
    cp_times = boundaries[cp_idx]
    cp_of_boundary = {int(i): j for j, i in enumerate(cp_idx)}

    def run_block(start: int, count: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        normals, uniforms = _path_noise(seed, start, count, len(sizes), grid.d)
        X = np.broadcast_to(x, (count, grid.d)).copy()
        Y = np.broadcast_to(y, (count, grid.d)).copy()
        cp_vals = np.empty((len(cp_idx), count))
        if 0 in cp_of_boundary:
            cp_vals[cp_of_boundary[0]] = fb.f(sine_distance(grid, X, Y))
        for k, ds in enumerate(sizes):
            X, Y, _ = step_pair(
                X,
                Y,
                boundaries[k],
                ds,
                drift,
                math.sqrt(ds) * normals[:, k, :],
                coalesce_tol=coalesce_tol,
                bridge_uniform=uniforms[:, k],
            )
            j = cp_of_boundary.get(k + 1)
            if j is not None:
                cp_vals[j] = fb.f(sine_distance(grid, X, Y))
        final = fb.f(sine_distance(grid, X, Y))
        coalesced = np.all(X == Y, axis=1)
        return final, coalesced, cp_vals

    blocks = [(s, min(block_size, n_paths - s)) for s in range(0, n_paths, block_size)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pieces = list(pool.map(lambda b: run_block(*b), blocks))
    else:
        pieces = [run_block(*b) for b in blocks]
    final = np.concatenate([p[0] for p in pieces])
    coalesced = np.concatenate([p[1] for p in pieces])
    cp_values = np.concatenate([p[2] for p in pieces], axis=1)
    return CouplingEstimate(
        n_paths=n_paths,
        mean=float(np.mean(final)),
        std_error=float(np.std(final, ddof=1) / math.sqrt(n_paths)),
        coalesced_fraction=float(np.mean(coalesced)),
        delta0=float(sine_distance(grid, x[None, :], y[None, :])[0]),
        horizon=float(T),
        start_time=float(t),
        checkpoint_times=cp_times,
        checkpoint_values=cp_values,
    )


@dataclass(frozen=True)
class SupermartingaleReport:
    """One-sided checks that e^{lam pi^2 s} f_b(delta_s) trends down.

    ``margins[k]`` compares consecutive checkpoint levels,
    (mean_{k+1} - mean_k) - 2*sqrt(SE_k^2 + SE_{k+1}^2), over the weighted
    per-checkpoint sample means; the property passes when every margin is
    nonpositive.  Late checkpoints ride on a handful of surviving paths, so
    the level uncertainties — not the much smaller paired-difference noise —
    set the honest resolution for comparing the sequence values.
    """

    lam: float
    times: np.ndarray = field(repr=False)
    weighted_means: np.ndarray = field(repr=False)
    margins: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins <= 0.0))


def supermartingale_check(estimate: CouplingEstimate, lam: float) -> SupermartingaleReport:
    """Evaluate the supermartingale property on the stored checkpoints."""
    if estimate.checkpoint_times.size < 2:
        raise ValueError("need at least two checkpoints")
    elapsed = estimate.checkpoint_times - estimate.start_time
    weights = np.exp(lam * np.pi**2 * elapsed)
    weighted = weights[:, None] * estimate.checkpoint_values
    means = weighted.mean(axis=1)
    ses = weighted.std(axis=1, ddof=1) / math.sqrt(estimate.n_paths)
    return SupermartingaleReport(
        lam=lam,
        times=estimate.checkpoint_times,
        weighted_means=means,
        margins=np.diff(means) - 2.0 * np.hypot(ses[:-1], ses[1:]),
    )

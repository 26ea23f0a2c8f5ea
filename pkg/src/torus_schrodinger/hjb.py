"""Value functions of the entropic control problem and their verification.

The value function u(t) = -log P_{T-t} e^{-h} is never produced by
time-stepping the nonlinear PDE: the log transform routes it through the
semigroup, which is exact in space and agrees with the solver module by
construction.  What *is* simulated is the controlled diffusion itself —
:func:`soc_value_mc` runs Euler–Maruyama paths under the feedback control
q = -grad u and checks that the realized cost matches u, which exercises the
PDE/control link from the opposite side.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grid import GridFunction, TorusGrid, _spectral_wavenumbers, f_lip_norm, gradient
from .kernels import KernelFactory, PotentialSpec, potential_gradient

__all__ = [
    "HjbEvolution",
    "SocEstimate",
    "evolve",
    "contraction_ratio",
    "difference_evolution",
    "hjb_residual",
    "soc_value_mc",
]


@dataclass(frozen=True)
class HjbEvolution:
    """u(t_k) = -log P_{T - t_k} e^{-h} on a fixed ladder of time nodes.

    ``values[k]`` is u(t_k); ``gradients[k]`` its spectral gradient with
    shape (d, *grid.shape).  The last node is the horizon, where u(T) = h
    holds exactly (no kernel is applied there).
    """

    grid: TorusGrid
    T: float
    times: np.ndarray = field(repr=False)
    values: tuple[GridFunction, ...] = field(repr=False)
    gradients: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self) -> None:
        if self.times.ndim != 1 or self.times.size < 2:
            raise ValueError("need at least two time nodes")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time nodes must be strictly increasing")
        if self.times[0] < 0 or self.times[-1] != self.T:
            raise ValueError("time nodes must sit in [0, T] and end at T")

    @property
    def terminal(self) -> GridFunction:
        return self.values[-1]

    def max_spacing(self) -> float:
        return float(np.max(np.diff(self.times)))


def evolve(
    h: GridFunction,
    T: float,
    factory: KernelFactory,
    times: np.ndarray | None = None,
) -> HjbEvolution:
    """Evolve terminal data h backwards through u(t) = -log P_{T-t} e^{-h}."""
    if h.grid != factory.grid:
        raise ValueError("terminal data and kernel factory must share a grid")
    if times is None:
        times = np.linspace(0.0, T, 64)
    times = np.asarray(times, dtype=float)
    values = []
    for t in times:
        if t == T:
            values.append(h)
        else:
            values.append(GridFunction(h.grid, -factory.apply_log(T - t, -h.flat).reshape(h.grid.shape)))
    grads = tuple(gradient(u) for u in values)
    return HjbEvolution(h.grid, float(T), times, tuple(values), grads)


def contraction_ratio(evolution: HjbEvolution, fb) -> np.ndarray:
    """Per-node ratios ||u(t)||_f / ||h||_f, to compare with e^{-lam pi^2 (T-t)}.

    ``fb`` is a rate triplet (anything with a concave distortion ``.f``).
    """
    terminal_norm = f_lip_norm(evolution.terminal, fb)
    if terminal_norm == 0.0:
        raise ValueError("terminal data has zero weighted-Lipschitz norm")
    return np.array([f_lip_norm(u, fb) / terminal_norm for u in evolution.values])


def difference_evolution(
    psi_n: GridFunction,
    psi_star: GridFunction,
    T: float,
    factory: KernelFactory,
    times: np.ndarray | None = None,
) -> HjbEvolution:
    """Evolution of the difference of two value functions with terminals
    psi_n and psi_star.

    At t = 0 this is exactly the gap between consecutive solver iterates (up
    to the additive gauge), which is how the one-step contraction is proved.
    """
    if psi_n.grid != psi_star.grid:
        raise ValueError("both terminal functions must live on one grid")
    a = evolve(psi_n, T, factory, times)
    b = evolve(psi_star, T, factory, times)
    values = tuple(u - v for u, v in zip(a.values, b.values))
    grads = tuple(gu - gv for gu, gv in zip(a.gradients, b.gradients))
    return HjbEvolution(psi_n.grid, float(T), a.times, values, grads)


def _laplacian(f: GridFunction) -> np.ndarray:
    grid = f.grid
    w = _spectral_wavenumbers(grid)  # 1d (N,), Nyquist zeroed
    symbol = np.zeros(grid.shape)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.N
        symbol = symbol - w.reshape(shape) ** 2
    return np.real(np.fft.ifftn(symbol * np.fft.fftn(f.values)))


def hjb_residual(evolution: HjbEvolution, potential: PotentialSpec) -> float:
    """Max defect of d_t u + (1/2) Lap u - grad V . grad u - (1/2)|grad u|^2.

    Time derivative by centered differences on the evolution's own ladder,
    space by spectral operators; the result is O(dt^2) for smooth data and
    serves as an independent sanity check that u solves the right PDE.
    """
    grid = evolution.grid
    grad_V = potential_gradient(grid, potential)
    worst = 0.0
    for k in range(1, len(evolution.times) - 1):
        dt_c = evolution.times[k + 1] - evolution.times[k - 1]
        du_dt = (evolution.values[k + 1].values - evolution.values[k - 1].values) / dt_c
        g = evolution.gradients[k]
        residual = (
            du_dt
            + 0.5 * _laplacian(evolution.values[k])
            - np.sum(grad_V * g, axis=0)
            - 0.5 * np.sum(g**2, axis=0)
        )
        worst = max(worst, float(np.max(np.abs(residual))))
    return worst


# ---------------------------------------------------------------------------
# Monte Carlo verification of the control problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SocEstimate:
    """Sample mean and standard error of the realized control cost."""

    value: float
    std_error: float
    n_paths: int


def _upsample_axis(a: np.ndarray, axis: int, factor: int) -> np.ndarray:
    """Trigonometric interpolation of one periodic axis to ``factor * N``."""
    if factor == 1:
        return np.asarray(a, dtype=float)
    N = a.shape[axis]
    M = N * factor
    A = np.moveaxis(np.fft.fft(a, axis=axis), axis, -1)
    B = np.zeros(A.shape[:-1] + (M,), dtype=complex)
    npos = (N + 1) // 2
    B[..., :npos] = A[..., :npos]
    if N % 2 == 0:
        # split the Nyquist coefficient symmetrically to keep the result real
        B[..., N // 2] = 0.5 * A[..., N // 2]
        B[..., M - N // 2] = 0.5 * A[..., N // 2]
        B[..., M - N // 2 + 1 :] = A[..., N // 2 + 1 :]
    else:
        B[..., M - (N - npos) :] = A[..., npos:]
    out = np.fft.ifft(B, axis=-1).real * factor
    return np.moveaxis(out, -1, axis)


def _upsample(values: np.ndarray, factor: int) -> np.ndarray:
    out = np.asarray(values, dtype=float)
    for axis in range(out.ndim):
        out = _upsample_axis(out, axis, factor)
    return out


def _interp_periodic(fine: np.ndarray, x: np.ndarray, L: float) -> np.ndarray:
    """Multilinear periodic interpolation of ``fine`` at points x (B, d)."""
    d = x.shape[1]
    M = fine.shape[0]
    u = x * (M / L)
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    out = np.zeros(x.shape[0])
    for corner in itertools.product((0, 1), repeat=d):
        weight = np.ones(x.shape[0])
        idx = []
        for a, c in enumerate(corner):
            weight = weight * (frac[:, a] if c else 1.0 - frac[:, a])
            idx.append((i0[:, a] + c) % M)
        out += weight * fine[tuple(idx)]
    return out


def _drift_sampler(grid: TorusGrid, potential: PotentialSpec, factor: int):
    """Returns a callable x (B, d) -> -grad V(x) (B, d) at continuous points."""
    if potential.kind == "zero":
        return lambda x: np.zeros_like(x)
    if potential.kind == "trig":
        alphas = np.asarray(potential.alphas)
        betas = np.asarray(potential.betas)
        omegas = np.asarray(potential.omegas)
        scale = np.pi / (4.0 * grid.L)

        def minus_grad_trig(x: np.ndarray) -> np.ndarray:
            theta = 2.0 * np.pi * x / grid.L + omegas
            return -scale * (alphas * np.cos(theta) - betas * np.sin(theta))

        return minus_grad_trig
    fine = np.stack(
        [_upsample(g, factor) for g in potential_gradient(grid, potential)]
    )

    def minus_grad_table(x: np.ndarray) -> np.ndarray:
        return np.stack(
            [-_interp_periodic(fine[a], x, grid.L) for a in range(grid.d)], axis=1
        )

    return minus_grad_table


def _path_normals(seed: int, start: int, count: int, steps: int, d: int) -> np.ndarray:
    """Per-path counter-based streams keyed by (seed, global path index)."""
    out = np.empty((count, steps, d))
    for i in range(count):
        bits = np.random.Philox(key=np.array([seed, start + i], dtype=np.uint64))
        out[i] = np.random.Generator(bits).standard_normal((steps, d))
    return out


def soc_value_mc(
    evolution: HjbEvolution,
    potential: PotentialSpec,
    x: np.ndarray,
    t: float,
    *,
    n_paths: int = 20_000,
    dt: float = 1e-3,
    seed: int = 0,
    control: np.ndarray | None = None,
    upsample: int = 8,
    block_size: int = 4096,
    jobs: int = 1,
) -> SocEstimate:
    """Realized cost (1/2) int |q|^2 ds + h(X_T) of the controlled diffusion.

    Paths follow dX = (-grad V(X) + q(X)) ds + dB from (t, x) with wrap;
    ``control=None`` uses the feedback q = -grad u interpolated from the
    evolution (multilinear on an upsampled grid, left time node), otherwise
    the given constant vector is applied.  Results are bit-reproducible for
    a given seed regardless of ``jobs``: every path owns a counter-based
    stream and the final reduction runs in path order.
    """
    grid = evolution.grid
    if dt > grid.h:
        raise ValueError(f"dt={dt} exceeds the grid spacing {grid.h}")
    if not 0.0 <= t < evolution.T:
        raise ValueError("start time must lie in [0, T)")
    if evolution.max_spacing() > dt * (1 + 1e-9):
        raise ValueError(
            "evolution time grid is coarser than dt; rebuild it with at "
            "least one node per Monte Carlo step"
        )
    x = np.asarray(x, dtype=float).reshape(grid.d)

    n_steps = int(math.ceil((evolution.T - t) / dt - 1e-12))
    step_sizes = np.full(n_steps, dt)
    step_sizes[-1] = (evolution.T - t) - dt * (n_steps - 1)
    step_starts = t + dt * np.arange(n_steps)

    # control field on the fine spatial grid: (node, component, fine shape)
    fine_grad = np.stack(
        [np.stack([_upsample(g, upsample) for g in gk]) for gk in evolution.gradients]
    )
    fine_terminal = _upsample(evolution.terminal.values, upsample)
    node_of_step = np.searchsorted(evolution.times, step_starts + 1e-12, side="right") - 1
    minus_grad_V = _drift_sampler(grid, potential, upsample)

    def run_block(start: int, count: int) -> np.ndarray:
        normals = _path_normals(seed, start, count, n_steps, grid.d)
        X = np.broadcast_to(x, (count, grid.d)).copy()
        cost = np.zeros(count)
        for k in range(n_steps):
            ds = step_sizes[k]
            if control is None:
                node = node_of_step[k]
                q = np.stack(
                    [
                        -_interp_periodic(fine_grad[node, a], X, grid.L)
                        for a in range(grid.d)
                    ],
                    axis=1,
                )
            else:
                q = np.broadcast_to(control, (count, grid.d))
            cost += 0.5 * np.sum(q * q, axis=1) * ds
            X = np.mod(
                X + (minus_grad_V(X) + q) * ds + math.sqrt(ds) * normals[:, k, :],
                grid.L,
            )
        return cost + _interp_periodic(fine_terminal, X, grid.L)

    blocks = [
        (s, min(block_size, n_paths - s)) for s in range(0, n_paths, block_size)
    ]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pieces = list(pool.map(lambda b: run_block(*b), blocks))
    else:
        pieces = [run_block(*b) for b in blocks]
    values = np.concatenate(pieces)
    se = float(np.std(values, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return SocEstimate(float(np.mean(values)), se, n_paths)

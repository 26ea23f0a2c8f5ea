"""Reversible diffusion semigroups on the periodic grid.

This module builds the stationary measure m ∝ e^{-2V}h^d and dense Markov
transition matrices K ≈ P_t for the Langevin diffusion
dX = -grad V(X) dt + dB on the torus, in three ways:

* ``heat_kernel_fft`` — the V = 0 kernel in closed circulant form, one scalar
  exponential per Fourier mode.  This is the independent oracle the dense
  generator path is checked against.
* the dense path of ``kernel_general`` — eigendecomposition of the
  divergence-form generator G = -(1/2) e^{2V} div(e^{-2V} grad .).  The
  gradient is discretized with the *staggered* spectral derivative (values at
  node midpoints), which keeps the operator exactly m-reversible, exactly
  stochastic, spectrally accurate, and — unlike a node-centered spectral
  derivative — leaves no undamped sawtooth mode at the Nyquist frequency.
  For V = 0 it reduces to the exact spectral Laplacian.
* the Crank–Nicolson path of ``kernel_general`` — finite-volume flux form
  a_{ij} = e^{V_i - V_j}/(2h^2) on nearest neighbours, whose off-diagonal
  nonnegativity makes every CN substep a (row-renormalized) stochastic
  matrix.  This is the fallback beyond the dense size cap and the basis of
  the small-time identity checks.

Every constructed kernel is validated: entries >= 0 after clamping
(entries below -1e-12 are an error), row sums within 1e-10 of 1, and the
detailed-balance flux m_x K[x, y] symmetric within 1e-8.

Kernel matrices can be cached on disk (see ``TS_CACHE_DIR``); the binary
layout is a 64-byte header followed by the row-major float64 matrix, with a
CRC over the payload.  See ``save_kernel_file`` for the exact field list.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .grid import GridFunction, TorusGrid, gradient
from .rates import Modulus, modulus_constant, modulus_trig

if TYPE_CHECKING:
    from numpy.typing import NDArray

__all__ = [
    "PotentialSpec",
    "MarkovKernel",
    "KernelFactory",
    "potential_values",
    "potential_gradient",
    "potential_modulus",
    "stationary_measure",
    "heat_kernel_fft",
    "generator_matrix",
    "kernel_factory",
    "kernel_general",
    "apply_log",
    "default_substeps",
    "save_kernel_file",
    "load_kernel_file",
    "kernel_cache_key",
    "KERNEL_CACHE_ENV",
    "ROWSUM_TOL",
    "REVERSIBILITY_TOL",
    "CLAMP_TOL",
    "DENSE_SIZE_CAP",
]

ROWSUM_TOL = 1e-10
REVERSIBILITY_TOL = 1e-8
CLAMP_TOL = 1e-12
DENSE_SIZE_CAP = 4096

KERNEL_CACHE_ENV = "TS_CACHE_DIR"


# ---------------------------------------------------------------------------
# drift potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialSpec:
    """Drift potential V: zero, separable trigonometric, or tabulated.

    The trigonometric variant is
    V(x) = (L/8) * sum_i [alpha_i sin(2 pi x_i/L + omega_i)
                          + beta_i cos(2 pi x_i/L + omega_i)];
    its per-axis amplitudes sigma_i = hypot(alpha_i, beta_i) are exposed in
    descending order (the order the semiconvexity modulus consumes them in).
    """

    kind: str
    alphas: tuple[float, ...] = ()
    betas: tuple[float, ...] = ()
    omegas: tuple[float, ...] = ()
    table: GridFunction | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "trig", "table"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "trig":
            if not (len(self.alphas) == len(self.betas) == len(self.omegas)):
                raise ValueError("trig potential needs matching coefficient tuples")
            if len(self.alphas) == 0:
                raise ValueError("trig potential needs at least one axis")
        if self.kind == "table" and self.table is None:
            raise ValueError("tabulated potential needs a grid function")

    @classmethod
    def zero(cls) -> PotentialSpec:
        return cls(kind="zero")

    @classmethod
    def trig(cls, alphas, betas, omegas=None) -> PotentialSpec:
        alphas = tuple(float(a) for a in alphas)
        betas = tuple(float(b) for b in betas)
        if omegas is None:
            omegas = (0.0,) * len(alphas)
        return cls(
            kind="trig",
            alphas=alphas,
            betas=betas,
            omegas=tuple(float(w) for w in omegas),
        )

    @classmethod
    def tabulated(cls, table: GridFunction) -> PotentialSpec:
        return cls(kind="table", table=table)

    @property
    def sigma(self) -> "NDArray[np.float64]":
        """Per-axis amplitudes sqrt(alpha_i^2 + beta_i^2), sorted descending."""
        if self.kind == "trig":
            return np.sort(np.hypot(self.alphas, self.betas))[::-1].copy()
        return np.zeros(0)

    def fingerprint(self) -> bytes:
        """Stable byte representation used in cache keys."""
        if self.kind == "zero":
            return b"zero"
        if self.kind == "trig":
            coeff = np.asarray(
                [self.alphas, self.betas, self.omegas], dtype=np.float64
            )
            return b"trig" + coeff.tobytes()
        assert self.table is not None
        return b"table" + np.ascontiguousarray(self.table.values).tobytes()


def _trig_values(spec: PotentialSpec, grid: TorusGrid, points) -> "NDArray":
    theta = 2.0 * np.pi * points / grid.L + np.asarray(spec.omegas)
    terms = np.asarray(spec.alphas) * np.sin(theta) + np.asarray(spec.betas) * np.cos(
        theta
    )
    return grid.L / 8.0 * terms.sum(axis=-1)


def potential_values(grid: TorusGrid, spec: PotentialSpec) -> GridFunction:
    """Sample the potential on the grid nodes."""
    if spec.kind == "zero":
        return GridFunction.zeros(grid)
    if spec.kind == "trig":
        if len(spec.alphas) != grid.d:
            raise ValueError(
                f"trig potential has {len(spec.alphas)} axes, grid has {grid.d}"
            )
        return GridFunction(grid, _trig_values(spec, grid, grid.nodes()).reshape(grid.shape))
    assert spec.table is not None
    if spec.table.grid != grid:
        raise ValueError("tabulated potential lives on a different grid")
    return spec.table


def potential_gradient(grid: TorusGrid, spec: PotentialSpec) -> "NDArray[np.float64]":
    """grad V as a (d,) + grid.shape array; analytic for the trig variant."""
    if spec.kind == "zero":
        return np.zeros((grid.d,) + grid.shape)
    if spec.kind == "trig":
        nodes = grid.nodes()
        theta = 2.0 * np.pi * nodes / grid.L + np.asarray(spec.omegas)
        # d/dx_i of (L/8)(a sin + b cos) = (pi/4)(a cos - b sin)
        per_axis = (
            np.pi
            / 4.0
            * (np.asarray(spec.alphas) * np.cos(theta) - np.asarray(spec.betas) * np.sin(theta))
        )
        return np.moveaxis(per_axis.reshape(grid.shape + (grid.d,)), -1, 0)
    return np.asarray(gradient(potential_values(grid, spec), method="spectral"))


def potential_modulus(grid: TorusGrid, spec: PotentialSpec) -> Modulus:
    """The weak-semiconvexity modulus implied by the potential variant."""
    if spec.kind == "zero":
        return modulus_constant(0.0, grid.L, grid.d)
    if spec.kind == "trig":
        return modulus_trig(spec.alphas, spec.betas, grid.L)
    raise ValueError(
        "a tabulated potential carries no closed-form semiconvexity modulus; "
        "supply one explicitly (e.g. a constant)"
    )


def stationary_measure(grid: TorusGrid, spec: PotentialSpec) -> "NDArray[np.float64]":
    """Stationary probability weights per node, proportional to e^{-2V} h^d.

    The largest exponent is subtracted before exponentiation, so arbitrarily
    large potential values cannot overflow.
    """
    V = potential_values(grid, spec).flat
    logw = -2.0 * V
    w = np.exp(logw - logw.max())
    return w / w.sum()


# ---------------------------------------------------------------------------
# Markov kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkovKernel:
    """Dense transition matrix K ≈ P_t with its stationary weights.

    Row x of K is the transition law from node x; the reference coupling of
    the bridge problem is R[x, y] = m_weights[x] * K[x, y].  Construction
    validates nonnegativity, row sums (1e-10) and detailed balance (1e-8).
    """

    grid: TorusGrid
    t: float
    K: "NDArray[np.float64]" = field(repr=False)
    m_weights: "NDArray[np.float64]" = field(repr=False)

    def __post_init__(self) -> None:
        M = self.grid.n_nodes
        if self.K.shape != (M, M):
            raise ValueError(f"kernel must be {M}x{M}, got {self.K.shape}")
        if self.m_weights.shape != (M,):
            raise ValueError("stationary weights must have one entry per node")
        if not self.t > 0:
            raise ValueError(f"time horizon must be positive, got {self.t}")
        if np.any(self.K < 0):
            raise ValueError("kernel has negative entries")
        rowsum_defect = float(np.max(np.abs(self.K.sum(axis=1) - 1.0)))
        if rowsum_defect > ROWSUM_TOL:
            raise ValueError(
                f"kernel row sums deviate from 1 by {rowsum_defect:.3e} "
                f"(tolerance {ROWSUM_TOL:.0e}); raise N or substeps"
            )
        flux = self.m_weights[:, None] * self.K
        rev_defect = float(np.max(np.abs(flux - flux.T)))
        if rev_defect > REVERSIBILITY_TOL:
            raise ValueError(
                f"kernel breaks detailed balance by {rev_defect:.3e} "
                f"(tolerance {REVERSIBILITY_TOL:.0e}); raise N or substeps"
            )

    @property
    def reference_coupling(self) -> "NDArray[np.float64]":
        """R[x, y] = m[x] K[x, y], the joint law of the diffusion endpoints."""
        return self.m_weights[:, None] * self.K

    def rowsum_defect(self) -> float:
        return float(np.max(np.abs(self.K.sum(axis=1) - 1.0)))

    def reversibility_defect(self) -> float:
        flux = self.m_weights[:, None] * self.K
        return float(np.max(np.abs(flux - flux.T)))


def _finalize_kernel(
    grid: TorusGrid, t: float, K: "NDArray[np.float64]", m: "NDArray[np.float64]"
) -> MarkovKernel:
    """Apply the clamp policy and build a validated kernel.

    Entries in [-1e-12, 0) are rounding debris: clamp to 0.  Anything more
    negative signals an under-resolved discretization and is an error.  Rows
    are renormalized to sum exactly to 1 afterwards (the relative change is
    at the clamp scale, far below the validation tolerances).
    """
    low = float(K.min())
    if low < -CLAMP_TOL:
        raise ValueError(
            f"kernel entry {low:.3e} below the clamp tolerance -{CLAMP_TOL:.0e}; "
            "raise N or substeps"
        )
    if low < 0.0:
        K = np.where(K < 0.0, 0.0, K)
    K = K / K.sum(axis=1, keepdims=True)
    return MarkovKernel(grid=grid, t=t, K=K, m_weights=m)


def heat_kernel_fft(grid: TorusGrid, t: float) -> MarkovKernel:
    """The V = 0 transition matrix in closed form (circulant per axis).

    The operator e^{t Delta / 2} is diagonal in the discrete Fourier basis
    with symbol exp(-t (2 pi k / L)^2 / 2); one inverse FFT of the symbol
    gives the first row, and index arithmetic fills in the circulant.
    """
    if not t > 0:
        raise ValueError(f"time horizon must be positive, got {t}")
    N, d, L = grid.N, grid.d, grid.L
    omega = 2.0 * np.pi * np.fft.fftfreq(N, d=1.0 / N) / L
    symbol = np.exp(-t * omega**2 / 2.0)
    c = np.real(np.fft.ifft(symbol))

    M = grid.n_nodes
    idx = np.arange(M)
    K = np.ones((M, M))
    for a in range(d):
        stride = N ** (d - 1 - a)
        ax = (idx // stride) % N
        K *= c[(ax[None, :] - ax[:, None]) % N]
    m = np.full(M, 1.0 / M)
    return _finalize_kernel(grid, t, K, m)


def _staggered_derivative(N: int, L: float) -> "NDArray[np.float64]":
    """Spectral first-derivative matrix from nodes to node midpoints.

    The half-grid shift makes the symbol at the Nyquist frequency real and
    nonzero, so no grid mode other than the constants is left derivative-free.
    """
    h = L / N
    omega = 2.0 * np.pi * np.fft.fftfreq(N, d=1.0 / N) / L
    sym = 1j * omega * np.exp(1j * omega * h / 2.0)
    F = np.fft.fft(np.eye(N), axis=0)
    return np.real(np.fft.ifft(sym[:, None] * F, axis=0))


def _axis_matrix(op: "NDArray[np.float64]", grid: TorusGrid, axis: int) -> "NDArray":
    """Lift a 1-d operator to the full tensor grid along one axis."""
    mats = [np.eye(grid.N)] * grid.d
    mats[axis] = op
    return reduce(np.kron, mats)


def _midpoint_potential(
    grid: TorusGrid, spec: PotentialSpec, axis: int
) -> "NDArray[np.float64]":
    """V sampled at nodes shifted by h/2 along one axis, flat C-order."""
    if spec.kind == "zero":
        return np.zeros(grid.n_nodes)
    if spec.kind == "trig":
        pts = grid.nodes().copy()
        pts[:, axis] += grid.h / 2.0
        return _trig_values(spec, grid, pts)
    # tabulated: trigonometric interpolation via an FFT phase shift; the
    # (self-conjugate) Nyquist mode interpolates to 0 at midpoints
    assert spec.table is not None
    vhat = np.fft.fftn(spec.table.values)
    omega = 2.0 * np.pi * np.fft.fftfreq(grid.N, d=1.0 / grid.N) / grid.L
    factor = np.exp(1j * omega * grid.h / 2.0)
    if grid.N % 2 == 0:
        factor[grid.N // 2] = 0.0
    shape = [1] * grid.d
    shape[axis] = grid.N
    vmid = np.real(np.fft.ifftn(vhat * factor.reshape(shape)))
    return vmid.reshape(-1)


def generator_matrix(
    grid: TorusGrid, spec: PotentialSpec, form: str = "spectral"
) -> "NDArray[np.float64]":
    """Dense matrix of the generator G = (1/2) Delta - grad V . grad.

    Both forms discretize the divergence expression
    G f = (1/2) e^{2V} div(e^{-2V} grad f), which makes detailed balance with
    respect to e^{-2V} exact by construction:

    * ``spectral``: staggered spectral derivatives with midpoint weights
      (spectrally accurate; used by the dense eigendecomposition path);
    * ``fd``: nearest-neighbour fluxes a_{ij} = e^{V_i - V_j}/(2 h^2)
      (second order, off-diagonal entries >= 0; used by Crank–Nicolson).
    """
    M = grid.n_nodes
    V = potential_values(grid, spec).flat
    if form == "spectral":
        G = np.zeros((M, M))
        Dh1 = _staggered_derivative(grid.N, grid.L)
        for a in range(grid.d):
            Da = _axis_matrix(Dh1, grid, a)
            e_mid = np.exp(-2.0 * _midpoint_potential(grid, spec, a))
            G -= 0.5 * (Da.T * e_mid) @ Da
        return np.exp(2.0 * V)[:, None] * G
    if form == "fd":
        idx = np.arange(M).reshape(grid.shape)
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        coeff = 1.0 / (2.0 * grid.h**2)
        for a in range(grid.d):
            for shift in (+1, -1):
                j = np.roll(idx, -shift, axis=a).reshape(-1)
                rate = coeff * np.exp(V - V[j])
                rows.append(idx.reshape(-1))
                cols.append(j)
                vals.append(rate)
                rows.append(idx.reshape(-1))
                cols.append(idx.reshape(-1))
                vals.append(-rate)
        G = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(M, M),
        )
        return G.toarray()
    raise ValueError(f"unknown generator form {form!r}")


@dataclass(frozen=True)
class KernelFactory:
    """Eigendecomposition of the (symmetrized) generator, reusable across t.

    With W = e^{-V} the similarity S = diag(W) G diag(1/W) is symmetric; its
    eigenpairs (Q, lam) give K(t) = diag(1/W) Q e^{t lam} Q^T diag(W) for any
    t at the cost of two matrix products.  The zero eigenvalue carries the
    constants, so row-stochasticity survives to rounding accuracy.
    """

    grid: TorusGrid
    m_weights: "NDArray[np.float64]" = field(repr=False)
    sqrt_w: "NDArray[np.float64]" = field(repr=False)
    eigvecs: "NDArray[np.float64]" = field(repr=False)
    eigvals: "NDArray[np.float64]" = field(repr=False)

    def kernel_matrix(self, t: float) -> "NDArray[np.float64]":
        decay = np.exp(t * self.eigvals)
        inner = (self.eigvecs * decay) @ self.eigvecs.T
        return (inner * self.sqrt_w[None, :]) / self.sqrt_w[:, None]

    def kernel(self, t: float) -> MarkovKernel:
        return _finalize_kernel(self.grid, t, self.kernel_matrix(t), self.m_weights)

    def apply_log(self, t: float, g: "NDArray[np.float64]") -> "NDArray[np.float64]":
        """log(K(t) e^g) with the max-shift trick, without kernel validation.

        Used by time-stepping loops that evaluate many horizons; spot values
        agree with apply_log(kernel(t), g) up to the clamp-and-renormalize
        step, which only moves entries at the 1e-12 scale.
        """
        gmax = float(np.max(g))
        w = np.exp(g - gmax)
        s = self.kernel_matrix(t) @ w
        if np.any(s <= 0.0):
            raise ValueError("kernel application produced a nonpositive mass")
        return np.log(s) + gmax


def kernel_factory(grid: TorusGrid, spec: PotentialSpec) -> KernelFactory:
    """Diagonalize the spectral divergence-form generator once."""
    if grid.n_nodes > DENSE_SIZE_CAP:
        raise ValueError(
            f"dense path caps at {DENSE_SIZE_CAP} nodes, grid has {grid.n_nodes}"
        )
    V = potential_values(grid, spec).flat
    G = generator_matrix(grid, spec, form="spectral")
    sqrt_w = np.exp(-V)
    S = (G * sqrt_w[:, None]) / sqrt_w[None, :]
    S = 0.5 * (S + S.T)  # drop rounding asymmetry before eigh
    eigvals, eigvecs = scipy.linalg.eigh(S)
    return KernelFactory(
        grid=grid,
        m_weights=stationary_measure(grid, spec),
        sqrt_w=sqrt_w,
        eigvecs=eigvecs,
        eigvals=eigvals,
    )


def default_substeps(grid: TorusGrid, t: float) -> int:
    """Crank–Nicolson substep count targeting dt <= h^2/2."""
    return max(1, math.ceil(t / (grid.h**2 / 2.0)))


def _crank_nicolson_kernel(
    grid: TorusGrid, spec: PotentialSpec, t: float, substeps: int
) -> "NDArray[np.float64]":
    G = scipy.sparse.csc_matrix(generator_matrix(grid, spec, form="fd"))
    dt = t / substeps
    eye = scipy.sparse.identity(grid.n_nodes, format="csc")
    lu = scipy.sparse.linalg.splu(eye - (dt / 2.0) * G)
    B = (eye + (dt / 2.0) * G).toarray()
    K = np.eye(grid.n_nodes)
    for _ in range(substeps):
        K = lu.solve(B @ K)
    return K


def kernel_general(
    grid: TorusGrid,
    spec: PotentialSpec,
    t: float,
    substeps: int | None = None,
    method: str = "auto",
    cache_dir: str | os.PathLike | None = None,
) -> MarkovKernel:
    """Transition matrix for an arbitrary potential.

    ``method="expm"`` (dense eigendecomposition of the spectrally accurate
    generator) is used automatically up to DENSE_SIZE_CAP nodes;
    ``method="cn"`` runs Crank–Nicolson with the finite-volume generator,
    with ``substeps`` defaulting to the dt <= h^2/2 heuristic.

    If ``cache_dir`` is given — or the TS_CACHE_DIR environment variable is
    set — the computed matrix is stored on disk and reloaded on repeat calls
    with the same (grid, potential, t, method, substeps) key.  A corrupt or
    mismatched cache file is recomputed and rewritten, never trusted.
    """
    if not t > 0:
        raise ValueError(f"time horizon must be positive, got {t}")
    if method == "auto":
        method = "expm" if grid.n_nodes <= DENSE_SIZE_CAP else "cn"
    if method not in ("expm", "cn"):
        raise ValueError(f"unknown kernel method {method!r}")
    if method == "cn" and substeps is None:
        substeps = default_substeps(grid, t)
    if method == "expm":
        substeps = 0  # not part of the dense key

    directory = cache_dir if cache_dir is not None else os.environ.get(KERNEL_CACHE_ENV)
    key = kernel_cache_key(grid, spec, t, method, substeps)
    m = stationary_measure(grid, spec)
    if directory:
        path = Path(directory) / f"kernel_{key}.tsk"
        if path.exists():
            try:
                return load_kernel_file(path, grid, t, key, m)
            except ValueError:
                pass  # stale or corrupt: fall through and rebuild

    if method == "expm":
        if grid.n_nodes > DENSE_SIZE_CAP:
            raise ValueError(
                f"dense path caps at {DENSE_SIZE_CAP} nodes; use method='cn'"
            )
        kernel = kernel_factory(grid, spec).kernel(t)
    else:
        assert substeps is not None and substeps >= 1
        K = _crank_nicolson_kernel(grid, spec, t, substeps)
        kernel = _finalize_kernel(grid, t, K, m)

    if directory:
        Path(directory).mkdir(parents=True, exist_ok=True)
        save_kernel_file(Path(directory) / f"kernel_{key}.tsk", kernel, key)
    return kernel


def apply_log(kernel: MarkovKernel, g: GridFunction) -> GridFunction:
    """Compute x -> log sum_y K[x, y] e^{g(y)} without overflow.

    The max of g is subtracted before exponentiation and re-added after the
    log, so any |g| up to ~700 in spread is safe.
    """
    if g.grid != kernel.grid:
        raise ValueError("grid function lives on a different grid")
    gmax = float(np.max(g.values))
    s = kernel.K @ np.exp(g.flat - gmax)
    if np.any(s <= 0.0):
        raise ValueError("kernel row with zero mass under apply_log")
    return GridFunction(kernel.grid, (np.log(s) + gmax).reshape(kernel.grid.shape))


# ---------------------------------------------------------------------------
# on-disk kernel cache
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"TSKERN1\x00"
_CACHE_VERSION = 1
# little-endian: magic 8s | version u32 | d u32 | N u32 | pad u32
#                | L f64 | t f64 | key u64 | payload crc32 u64 | reserved u64
_HEADER_FMT = "<8sIIIIddQQQ"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)
assert _HEADER_SIZE == 64


def kernel_cache_key(
    grid: TorusGrid, spec: PotentialSpec, t: float, method: str, substeps: int | None
) -> str:
    """16-hex-digit key identifying one kernel build exactly."""
    blob = struct.pack(
        "<IIddI",
        grid.d,
        grid.N,
        grid.L,
        t,
        0 if substeps is None else substeps,
    )
    blob += method.encode() + b"|" + spec.fingerprint()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_kernel_file(path: str | os.PathLike, kernel: MarkovKernel, key: str) -> None:
    """Write a kernel matrix in the documented binary cache layout.

    64-byte header (little-endian): magic ``TSKERN1\\0``, format version,
    d, N, zero padding, L, t, the 64-bit build key, a CRC32 of the payload,
    and a reserved word; then the K matrix as row-major float64.  The
    stationary weights are cheap and deterministic, so they are recomputed
    on load rather than stored.
    """
    payload = np.ascontiguousarray(kernel.K, dtype="<f8").tobytes()
    header = struct.pack(
        _HEADER_FMT,
        _CACHE_MAGIC,
        _CACHE_VERSION,
        kernel.grid.d,
        kernel.grid.N,
        0,
        kernel.grid.L,
        kernel.t,
        int(key, 16),
        zlib.crc32(payload),
        0,
    )
    tmp = Path(path).with_suffix(".tmp")
    tmp.write_bytes(header + payload)
    os.replace(tmp, path)


def load_kernel_file(
    path: str | os.PathLike,
    grid: TorusGrid,
    t: float,
    key: str,
    m_weights: "NDArray[np.float64]",
) -> MarkovKernel:
    """Read a cached kernel, verifying header fields and the payload CRC.

    Raises ValueError on any mismatch (wrong grid, wrong horizon, wrong
    build key, truncated file, or corrupted payload).
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_SIZE:
        raise ValueError(f"cache file {path} is truncated")
    magic, version, d, N, _, L, t_file, key_file, crc, _ = struct.unpack(
        _HEADER_FMT, raw[:_HEADER_SIZE]
    )
    if magic != _CACHE_MAGIC or version != _CACHE_VERSION:
        raise ValueError(f"cache file {path} has an unknown format")
    if (d, N) != (grid.d, grid.N) or L != grid.L or t_file != t:
        raise ValueError(f"cache file {path} was built for different parameters")
    if key_file != int(key, 16):
        raise ValueError(f"cache file {path} was built from a different potential")
    payload = raw[_HEADER_SIZE:]
    M = grid.n_nodes
    if len(payload) != M * M * 8:
        raise ValueError(f"cache file {path} has the wrong payload size")
    if zlib.crc32(payload) != crc:
        raise ValueError(f"cache file {path} failed its checksum")
    K = np.frombuffer(payload, dtype="<f8").reshape(M, M).copy()
    return MarkovKernel(grid=grid, t=t, K=K, m_weights=m_weights)

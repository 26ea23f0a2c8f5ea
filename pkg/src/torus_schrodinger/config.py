"""Experiment configuration: a line-oriented ``section.key = value`` format.

Grammar (documented here, enforced by :func:`parse_config`):

* one statement per line: ``section.key = value``;
* blank lines and lines starting with ``#`` are ignored;
* values are bare tokens — integers, floats, words, or comma-separated
  float lists; no quoting (paths with spaces are unsupported);
* keys may appear at most once; unknown keys are errors;
* only ``grid.d``, ``grid.L``, ``grid.N`` and ``time.T`` are required —
  everything else has a documented default.

Errors carry the offending line number.  Defaults that depend on other
values (marginal coefficient lists, the coalescence tolerance, coupling
start points) are resolved at parse time, so a parsed config is always
fully concrete and ``parse_config(emit_config(c)) == c`` holds exactly.

The drift potential V and the marginal log-density potentials U_mu, U_nu
all use the same specification family (zero / separable trigonometric /
tabulated from file); the trigonometric normalization is the
(L/8)*sum[alpha*sin + beta*cos] convention of
:class:`~torus_schrodinger.kernels.PotentialSpec`.  Tabulated files hold
one value per line in row-major node order (``#`` comments and a single
non-numeric header line are tolerated).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from .grid import GridFunction, TorusGrid
from .kernels import DENSE_SIZE_CAP, PotentialSpec

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "emit_config",
    "default_config",
    "load_table",
]

_KINDS = ("zero", "trig", "table")


class ConfigError(ValueError):
    """Malformed or out-of-range configuration text."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment parameters (every field concrete)."""

    d: int
    L: float
    N: int
    T: float
    potential_kind: str
    potential_alphas: tuple[float, ...]
    potential_betas: tuple[float, ...]
    potential_omegas: tuple[float, ...]
    potential_file: str
    mu_kind: str
    mu_alphas: tuple[float, ...]
    mu_betas: tuple[float, ...]
    mu_omegas: tuple[float, ...]
    mu_file: str
    nu_kind: str
    nu_alphas: tuple[float, ...]
    nu_betas: tuple[float, ...]
    nu_omegas: tuple[float, ...]
    nu_file: str
    solver_max_iter: int
    solver_tol: float
    solver_psi0: str
    kernel_method: str
    kernel_substeps: int
    mc_n_paths: int
    mc_dt: float
    mc_seed: int
    mc_checkpoints: int
    mc_coalesce_tol: float
    couple_x: tuple[float, ...]
    couple_y: tuple[float, ...]
    couple_control: str
    rates_modulus: str
    rates_alpha: float
    rates_quad_nodes: int
    output_dir: str

    # -- builders ----------------------------------------------------------

    def grid(self) -> TorusGrid:
        return TorusGrid(self.d, self.L, self.N)

    def _spec(
        self, kind: str, alphas, betas, omegas, file: str, column: str
    ) -> PotentialSpec:
        if kind == "zero":
            return PotentialSpec.zero()
        if kind == "trig":
            return PotentialSpec.trig(alphas, betas, omegas)
        return PotentialSpec.tabulated(load_table(Path(file), self.grid(), column))

    def potential(self) -> PotentialSpec:
        """The drift potential V."""
        return self._spec(
            self.potential_kind,
            self.potential_alphas,
            self.potential_betas,
            self.potential_omegas,
            self.potential_file,
            "V",
        )

    def mu_potential(self) -> PotentialSpec:
        """The first marginal's log-density potential U_mu."""
        return self._spec(
            self.mu_kind, self.mu_alphas, self.mu_betas, self.mu_omegas,
            self.mu_file, "U_mu",
        )

    def nu_potential(self) -> PotentialSpec:
        """The second marginal's log-density potential U_nu."""
        return self._spec(
            self.nu_kind, self.nu_alphas, self.nu_betas, self.nu_omegas,
            self.nu_file, "U_nu",
        )


def load_table(path: Path, grid: TorusGrid, column: str | None = None) -> GridFunction:
    """Read a tabulated grid function from a CSV of node values.

    Rows are grid nodes in row-major order.  A single unnamed column works
    as-is; files carrying several functions need a header row naming them
    (``U_mu``, ``U_nu``, ``V``) and ``column`` selects one.  Full-line ``#``
    comments and blank lines are skipped.
    """
    import csv
    import io

    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read table file {path}: {exc}") from exc
    lines = [
        line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")
    ]
    rows = list(csv.reader(io.StringIO("\n".join(lines))))
    if not rows:
        raise ConfigError(f"{path}: no data rows")

    def numeric(row: list[str]) -> bool:
        try:
            [float(cell) for cell in row]
            return True
        except ValueError:
            return False

    index = 0
    start = 0
    if not numeric(rows[0]):
        header = [cell.strip() for cell in rows[0]]
        start = 1
        if column is not None and column in header:
            index = header.index(column)
        elif len(header) == 1:
            index = 0
        else:
            raise ConfigError(
                f"{path}: no column named {column!r} in header {header}"
            )
    elif len(rows[0]) > 1:
        raise ConfigError(
            f"{path}: multi-column tables need a header row naming the columns"
        )
    values: list[float] = []
    for i, row in enumerate(rows[start:], start=start + 1):
        try:
            values.append(float(row[index].strip()))
        except (ValueError, IndexError):
            raise ConfigError(f"{path}: bad value in data row {i}: {row!r}")
    if len(values) != grid.n_nodes:
        raise ConfigError(
            f"{path}: expected {grid.n_nodes} values for the {grid.N}^{grid.d} grid, "
            f"got {len(values)}"
        )
    return GridFunction(grid, np.asarray(values).reshape(grid.shape))


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

# key -> (field name, converter tag, default); None = required or derived
_SCHEMA: dict[str, tuple[str, str, Any]] = {
    "grid.d": ("d", "int", None),
    "grid.L": ("L", "float", None),
    "grid.N": ("N", "int", None),
    "time.T": ("T", "float", None),
    "potential.kind": ("potential_kind", "word", "zero"),
    "potential.alphas": ("potential_alphas", "floats", None),
    "potential.betas": ("potential_betas", "floats", None),
    "potential.omegas": ("potential_omegas", "floats", None),
    "potential.file": ("potential_file", "word", ""),
    "mu.kind": ("mu_kind", "word", "trig"),
    "mu.alphas": ("mu_alphas", "floats", None),
    "mu.betas": ("mu_betas", "floats", None),
    "mu.omegas": ("mu_omegas", "floats", None),
    "mu.file": ("mu_file", "word", ""),
    "nu.kind": ("nu_kind", "word", "trig"),
    "nu.alphas": ("nu_alphas", "floats", None),
    "nu.betas": ("nu_betas", "floats", None),
    "nu.omegas": ("nu_omegas", "floats", None),
    "nu.file": ("nu_file", "word", ""),
    "solver.max_iter": ("solver_max_iter", "int", 500),
    "solver.tol": ("solver_tol", "float", 1e-12),
    "solver.psi0": ("solver_psi0", "word", "zero"),
    "kernel.method": ("kernel_method", "word", "auto"),
    "kernel.substeps": ("kernel_substeps", "int", 0),
    "mc.n_paths": ("mc_n_paths", "int", 10_000),
    "mc.dt": ("mc_dt", "float", 1e-3),
    "mc.seed": ("mc_seed", "int", 0),
    "mc.checkpoints": ("mc_checkpoints", "int", 9),
    "mc.coalesce_tol": ("mc_coalesce_tol", "float", None),
    "couple.x": ("couple_x", "floats", None),
    "couple.y": ("couple_y", "floats", None),
    "couple.control": ("couple_control", "word", "none"),
    "rates.modulus": ("rates_modulus", "word", "potential"),
    "rates.alpha": ("rates_alpha", "float", 0.0),
    "rates.quad_nodes": ("rates_quad_nodes", "int", 1024),
    "output.dir": ("output_dir", "word", "out"),
}

_REQUIRED = ("grid.d", "grid.L", "grid.N", "time.T")
_KEY_OF_FIELD = {spec[0]: key for key, spec in _SCHEMA.items()}


def _convert(key: str, token: str, line: int) -> Any:
    tag = _SCHEMA[key][1]
    try:
        if tag == "int":
            return int(token)
        if tag == "float":
            return float(token)
        if tag == "floats":
            return tuple(float(part.strip()) for part in token.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{key} expects a {tag} value, got {token!r}", line)
    return token


def _check_range(key: str, value: Any, line: int | None) -> None:
    def fail(message: str) -> None:
        raise ConfigError(f"{key}: {message}", line)

    if key == "grid.d" and value < 1:
        fail(f"dimension must be >= 1, got {value}")
    if key == "grid.L" and not value > 0:
        fail(f"side length must be positive, got {value}")
    if key == "grid.N" and value < 4:
        fail(f"need at least 4 nodes per axis, got {value}")
    if key == "time.T" and not value > 0:
        fail(f"time horizon must be positive, got {value}")
    if key.endswith(".kind") and value not in _KINDS:
        fail(f"expected one of {_KINDS}, got {value!r}")
    if key == "solver.max_iter" and value < 1:
        fail(f"need at least one iteration, got {value}")
    if key == "solver.tol" and not value > 0:
        fail(f"tolerance must be positive, got {value}")
    if key == "solver.psi0" and value not in ("zero", "warm"):
        fail(f"expected 'zero' or 'warm', got {value!r}")
    if key == "kernel.method" and value not in ("auto", "expm", "cn"):
        fail(f"expected 'auto', 'expm' or 'cn', got {value!r}")
    if key == "kernel.substeps" and value < 0:
        fail(f"substeps must be >= 0 (0 means automatic), got {value}")
    if key == "mc.n_paths" and value < 100:
        fail(f"need at least 100 paths, got {value}")
    if key == "mc.dt" and not 0 < value <= 1e-2:
        fail(f"step must lie in (0, 1e-2], got {value}")
    if key == "mc.seed" and not 0 <= value < 2**64:
        fail(f"seed must fit in an unsigned 64-bit integer, got {value}")
    if key == "mc.checkpoints" and value < 2:
        fail(f"need at least 2 checkpoints, got {value}")
    if key == "mc.coalesce_tol" and not value > 0:
        fail(f"coalescence tolerance must be positive, got {value}")
    if key == "couple.control" and value not in ("none", "feedback"):
        fail(f"expected 'none' or 'feedback', got {value!r}")
    if key == "rates.modulus" and value not in ("potential", "constant"):
        fail(f"expected 'potential' or 'constant', got {value!r}")
    if key == "rates.alpha" and value > 0:
        fail(
            f"the weak-semiconvexity modulus is nonpositive by construction; "
            f"alpha must be <= 0, got {value}"
        )
    if key == "rates.quad_nodes" and (value < 256 or value % 2):
        fail(f"quadrature nodes must be even and >= 256, got {value}")


def _resolve_family(
    prefix: str,
    d: int,
    values: dict[str, Any],
    lines: dict[str, int],
    default_alphas: tuple[float, ...],
    default_betas: tuple[float, ...],
) -> None:
    """Fill or reject the coefficient keys of one potential block in place."""
    kind = values[f"{prefix}.kind"]
    a_key, b_key, w_key = f"{prefix}.alphas", f"{prefix}.betas", f"{prefix}.omegas"
    f_key = f"{prefix}.file"
    if kind != "trig":
        for key in (a_key, b_key, w_key):
            if values.get(key) is not None:
                raise ConfigError(
                    f"{key} only applies when {prefix}.kind = trig", lines.get(key)
                )
            values[key] = ()
        if kind == "table" and not values.get(f_key):
            raise ConfigError(
                f"{prefix}.kind = table requires {f_key}", lines.get(f"{prefix}.kind")
            )
        if kind == "zero" and values.get(f_key):
            raise ConfigError(
                f"{f_key} only applies when {prefix}.kind = table", lines.get(f_key)
            )
        return
    if values.get(f_key):
        raise ConfigError(
            f"{f_key} only applies when {prefix}.kind = table", lines.get(f_key)
        )
    explicit = [key for key in (a_key, b_key) if values.get(key) is not None]
    if not explicit:
        values[a_key] = default_alphas
        values[b_key] = default_betas
    else:
        n = len(values[explicit[0]])
        for key in (a_key, b_key):
            if values.get(key) is None:
                values[key] = (0.0,) * n
    if values.get(w_key) is None:
        values[w_key] = (0.0,) * len(values[a_key])
    for key in (a_key, b_key, w_key):
        if len(values[key]) != d:
            raise ConfigError(
                f"{key} has {len(values[key])} axes but grid.d = {d}", lines.get(key)
            )


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate configuration text.

    Raises :class:`ConfigError` (with the line number where one applies) for
    unknown keys, duplicate keys, missing required keys, type errors, and
    out-of-range or inconsistent values.
    """
    values: dict[str, Any] = {key: None for key in _SCHEMA}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, rhs = stripped.partition("=")
        key = key.strip()
        token = rhs.strip()
        if not sep or not token:
            raise ConfigError("expected 'section.key = value'", lineno)
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in lines:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        value = _convert(key, token, lineno)
        _check_range(key, value, lineno)
        values[key] = value
        lines[key] = lineno

    for key in _REQUIRED:
        if values[key] is None:
            raise ConfigError(f"missing required key {key!r}")
    for key, (_, _, default) in _SCHEMA.items():
        if values[key] is None and default is not None:
            values[key] = default

    d = values["grid.d"]
    L = values["grid.L"]
    zeros = (0.0,) * d
    lead = (6.0,) + (0.0,) * (d - 1)  # (L/8)*6 = 0.75*L/L — the benchmark amplitude
    _resolve_family("potential", d, values, lines, zeros, zeros)
    _resolve_family("mu", d, values, lines, lead, zeros)
    _resolve_family("nu", d, values, lines, zeros, lead)

    if values["mc.coalesce_tol"] is None:
        values["mc.coalesce_tol"] = 1e-4 * L
    defaults_xy = {"couple.x": zeros, "couple.y": (0.3 * L,) + (0.0,) * (d - 1)}
    for key, default in defaults_xy.items():
        if values[key] is None:
            values[key] = default
        elif len(values[key]) != d:
            raise ConfigError(
                f"{key} has {len(values[key])} coordinates but grid.d = {d}",
                lines.get(key),
            )
    if values["rates.modulus"] == "potential" and values["potential.kind"] == "table":
        raise ConfigError(
            "a tabulated potential carries no closed-form semiconvexity modulus; "
            "set rates.modulus = constant (with rates.alpha <= 0)",
            lines.get("rates.modulus"),
        )
    if values["kernel.method"] == "expm" and values["grid.N"] ** d > DENSE_SIZE_CAP:
        raise ConfigError(
            f"kernel.method = expm caps at {DENSE_SIZE_CAP} nodes, "
            f"got {values['grid.N']}^{d}",
            lines.get("kernel.method"),
        )

    kwargs = {spec[0]: values[key] for key, spec in _SCHEMA.items()}
    return ExperimentConfig(**kwargs)


def emit_config(config: ExperimentConfig) -> str:
    """Serialize a config so that ``parse_config(emit_config(c)) == c``."""

    def fmt(value: Any) -> str:
        if isinstance(value, tuple):
            return ", ".join(repr(float(v)) for v in value)
        if isinstance(value, float):
            return repr(value)
        return str(value)

    dead: set[str] = set()
    for prefix in ("potential", "mu", "nu"):
        kind = getattr(config, f"{prefix}_kind")
        if kind != "trig":
            dead.update(f"{prefix}.{k}" for k in ("alphas", "betas", "omegas"))
        if kind != "table":
            dead.add(f"{prefix}.file")

    out = ["# experiment configuration (one 'section.key = value' per line)"]
    section = ""
    for f in fields(ExperimentConfig):
        key = _KEY_OF_FIELD[f.name]
        value = getattr(config, f.name)
        if key in dead or (isinstance(value, tuple) and not value):
            continue
        head = key.split(".", 1)[0]
        if head != section:
            out.append("")
            section = head
        out.append(f"{key} = {fmt(value)}")
    return "\n".join(out) + "\n"


def default_config(**overrides: Any) -> ExperimentConfig:
    """The pinned benchmark configuration, with keyword overrides.

    Override names are the dataclass field names (``d``, ``L``, ``N``, ``T``,
    ``mc_seed``, ...).  The result round-trips through the parser, so the
    same validation applies to overridden values.
    """
    base = parse_config("grid.d = 1\ngrid.L = 1.0\ngrid.N = 128\ntime.T = 0.5\n")
    if not overrides:
        return base
    unknown = set(overrides) - {f.name for f in fields(ExperimentConfig)}
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    merged = {
        f.name: overrides.get(f.name, getattr(base, f.name))
        for f in fields(ExperimentConfig)
    }
    return parse_config(emit_config(ExperimentConfig(**merged)))

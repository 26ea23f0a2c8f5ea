"""End-to-end command-line runs: artifacts, exit codes, and determinism.

Each subcommand is driven through :func:`torus_schrodinger.cli.main` on a
small (N = 32, 500-path) instance so the whole file stays fast.  The tests
pin the artifact schemas — column lists, JSON keys, the CRLF convention —
and the bit-identical rerun guarantee, plus the rate-fit helpers and the
kernel-cache recovery path.
"""

from __future__ import annotations

import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from torus_schrodinger.cli import contraction_ratios_ok, fit_decay_slope, main
from torus_schrodinger.config import parse_config

HISTORY_HEADER = "n,sup_err_phi,sup_err_psi,grad_err_phi,grad_err_psi,flip_err_psi,lip_psi,kl_cost"


def _config_file(tmp_path, overrides: dict[str, str] | None = None):
    pairs = {
        "grid.d": "1",
        "grid.L": "1.0",
        "grid.N": "32",
        "time.T": "0.5",
        "mc.n_paths": "500",
    }
    pairs.update(overrides or {})
    path = tmp_path / "exp.cfg"
    path.write_text("".join(f"{key} = {value}\n" for key, value in pairs.items()))
    return path


def _json(path):
    return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# rate-fit helpers
# ---------------------------------------------------------------------------


def _rows(errs, flips=None):
    flips = errs if flips is None else flips
    return [
        {"n": i, "sup_err_psi": e, "flip_err_psi": f}
        for i, (e, f) in enumerate(zip(errs, flips))
    ]


def test_fit_decay_slope_recovers_a_geometric_rate() -> None:
    slope = fit_decay_slope(_rows([1.0, 1e-2, 1e-4, 1e-6]))
    assert slope == pytest.approx(math.log(1e-2), rel=1e-12)


def test_fit_decay_slope_ignores_noise_floor_iterates() -> None:
    # the two converged iterates would flatten the slope to ~log(1e-2)/3
    slope = fit_decay_slope(_rows([1.0, 1e-2, 3e-13, 1e-13]))
    assert slope == pytest.approx(math.log(1e-2), rel=1e-12)


def test_fit_decay_slope_needs_two_resolvable_points() -> None:
    assert fit_decay_slope(_rows([1.0, 1e-13])) is None
    assert fit_decay_slope(_rows([1e-12, 1e-13])) is None


def test_contraction_ratios_accept_fast_decay() -> None:
    assert contraction_ratios_ok(_rows([1.0, 1e-2, 1e-4], [1.0, 9e-3, 8e-5]), 0.1)


def test_contraction_ratios_reject_a_slow_step() -> None:
    assert not contraction_ratios_ok(_rows([1.0, 1e-2], [1.0, 2e-2]), 0.1)


def test_contraction_ratios_stop_at_the_noise_floor() -> None:
    # the jump happens after the sup-error has converged, so it is noise
    assert contraction_ratios_ok(_rows([1e-12, 1e-12], [1e-15, 1e-13]), 0.1)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def test_solve_writes_passing_artifacts(tmp_path, capsys) -> None:
    out = tmp_path / "runs" / "solve"
    rc = main(["solve", "--config", str(_config_file(tmp_path)), "--out", str(out)])
    assert rc == 0
    assert capsys.readouterr().out.rstrip().endswith("PASS")

    raw = (out / "solve_history.csv").read_bytes()
    assert raw.endswith(b"\r\n") and b"\n" not in raw.replace(b"\r\n", b"")
    lines = raw.decode().splitlines()
    assert lines[0] == HISTORY_HEADER
    assert len(lines) >= 3  # n = 0 plus at least two solver sweeps

    potentials = (out / "solve_potentials.csv").read_text().splitlines()
    assert potentials[0] == "index,x0,U_mu,U_nu,phi_star,psi_star"
    assert len(potentials) == 1 + 32

    summary = _json(out / "solve_summary.json")
    assert summary["passed"] is True
    assert summary["converged"] is True
    assert summary["contraction_ratios_ok"] is True
    assert 0.0 < summary["gamma"] < 1.0
    assert summary["theoretical_rate"] == pytest.approx(
        2.0 * math.log(summary["gamma"])
    )
    fitted = summary["fitted_rate"]
    assert fitted is None or fitted <= summary["theoretical_rate"] + 1e-9
    assert parse_config(summary["provenance"]["config"]).N == 32


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------


def test_rates_reports_the_zero_drift_constants(tmp_path) -> None:
    out = tmp_path / "rates"
    rc = main(["rates", "--config", str(_config_file(tmp_path)), "--out", str(out)])
    assert rc == 0

    payload = _json(out / "rates.json")
    assert payload["passed"] is True
    assert payload["lam_V"] == pytest.approx(2.0)  # 2/(L^2 d) with L = d = 1
    assert payload["C_V"] == pytest.approx(0.5)
    assert payload["worst_triplet_defect"] <= 1e-8
    assert 0.0 < payload["gamma"] < 1.0

    table = (out / "rates_f_tables.csv").read_text().splitlines()
    assert table[0] == "r,f_V,f_bar"
    assert len(table) == 1 + 1024 + 1  # header + quad_nodes + 1 radii


def test_rates_emits_both_constant_conventions(tmp_path) -> None:
    out = tmp_path / "rates_L2"
    config = _config_file(tmp_path, {"grid.L": "2.0"})
    assert main(["rates", "--config", str(config), "--out", str(out)]) == 0
    payload = _json(out / "rates.json")
    L = 2.0
    assert payload["lam_V"] == pytest.approx(2.0 / L**2)
    assert payload["f0_cubic_coeff"] == pytest.approx(1.0 / (6.0 * L**2))
    assert payload["f0_cubic_coeff_alt"] == pytest.approx(L**2 / 6.0)
    assert payload["c_S"] == pytest.approx(1.0 / (2.0 * payload["C_bar"]))
    assert payload["c_S_sqrtL"] == pytest.approx(
        1.0 / (payload["C_bar"] * math.sqrt(L) * math.pi)
    )


# ---------------------------------------------------------------------------
# hjb-check
# ---------------------------------------------------------------------------


def test_hjb_check_passes_and_tabulates_ratios(tmp_path) -> None:
    out = tmp_path / "hjb"
    rc = main(["hjb-check", "--config", str(_config_file(tmp_path)), "--out", str(out)])
    assert rc == 0

    summary = _json(out / "hjb_summary.json")
    assert summary["passed"] is True
    assert summary["max_ratio_excess"] <= 1e-6
    assert summary["pde_residual"] <= 0.05 * max(1.0, summary["terminal_sup"])

    ratios = (out / "hjb_ratios.csv").read_text().splitlines()
    assert ratios[0] == "t,ratio,bound"
    assert len(ratios) == 1 + 16

    snapshots = (out / "hjb_snapshots.csv").read_text().splitlines()
    assert snapshots[0] == "t,node,u,du"
    assert len(snapshots) == 1 + 16 * 32


def test_hjb_check_rejects_grids_beyond_the_dense_cap(tmp_path, capsys) -> None:
    config = _config_file(tmp_path, {"grid.N": "8192", "mc.dt": "1e-3"})
    rc = main(["hjb-check", "--config", str(config), "--out", str(tmp_path / "x")])
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and "caps at" in err


# ---------------------------------------------------------------------------
# couple
# ---------------------------------------------------------------------------


def test_couple_satisfies_its_bound_and_checkpoints(tmp_path) -> None:
    out = tmp_path / "couple"
    rc = main(["couple", "--config", str(_config_file(tmp_path)), "--out", str(out)])
    assert rc == 0

    payload = _json(out / "couple.json")
    assert payload["passed"] is True
    assert payload["bound_ok"] is True
    assert payload["supermartingale_ok"] is True
    assert payload["mean"] <= payload["bound"] + 2.0 * payload["std_error"]
    assert payload["n_paths"] == 500
    assert payload["control"] == "none"

    table = (out / "couple_checkpoints.csv").read_text().splitlines()
    assert table[0] == "k,time,weighted_mean,margin"
    assert len(table) == 1 + 9  # default mc.checkpoints
    assert table[1].split(",")[3] == "nan"  # no margin before the first interval


def test_couple_seed_override_moves_the_estimate(tmp_path) -> None:
    config = _config_file(tmp_path)
    tables = {}
    for seed in (1, 2):
        out = tmp_path / f"seed{seed}"
        rc = main(
            ["couple", "--config", str(config), "--seed", str(seed), "--out", str(out)]
        )
        assert rc == 0
        payload = _json(out / "couple.json")
        assert payload["provenance"]["seed"] == seed
        assert parse_config(payload["provenance"]["config"]).mc_seed == seed
        tables[seed] = (out / "couple_checkpoints.csv").read_text()
    # every path coalesces well before T on this instance, so the terminal
    # mean is exactly zero under any seed; the pre-coalescence checkpoints
    # are where the noise lives
    assert tables[1] != tables[2]


def test_rerun_rewrites_artifacts_bit_identically(tmp_path) -> None:
    config = _config_file(tmp_path)
    out = tmp_path / "twice"
    assert main(["couple", "--config", str(config), "--out", str(out)]) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["couple", "--config", str(config), "--out", str(out)]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert first == second


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def test_verify_quick_passes_all_criteria(tmp_path, capsys) -> None:
    out = tmp_path / "verify"
    rc = main(["verify", "--quick", "--out", str(out)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "13/13 passed" in stdout
    assert stdout.rstrip().endswith("PASS")

    payload = _json(out / "verify.json")
    assert payload["passed"] is True
    assert payload["c01_kernel_oracles_pass"] is True
    assert payload["c13_determinism_measured"] == 0


# ---------------------------------------------------------------------------
# config handling and exit codes
# ---------------------------------------------------------------------------


def test_bad_config_exits_2_with_a_line_number(tmp_path, capsys) -> None:
    bad = tmp_path / "bad.cfg"
    bad.write_text("grid.d = 1\ngrid.q = 3\n")
    rc = main(["rates", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("error: line 2:") and "unknown key" in err


def test_missing_config_file_exits_2(tmp_path, capsys) -> None:
    rc = main(["rates", "--config", str(tmp_path / "absent.cfg")])
    assert rc == 2
    assert "cannot read config file" in capsys.readouterr().err


def test_invalid_seed_override_is_revalidated(tmp_path, capsys) -> None:
    config = _config_file(tmp_path)
    rc = main(["couple", "--config", str(config), "--seed", "-1", "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "unsigned 64-bit" in capsys.readouterr().err


def test_missing_subcommand_is_an_argparse_error() -> None:
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2
    with pytest.raises(SystemExit):
        main(["transmogrify"])


def test_default_config_runs_without_a_config_file(tmp_path) -> None:
    out = tmp_path / "default"
    assert main(["rates", "--out", str(out)]) == 0
    payload = _json(out / "rates.json")
    echoed = parse_config(payload["provenance"]["config"])
    assert (echoed.d, echoed.L, echoed.N, echoed.T) == (1, 1.0, 128, 0.5)
    assert echoed.output_dir == str(out)


# ---------------------------------------------------------------------------
# kernel cache
# ---------------------------------------------------------------------------


def test_corrupt_kernel_cache_is_rebuilt(tmp_path, monkeypatch) -> None:
    cache = tmp_path / "cache"
    monkeypatch.setenv("TS_CACHE_DIR", str(cache))
    config = _config_file(tmp_path)

    assert main(["solve", "--config", str(config), "--out", str(tmp_path / "a")]) == 0
    cached = sorted(cache.glob("kernel_*.tsk"))
    assert len(cached) == 1
    good = cached[0].read_bytes()

    cached[0].write_bytes(b"\x00garbage" + good[: len(good) // 2])
    assert main(["solve", "--config", str(config), "--out", str(tmp_path / "b")]) == 0
    assert cached[0].read_bytes() == good  # rebuilt and rewritten, not trusted

    identical = (tmp_path / "a" / "solve_summary.json").read_bytes()
    rebuilt = (tmp_path / "b" / "solve_summary.json").read_bytes()
    assert json.loads(identical)["passed"] is True
    assert json.loads(rebuilt) == {
        **json.loads(identical),
        "provenance": json.loads(rebuilt)["provenance"],
    }


# ---------------------------------------------------------------------------
# console script
# ---------------------------------------------------------------------------


def test_console_script_lists_every_subcommand() -> None:
    exe = shutil.which("torus-schrodinger")
    if exe is None:
        pytest.skip("console script not on PATH")
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("solve", "rates", "hjb-check", "couple", "verify"):
        assert name in proc.stdout

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from awh_lab import cli, fixtures
from awh_lab.config import ConfigError, parse
from awh_lab.model import free_energies
from awh_lab.reports import read_csv

ROOT = Path(__file__).resolve().parents[1]
BUNDLED = ROOT / "configs" / "double_well.cfg"

SMALL = """\
model.name = double-well-32
awh.N = 60
awh.N_I = 20
awh.seed = 3
observables = pos:coordinate; one:constant(1)
diagnose.samples = 20
diagnose.jensen_instances = 50
ode.t_end = 5
ode.v_threshold = 1
"""


def write_cfg(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def call(*argv):
    return cli.main([str(a) for a in argv])


def tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("command,files", [
    ("run", {"trajectory.csv", "free_energy.csv", "theta_final.csv", "ergodic.csv"}),
    ("oracle", {"oracle_free_energy.csv", "oracle_expectations.csv", "energies.csv"}),
    ("diagnose", {"diagnostics.csv", "jensen.csv", "summary.csv"}),
    ("ode", {"ode_trajectory.csv", "overlay.csv", "ode_summary.csv"}),
])
def test_commands_write_outputs_and_are_reproducible(tmp_path, command, files):
    cfg = write_cfg(tmp_path, SMALL)
    assert call(command, "--config", cfg, "--out", tmp_path / "a", "--quiet") == 0
    assert call(command, "--config", cfg, "--out", tmp_path / "b", "--quiet") == 0
    names = {p.name for p in (tmp_path / "a").iterdir()}
    assert files | {"resolved.cfg"} <= names
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_zero_iterations(tmp_path):
    cfg = write_cfg(tmp_path, "awh.N = 0\n")
    assert call("run", "--config", cfg, "--out", tmp_path / "o", "--quiet") == 0
    rows = read_csv(tmp_path / "o" / "trajectory.csv")
    assert len(rows) == 1 and rows[0]["iter"] == "0" and rows[0]["theta_3"] == "0"


def test_resolved_config_records_defaults_and_seed(tmp_path):
    cfg = write_cfg(tmp_path, "awh.N = 5\n")
    call("run", "--config", cfg, "--out", tmp_path / "o", "--seed", 77, "--quiet")
    resolved = parse((tmp_path / "o" / "resolved.cfg").read_text())
    assert resolved.get_int("awh.seed") == 77
    assert resolved.get_str("awh.update_mode") == "log"
    assert resolved.get_int("awh.N_I") == 50


def test_bundled_config_free_energies_close_to_oracle(tmp_path):
    assert call("run", "--config", BUNDLED, "--out", tmp_path / "o", "--quiet") == 0
    rows = read_csv(tmp_path / "o" / "free_energy.csv")
    assert len(rows) == 28
    assert max(float(r["abs_error"]) for r in rows) <= 0.05
    erg = {r["observable_name"]: r for r in read_csv(tmp_path / "o" / "ergodic.csv")}
    assert erg["one"]["estimate"] == "1"


def test_oracle_matches_library_bit_for_bit(tmp_path):
    cfg = write_cfg(tmp_path, "model.name = ising-chain-5\n")
    assert call("oracle", "--config", cfg, "--out", tmp_path / "o", "--quiet") == 0
    rows = read_csv(tmp_path / "o" / "oracle_free_energy.csv")
    want = free_energies(fixtures.ising_chain(5))
    assert [float(r["free_energy"]) for r in rows] == want.tolist()


def test_energy_csv_round_trip(tmp_path):
    cfg = write_cfg(tmp_path, "model.name = double-well-32\n")
    call("oracle", "--config", cfg, "--out", tmp_path / "a", "--quiet")
    again = write_cfg(tmp_path, "model.name = csv\nmodel.csv = a/energies.csv\n", "csv.cfg")
    assert call("oracle", "--config", again, "--out", tmp_path / "b", "--quiet") == 0
    fa = [r["free_energy"] for r in read_csv(tmp_path / "a" / "oracle_free_energy.csv")]
    fb = [r["free_energy"] for r in read_csv(tmp_path / "b" / "oracle_free_energy.csv")]
    assert fa == fb


def test_uniform_energy_gives_constant_free_energy(tmp_path):
    lines = ["state_index,grid_index,energy"] + [f"{x},{j},1.5" for x in range(4) for j in range(3)]
    (tmp_path / "flat.csv").write_text("\n".join(lines) + "\n")
    cfg = write_cfg(tmp_path, "model.name = csv\nmodel.csv = flat.csv\n")
    assert call("oracle", "--config", cfg, "--out", tmp_path / "o", "--quiet") == 0
    col = {r["free_energy"] for r in read_csv(tmp_path / "o" / "oracle_free_energy.csv")}
    assert len(col) == 1


def test_diagnose_first_row_is_the_optimum(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    call("diagnose", "--config", cfg, "--out", tmp_path / "o", "--quiet")
    first = read_csv(tmp_path / "o" / "diagnostics.csv")[0]
    assert float(first["V"]) <= 1e-28 and float(first["identity_residual"]) <= 1e-28
    assert first["pass"] == "true"


def test_diagnose_on_tiny_includes_enumeration(tmp_path):
    cfg = write_cfg(tmp_path, "model.name = tiny\ndiagnose.samples = 10\n")
    assert call("diagnose", "--config", cfg, "--out", tmp_path / "o", "--quiet") == 0
    checks = {r["check"]: r for r in read_csv(tmp_path / "o" / "summary.csv")}
    assert float(checks["enumerated_mean_error"]["value"]) <= 1e-12


def test_corrupted_gradient_exits_1(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert call("diagnose", "--config", cfg, "--out", tmp_path / "o", "--quiet",
                "--debug-corrupt-gradient") == 1


def test_ode_threshold_failure_exits_1(tmp_path):
    cfg = write_cfg(tmp_path, SMALL.replace("ode.v_threshold = 1", "ode.v_threshold = 1e-12"))
    assert call("ode", "--config", cfg, "--out", tmp_path / "o", "--quiet") == 1


@pytest.mark.parametrize("text,needle", [
    ("awh.N = many\n", "line 1, field 'awh.N'"),
    ("awh.N = 5\nawh.N = 6\n", "line 2, field 'awh.N'"),
    ("awh.steps = 5\n", "unknown key"),
    ("just words\n", "line 1"),
    ("model.name = csv\nmodel.csv = nowhere.csv\n", "file not found"),
    ("rho = 0.5, 0.6\n", "field 'rho'"),
    ("observables = a:coordinate; a:constant(2)\n", "unique"),
    ("observables = x:indicator(99)\n", "out of range"),
    ("model.name = double-well-32\nbox.bound = auto\noracle = off\n", "oracle"),
    ("awh.update_mode = cubic\n", "awh.update_mode"),
])
def test_config_errors_exit_2(tmp_path, capsys, text, needle):
    cfg = write_cfg(tmp_path, text)
    assert call("run", "--config", cfg, "--out", tmp_path / "o", "--quiet") == 2
    assert needle in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert call("run", "--config", tmp_path / "absent.cfg") == 2


def test_runtime_error_exits_3(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise FloatingPointError("simulated failure")

    monkeypatch.setattr(cli.awh, "run", boom)
    cfg = write_cfg(tmp_path, SMALL)
    assert call("run", "--config", cfg, "--out", tmp_path / "o", "--quiet") == 3
    assert "simulated failure" in capsys.readouterr().err


def test_replicas_use_consecutive_seeds(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert call("run", "--config", cfg, "--out", tmp_path / "o", "--replicas", 2, "--quiet") == 0
    seeds = [parse((tmp_path / "o" / f"replica_{r:03d}" / "resolved.cfg").read_text()).get_int("awh.seed")
             for r in range(2)]
    assert seeds == [3, 4]
    a = (tmp_path / "o" / "replica_000" / "theta_final.csv").read_bytes()
    b = (tmp_path / "o" / "replica_001" / "theta_final.csv").read_bytes()
    assert a != b
    # replica 1 equals a plain run with seed 4
    call("run", "--config", cfg, "--out", tmp_path / "p", "--seed", 4, "--quiet")
    assert (tmp_path / "p" / "theta_final.csv").read_bytes() == b


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("AWH_LAB_OUT", str(tmp_path / "root"))
    cfg = write_cfg(tmp_path, "awh.N = 2\n")
    assert call("oracle", "--config", cfg, "--quiet") == 0
    assert (tmp_path / "root" / "exp" / "resolved.cfg").exists()


def test_console_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, "awh.N = 2\n")
    out = subprocess.run([sys.executable, "-m", "awh_lab.cli", "oracle", "--config", str(cfg),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert out.returncode == 0
    assert "awh.N = 2" in out.stdout


def test_linear_mode_runs(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "awh.update_mode = linear\n")
    assert call("run", "--config", cfg, "--out", tmp_path / "o", "--quiet") == 0
    theta = [float(r["theta"]) for r in read_csv(tmp_path / "o" / "theta_final.csv")]
    assert np.all(np.isfinite(theta))


def test_config_grammar():
    cfg = parse("# comment\n\nawh.N = 7   # trailing\nrho = 0.25,0.75\n")
    assert cfg.get_int("awh.N") == 7
    assert cfg.get_vector("rho") == [0.25, 0.75]
    assert cfg.lines["rho"] == 4
    with pytest.raises(ConfigError):
        parse("bad key = 1\n")

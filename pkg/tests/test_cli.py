import json
import subprocess
import sys

import numpy as np
import pytest

from response_lab.cli import main
from response_lab.errors import ConfigError
from response_lab.serialize import RunConfig, atomic_write_bytes, load_config, read_csv, write_csv


def run(tmp_path, *args):
    code = main([*args, "--output-dir", str(tmp_path)])
    manifest = tmp_path / "manifest.json"
    return code, (json.loads(manifest.read_text()) if manifest.exists() else None)


# -- config ------------------------------------------------------------------------------


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('family = "cusp-tent-example"\nepsilon = 0.02\neps_list = [0.04, 0.02]\n'
                   "[grid]\nn = 512\nrefine_near_ae = true\n[tol]\nfixed_point = 1e-9\n")
    c = load_config(cfg, {"grid.n": 1024, "seed": None})
    assert c.grid_n == 1024  # flag wins
    assert c.refine_near_ae is True and c.tol_fixed_point == 1e-9 and c.epsilon == 0.02
    assert c.eps_list == [0.04, 0.02] and c.seed == 0
    assert c.to_dict()["grid.n"] == 1024


@pytest.mark.parametrize("overrides,match", [
    ({"epsilon": 0.5}, "outside"),
    ({"grid.n": 16}, ">= 128"),
    ({"tol.resolvent": -1.0}, "positive"),
    ({"tol.fixed_point": 1e-14}, ">= 1e-12"),
    ({"family": "nope"}, "unknown family"),
    ({"eps_list": [0.04, 0.3]}, "eps_list"),
    ({"seed": -2}, "seed"),
    ({"bogus": 1}, "unknown config keys"),
])
def test_config_errors(overrides, match):
    with pytest.raises(ConfigError, match=match):
        load_config(None, overrides)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("grid = [")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(bad)


def test_defaults():
    c = RunConfig().validate()
    assert c.epsilons == [0.0] and c.eps_list == [0.04, 0.02, 0.01, 0.005]


# -- writers -------------------------------------------------------------------------------


def test_csv_roundtrip(tmp_path):
    vals = np.array([0.1, 1 / 3, np.pi * 1e-300, -2.5e17])
    p = write_csv(tmp_path / "a.csv", ["x", "y"], [vals, [1.0, None, 2.0, 3.0]])
    header, data = read_csv(p)
    assert header == ["x", "y"]
    np.testing.assert_array_equal(data[:, 0], vals)  # 17 digits round-trip exactly
    assert np.isnan(data[1, 1])
    assert p.read_text().splitlines()[2].startswith("0.33333333333333331,")


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write_bytes(tmp_path / "sub" / "f.bin", b"abc")
    assert (tmp_path / "sub" / "f.bin").read_bytes() == b"abc"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.bin"]


# -- commands ------------------------------------------------------------------------------


def test_density_command(tmp_path):
    code, man = run(tmp_path, "density", "--family", "cusp-tent-example", "--epsilon", "0", "--grid-n", "2048")
    assert code == 0
    assert man["certificates"]["fixed_point_residual_l1"] <= 1e-10
    assert man["certificates"]["mass"] == pytest.approx(1.0, abs=1e-10)
    header, data = read_csv(tmp_path / "h0.csv")
    assert header == ["node", "value"] and data.shape == (2049, 2)
    assert man["config"]["grid.n"] == 2048 and man["version"]


def test_density_list(tmp_path):
    code, man = run(tmp_path, "density", "--epsilon", "0,0.02", "--grid-n", "1024")
    assert code == 0
    assert {"h0", "h_eps0.02"} <= set(man["files"])
    assert "mass@0.02" in man["certificates"]


@pytest.mark.parametrize("args", [["--epsilon", "0.5"], ["--grid-n", "16"], ["--eps-list", "a,b"],
                                  ["--family", "nope"]])
def test_config_exit_code(tmp_path, capsys, args):
    code, man = run(tmp_path, "density", *args)
    assert code == 1 and man is None
    assert capsys.readouterr().err


def test_out_of_range_message(tmp_path, capsys):
    assert run(tmp_path, "density", "--epsilon", "0.5")[0] == 1
    assert "outside [0, 0.1)" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path):
    code, man = run(tmp_path, "density", "--grid-n", "128")
    assert code == 2
    assert man["failed_stage"] == "density" and "residual floor" in man["error"]


def test_response_command(tmp_path):
    code, man = run(tmp_path, "response", "--grid-n", "2048")
    assert code == 0
    cols = [read_csv(tmp_path / f"{k}.csv")[1][:, 0] for k in ("h0", "q", "response")]
    assert all(np.array_equal(cols[0], c) for c in cols[1:])
    cert = man["certificates"]
    assert abs(cert["q_mean"]) <= 1e-8
    assert cert["resolvent_residual_l1"] <= cert["resolvent_bound"]
    assert cert["h0_residual_l1"] <= 1e-10
    assert all(man["flags"].values())


def test_validate_command(tmp_path):
    code, man = run(tmp_path, "validate")
    assert code == 0 and man["status"] == "PASS"
    header, data = read_csv(tmp_path / "deltas.csv")
    assert header == ["epsilon", "delta_l1", "ratio"] and data.shape == (4, 3)
    assert np.isnan(data[0, 2])
    svg = (tmp_path / "deltas.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_validate_single_entry(tmp_path):
    code, man = run(tmp_path, "validate", "--eps-list", "0.01", "--grid-n", "1024")
    assert code == 0 and man["status"] == "WARN"
    lines = (tmp_path / "deltas.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].endswith(",")


def test_validate_null_response(tmp_path):
    code, man = run(tmp_path, "validate", "--null-response", "--grid-n", "1024")
    assert code == 3 and man["status"] == "FAIL" and man["flags"]["null_response"]


def test_validate_bad_list(tmp_path):
    assert run(tmp_path, "validate", "--eps-list", "0.01,0.02")[0] == 1


def test_audit_command(tmp_path):
    code, man = run(tmp_path, "audit", "--grid-n", "4096")
    assert code == 0
    audit = json.loads((tmp_path / "audit.json").read_text())
    assert audit["A4"]["status"] == "pass" and audit["A4"]["theta_est"] >= 45 / 32
    assert man["certificates"]["beta_est"] == pytest.approx(-0.875, abs=0.01)
    # flat: no nesting beyond one level
    for v in audit.values():
        if isinstance(v, dict):
            assert not any(isinstance(x, dict) for x in v.values())


def test_audit_fails_for_tent(tmp_path):
    code, man = run(tmp_path, "audit", "--family", "tent", "--grid-n", "1024")
    assert code == 3 and man["flags"]["A6"] == "fail"


def test_spectrum_command(tmp_path):
    code, man = run(tmp_path, "spectrum", "--grid-n", "1024")
    assert code == 0
    spec = json.loads((tmp_path / "spectrum.json").read_text())
    assert spec["leading_eig"] == pytest.approx(1.0, abs=1e-6)
    assert len(spec["eigenvalues_modulus"]) == 20
    assert run(tmp_path, "spectrum", "--grid-n", "8192")[0] == 1


def test_psi_command(tmp_path):
    code, man = run(tmp_path, "psi", "--eps-list", "0.04,0.02,0.01", "--grid-n", "1024")
    assert code == 0
    header, data = read_csv(tmp_path / "psi.csv")
    assert header == ["epsilon", "l2_gap_psi1", "l2_gap_psi2"]
    assert np.all(np.diff(data[:, 1]) < 0) and np.all(np.diff(data[:, 2]) < 0)


def test_manifest_is_flat(tmp_path):
    _, man = run(tmp_path, "response", "--grid-n", "1024")
    for section in man.values():
        if isinstance(section, dict):
            assert not any(isinstance(v, dict) for v in section.values())


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "response_lab.cli", "density", "--grid-n", "512",
                          "--output-dir", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "h0.csv").exists()
    out = subprocess.run([sys.executable, "-m", "response_lab.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "0.1.0" in out.stdout

"""Acceptance criteria 1-10.

Each test prints one ``[ACn] PASS|FAIL ...`` line to the terminal, even
under pytest's output capture, and then asserts. Run directly with
``python tests/test_acceptance.py`` to get only the summary lines.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from response_lab import (GridDensity, apply, apply_derivative, audit_assumptions, birkhoff_check, get_family,
                          l2_bound_check, linear_response, ly_constants, norm, operator_difference_errors,
                          psi_gaps, solve_invariant_density, spectrum, ulam_oracle, uniform_nodes, validate_fd)
from response_lab.cli import main as cli_main

from conftest import random_density

EPS_LIST = [0.04, 0.02, 0.01, 0.005]
SUITE_SEED = 20240611


@pytest.fixture
def report_line(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(n: int, ok: bool, detail: str) -> None:
        line = f"[AC{n}] {'PASS' if ok else 'FAIL'} {detail}"
        if capman is not None:
            with capman.global_and_fixture_disabled():
                print("\n" + line, flush=True)
        else:
            print(line, flush=True)

    return emit


@pytest.fixture(scope="module")
def fam():
    return get_family("cusp-tent-example")


@pytest.fixture(scope="module")
def suite():
    rng = np.random.default_rng(SUITE_SEED)
    nodes = uniform_nodes(1024)
    return [random_density(rng, nodes) for _ in range(50)]


def test_ac1_assumption_audit(fam, report_line):
    t0 = time.perf_counter()
    eps_grid = np.linspace(0.0, 0.099, 12)
    theta_dev, theta_min = 0.0, np.inf
    for e in eps_grid:
        theta = audit_assumptions(fam, 4096, (float(e),))["A4"].measured["theta_est"]
        theta_min = min(theta_min, theta)
        theta_dev = max(theta_dev, abs(theta - (1 - e) * 25 / 16))
    beta = audit_assumptions(fam, 4096, (0.0,))["A6"].measured["beta_est"]
    elapsed = time.perf_counter() - t0
    ok = theta_min >= 45 / 32 and theta_dev <= 1e-6 and abs(beta + 7 / 8) <= 0.01 and elapsed <= 10
    report_line(1, ok, f"theta_min={theta_min:.8f} max|theta-(1-eps)25/16|={theta_dev:.2e} "
                       f"beta_est={beta:.5f} time={elapsed:.1f}s")
    assert ok


def test_ac2_markov_positivity_support(fam, suite, report_line):
    t0 = time.perf_counter()
    worst_int, worst_neg, support_ok = 0.0, 0.0, True
    for eps in (0.0, 0.03, 0.07):
        beyond = suite[0].nodes >= fam.a(eps)
        for f in suite:
            out = apply(fam, f, eps)
            worst_int = max(worst_int, abs(out.integral() - f.integral()))
            worst_neg = min(worst_neg, float(out.values.min()))
            support_ok &= bool(np.all(out.values[beyond] == 0.0))
    elapsed = time.perf_counter() - t0
    ok = worst_int <= 1e-9 and worst_neg >= -1e-12 and support_ok and elapsed <= 30
    report_line(2, ok, f"max|int Lf - int f|={worst_int:.2e} min(Lf)={worst_neg:.2e} "
                       f"zero_beyond_a={support_ok} time={elapsed:.1f}s")
    assert ok


def test_ac3_lasota_yorke(fam, suite, report_line):
    ly = ly_constants(fam, 0.0, 4096)
    slack = np.inf
    for f in suite:
        lhs = norm(apply_derivative(fam, f, None, 0.0), "L1")
        rhs = ly.lam * norm(f.derivative(), "L1") + ly.m * norm(f, "L2")
        slack = min(slack, rhs - lhs)
    l2 = l2_bound_check(fam, 0.0, suite)
    ok = slack >= 0 and abs(ly.lam - 0.64) <= 1e-6 and l2 <= 2
    report_line(3, ok, f"lambda={ly.lam:.8f} M={ly.m:.5f} min_slack={slack:.3e} L2_ratio_max={l2:.4f}")
    assert ok


def test_ac4_invariant_density(fam, report_line):
    t0 = time.perf_counter()
    sol = solve_invariant_density(fam, 0.0, grid_n=2048, tol=1e-10)
    h = sol.density
    ulam_gap = ulam_oracle(fam, 0.0, 4096).l1_distance(h)
    nodes = h.nodes
    inits = [np.ones_like(nodes), 2 * nodes, 1 - np.abs(2 * nodes - 1)]
    sols = [solve_invariant_density(fam, 0.0, tol=1e-10, init=GridDensity(nodes, v)).density for v in inits]
    spread = max(norm(a - b, "L1") for a in sols for b in sols)
    elapsed = time.perf_counter() - t0
    ok = (sol.residual_l1 <= 1e-10 and abs(h.integral() - 1) <= 1e-10 and ulam_gap <= 5e-3 and spread <= 1e-9
          and elapsed <= 120)
    report_line(4, ok, f"residual={sol.residual_l1:.2e} |mass-1|={abs(h.integral() - 1):.1e} "
                       f"ulam_l1={ulam_gap:.2e} init_spread={spread:.1e} time={elapsed:.1f}s")
    assert ok


def test_ac5_spectrum(fam, report_line):
    s1 = spectrum(fam, 0.0, 1024)
    s2 = spectrum(fam, 0.0, 2048)
    change = abs(s2.subdominant_modulus - s1.subdominant_modulus)
    ok = abs(s1.leading_eig - 1) <= 1e-6 and s1.subdominant_modulus < 1 and change <= 0.02
    report_line(5, ok, f"leading={s1.leading_eig:.10f} subdominant={s1.subdominant_modulus:.6f} "
                       f"doubling_change={change:.1e}")
    assert ok


def test_ac6_psi_continuity(fam, report_line):
    nodes = uniform_nodes(2048)
    f = GridDensity(nodes, 1.0 + 0.5 * np.cos(2 * np.pi * nodes))
    gaps = psi_gaps(fam, f, EPS_LIST)
    ok = bool(np.all(np.diff(gaps, axis=0) < 0))
    report_line(6, ok, "psi1=" + ",".join(f"{g:.3e}" for g in gaps[:, 0]) + " psi2="
                + ",".join(f"{g:.3e}" for g in gaps[:, 1]))
    assert ok


def test_ac7_response_certificates(fam, report_line):
    rep = linear_response(fam, 2048, resolvent_tol=1e-12)
    cert = rep.certificates()
    errs = operator_difference_errors(fam, rep.h0, rep.q, EPS_LIST)
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ok = (abs(cert["q_mean"]) <= 1e-8 and decreasing
          and cert["resolvent_residual_l1"] <= cert["resolvent_bound"])
    report_line(7, ok, f"q_mean={cert['q_mean']:.2e} opdiff=" + ",".join(f"{e:.3e}" for e in errs)
                + f" resolvent={cert['resolvent_residual_l1']:.2e}<=bound={cert['resolvent_bound']:.2e}")
    assert ok


def test_ac8_linear_response(fam, report_line):
    t0 = time.perf_counter()
    rep = validate_fd(fam, 2048, EPS_LIST)
    null = validate_fd(fam, 2048, EPS_LIST, null_response=True)
    elapsed = time.perf_counter() - t0
    ok = rep.verdict == "PASS" and rep.overall_ratio <= 0.5 and null.verdict == "FAIL" and elapsed <= 600
    report_line(8, ok, "deltas=" + ",".join(f"{d:.4f}" for d in rep.deltas)
                + f" ratio={rep.overall_ratio:.4f} null_verdict={null.verdict} time={elapsed:.1f}s")
    assert ok


def test_ac9_birkhoff(fam, report_line):
    h = solve_invariant_density(fam, 0.0, grid_n=2048).density
    r = birkhoff_check(fam, 0.0, "x", orbit_len=10_000_000, n_orbits=4, seed=0, density=h)
    ok = r.gap <= 1e-3
    report_line(9, ok, f"time_avg={r.time_avg:.6f} space_avg={r.space_avg:.6f} gap={r.gap:.2e} seed=0")
    assert ok


def test_ac10_determinism(tmp_path, report_line):
    same = {}
    for cmd, files in (("density", ["h0.csv"]), ("validate", ["deltas.csv", "h0.csv", "response.csv"])):
        dirs = [tmp_path / f"{cmd}{i}" for i in (1, 2)]
        args = [cmd, "--grid-n", "2048", "--seed", "0", "--output-dir"]
        # second run in a fresh interpreter so no in-process cache is shared
        codes = [cli_main([*args, str(dirs[0])]),
                 subprocess.run([sys.executable, "-m", "response_lab.cli", *args, str(dirs[1])]).returncode]
        for name in files:
            same[f"{cmd}/{name}"] = codes == [0, 0] and (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    ok = all(same.values())
    report_line(10, ok, " ".join(f"{k}={'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

"""Command-line entry point: ``response-lab <command> [options]``.

Every command writes its artifacts plus ``manifest.json`` into the output
directory. Exit codes: 0 ok, 1 config error, 2 numerical failure,
3 validation FAIL.
"""

from __future__ import annotations

import argparse
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ResponseLabError
from .grid import GridDensity, uniform_nodes
from .maps import audit_assumptions, get_family
from .response import DELTA_RATIO_MAX, linear_response, operator_difference_errors, validate_fd
from .serialize import (RunConfig, load_config, plot_deltas_svg, write_csv, write_density_csv, write_json)
from .solver import solve_invariant_density, spectrum
from .transfer import psi_gaps

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FAIL = 0, 1, 2, 3
LEADING_EIG_TOL = 1e-6
SPECTRUM_MAX_N = 4096
EIGEN_TABLE_SIZE = 20


class StageFailure(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class Run:
    """Collects timings, certificates, flags and files for one command."""

    def __init__(self, command: str, config: RunConfig):
        self.command = command
        self.config = config
        self.out = Path(config.output_dir)
        self.timings: dict[str, float] = {}
        self.certificates: dict = {}
        self.flags: dict = {}
        self.files: dict[str, str] = {}
        self.status = "ok"
        self.failed_stage: str | None = None
        self.error: str | None = None

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except ResponseLabError as exc:
            raise StageFailure(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - t0

    def file(self, key: str, name: str) -> Path:
        self.files[key] = name
        return self.out / name

    def manifest(self, exit_code: int) -> dict:
        return {
            "command": self.command,
            "version": __version__,
            "status": self.status,
            "exit_code": exit_code,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "config": self.config.to_dict(),
            "timings": self.timings,
            "certificates": self.certificates,
            "flags": self.flags,
            "files": self.files,
        }


def _eps_tag(e: float) -> str:
    return "h0" if e == 0.0 else f"h_eps{e!r}"


def cmd_density(run: Run) -> int:
    cfg = run.config
    fam = get_family(cfg.family)
    multi = len(cfg.epsilons) > 1
    for e in cfg.epsilons:
        tag = _eps_tag(e)
        with run.stage(f"density:{e!r}" if multi else "density"):
            sol = solve_invariant_density(fam, e, cfg.grid_n, cfg.tol_fixed_point, refine_near_ae=cfg.refine_near_ae)
        sfx = f"@{e!r}" if multi else ""
        run.certificates.update({
            f"fixed_point_residual_l1{sfx}": sol.residual_l1,
            f"mass{sfx}": sol.mass,
            f"iterations{sfx}": sol.iterations,
            f"min_value{sfx}": sol.min_value,
        })
        run.flags[f"converged{sfx}"] = sol.residual_l1 <= cfg.tol_fixed_point
        write_density_csv(run.file(tag, f"{tag}.csv"), sol.density)
    return EXIT_OK


def cmd_response(run: Run) -> int:
    cfg = run.config
    fam = get_family(cfg.family)
    with run.stage("response"):
        rep = linear_response(fam, cfg.grid_n, cfg.tol_fixed_point, cfg.tol_resolvent, cfg.refine_near_ae)
    run.timings.update({f"response:{k}": v for k, v in rep.timings.items()})
    with run.stage("operator_difference"):
        errs = operator_difference_errors(fam, rep.h0, rep.q, cfg.eps_list)
    cert = rep.certificates()
    run.certificates.update(cert)
    run.certificates["operator_difference_l1"] = errs
    run.flags.update({
        "q_mean_ok": abs(rep.q_mean) <= 1e-8,
        "resolvent_ok": cert["resolvent_residual_l1"] <= cert["resolvent_bound"],
        "operator_difference_decreasing": bool(all(b < a for a, b in zip(errs, errs[1:]))),
        "h0_converged": rep.h0_residual <= cfg.tol_fixed_point,
    })
    for key, dens in (("h0", rep.h0), ("q", rep.q), ("response", rep.response)):
        write_density_csv(run.file(key, f"{key}.csv"), dens)
    return EXIT_OK


def cmd_validate(run: Run, null_response: bool = False) -> int:
    cfg = run.config
    fam = get_family(cfg.family)
    eps = cfg.eps_list
    if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps_list must be nonempty, positive and strictly decreasing")
    with run.stage("validate"):
        rep = validate_fd(fam, cfg.grid_n, eps, cfg.tol_fixed_point, cfg.tol_resolvent, null_response,
                          cfg.refine_near_ae)
    run.timings.update({f"validate:{k}": v for k, v in rep.timings.items()})
    run.certificates.update(rep.certificates())
    run.certificates.update({
        "deltas": rep.deltas,
        "ratios": rep.ratios,
        "overall_ratio": rep.overall_ratio,
        "h_eps_residuals_l1": rep.residuals,
        "delta_ratio_max": DELTA_RATIO_MAX,
    })
    run.flags.update({"null_response": null_response, "monotone": rep.monotone, "verdict": rep.verdict})
    if rep.failure:
        run.status, run.failed_stage, run.error = "error", "validate", rep.failure
        return EXIT_NUMERIC
    write_density_csv(run.file("h0", "h0.csv"), rep.h0)
    write_density_csv(run.file("response", "response.csv"), rep.response)
    write_csv(run.file("deltas", "deltas.csv"), ["epsilon", "delta_l1", "ratio"], [rep.eps_list, rep.deltas, rep.ratios])
    plot_deltas_svg(run.file("plot", "deltas.svg"), rep.eps_list, rep.deltas,
                    title=f"{fam.name}, N={cfg.grid_n}" + (" (null response)" if null_response else ""))
    run.status = rep.verdict
    return EXIT_FAIL if rep.verdict == "FAIL" else EXIT_OK


def _audit_payload(audit) -> dict:
    payload = {"family": audit.family, "grid_size": audit.grid_size, "eps_samples": audit.eps_samples,
               "passed": audit.passed}
    for entry in audit.entries:
        obj = {"status": entry.status, "diagnostic": entry.diagnostic}
        for k, v in entry.measured.items():
            if isinstance(v, dict):
                obj.update({f"{k}@{kk}": vv for kk, vv in v.items()})
            else:
                obj[k] = v
        payload[entry.id] = obj
    return payload


def cmd_audit(run: Run) -> int:
    cfg = run.config
    fam = get_family(cfg.family)
    samples = sorted({0.0, *map(float, cfg.epsilons), *map(float, cfg.eps_list)})
    with run.stage("audit"):
        audit = audit_assumptions(fam, cfg.grid_n, samples)
    payload = _audit_payload(audit)
    write_json(run.file("audit", "audit.json"), payload)
    for key in ("A4", "A6"):
        run.certificates.update({k: v for k, v in payload[key].items() if k not in ("status", "diagnostic")})
    run.flags.update({e.id: e.status for e in audit.entries})
    run.flags["passed"] = audit.passed
    run.status = "ok" if audit.passed else "FAIL"
    return EXIT_OK if audit.passed else EXIT_FAIL


def cmd_spectrum(run: Run) -> int:
    cfg = run.config
    if cfg.grid_n > SPECTRUM_MAX_N:
        raise ConfigError(f"spectrum needs grid.n <= {SPECTRUM_MAX_N}, got {cfg.grid_n}")
    fam = get_family(cfg.family)
    e = cfg.epsilons[0]
    with run.stage("spectrum"):
        sd = spectrum(fam, e, cfg.grid_n)
    ev = sd.eigenvalues[:EIGEN_TABLE_SIZE]
    scalars = {
        "epsilon": e,
        "grid_n": cfg.grid_n,
        "leading_eig": sd.leading_eig,
        "subdominant_modulus": sd.subdominant_modulus,
        "lambda_ly": sd.lambda_ly,
        "m_ly": sd.m_ly,
        "ess_radius_bound": sd.ess_radius_bound,
        "n_isolated": sd.n_isolated,
    }
    write_json(run.file("spectrum", "spectrum.json"), {
        **scalars,
        "eigenvalues_real": ev.real.tolist(),
        "eigenvalues_imag": ev.imag.tolist(),
        "eigenvalues_modulus": np.abs(ev).tolist(),
    })
    run.certificates.update(scalars)
    ok = abs(sd.leading_eig - 1.0) <= LEADING_EIG_TOL and sd.subdominant_modulus < 1.0
    run.flags.update({"leading_is_one": abs(sd.leading_eig - 1.0) <= LEADING_EIG_TOL,
                      "spectral_gap": sd.subdominant_modulus < 1.0})
    run.status = "ok" if ok else "FAIL"
    return EXIT_OK if ok else EXIT_FAIL


def cmd_psi(run: Run) -> int:
    cfg = run.config
    fam = get_family(cfg.family)
    eps = sorted((e for e in cfg.eps_list if e > 0), reverse=True)
    if not eps:
        raise ConfigError("psi needs at least one positive entry in eps_list")
    nodes = uniform_nodes(cfg.grid_n)
    f = GridDensity(nodes, 1.0 + 0.5 * np.cos(2 * np.pi * nodes))
    with run.stage("psi"):
        gaps = psi_gaps(fam, f, eps)
    write_csv(run.file("psi", "psi.csv"), ["epsilon", "l2_gap_psi1", "l2_gap_psi2"], [eps, gaps[:, 0], gaps[:, 1]])
    decreasing = [bool(np.all(np.diff(gaps[:, j]) < 0)) for j in range(2)]
    run.certificates.update({"l2_gap_psi1": gaps[:, 0].tolist(), "l2_gap_psi2": gaps[:, 1].tolist()})
    run.flags.update({"psi1_decreasing": decreasing[0], "psi2_decreasing": decreasing[1]})
    ok = all(decreasing)
    run.status = "ok" if ok else "FAIL"
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "density": (cmd_density, "invariant density by power iteration"),
    "response": (cmd_response, "source term q and linear response"),
    "validate": (cmd_validate, "finite-difference validation of the response"),
    "audit": (cmd_audit, "numerical audit of the standing assumptions"),
    "spectrum": (cmd_spectrum, "eigenvalues of the collocation matrix"),
    "psi": (cmd_psi, "L2 continuity of the branch components"),
}


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _epsilon_arg(text: str):
    vals = _float_list(text)
    return vals[0] if len(vals) == 1 else vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config file; flags override its entries")
    common.add_argument("--family", help="map family name")
    common.add_argument("--epsilon", type=_epsilon_arg, help="parameter value or comma-separated list")
    common.add_argument("--grid-n", type=int, help="number of grid cells")
    common.add_argument("--refine-near-ae", action=argparse.BooleanOptionalAction, default=None,
                        help="halve the mesh around the turning value")
    common.add_argument("--tol-fixed-point", type=float, help="L1 residual target of the power iteration")
    common.add_argument("--tol-resolvent", type=float, help="relative truncation tolerance of the Neumann series")
    common.add_argument("--eps-list", type=_float_list, help="comma-separated decreasing epsilons")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--output-dir", help="directory for all outputs")

    parser = argparse.ArgumentParser(prog="response-lab", description="Linear response of cusp interval maps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "validate":
            p.add_argument("--null-response", action="store_true",
                           help="negative control: compare against a zero response")
    return parser


def _overrides(args) -> dict:
    return {
        "family": args.family,
        "epsilon": args.epsilon,
        "grid.n": args.grid_n,
        "grid.refine_near_ae": args.refine_near_ae,
        "tol.fixed_point": args.tol_fixed_point,
        "tol.resolvent": args.tol_resolvent,
        "eps_list": args.eps_list,
        "seed": args.seed,
        "output_dir": args.output_dir,
    }


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(args.command, cfg)
    func = COMMANDS[args.command][0]
    try:
        code = func(run, args.null_response) if args.command == "validate" else func(run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        run.status, run.failed_stage, run.error = "error", exc.stage, str(exc.cause)
        code = EXIT_NUMERIC
    write_json(run.out / "manifest.json", run.manifest(code))
    msg = f"{run.command}: {run.status}"
    if run.error:
        msg += f" ({run.failed_stage}: {run.error})"
    print(msg, file=sys.stderr if code else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())

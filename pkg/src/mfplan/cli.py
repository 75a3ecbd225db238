"""Command-line orchestration: solve, verify, sweep.

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence,
3 estimate-check failure.  Outputs (fields.csv, log.json, report.json,
eps_error.csv) are deterministic: fixed summation order, 17-significant-
digit decimal floats, no timestamps — reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import estimates
from .config import ConfigError, RunConfig, load_config
from .dual import DualSolveError, solve_dual
from .grids import validate_problem
from .hamiltonian import DegenerateHamiltonianError
from .primal import solve_primal

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2
EXIT_CHECK_FAILED = 3


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_fields_csv(path: Path, fields: dict[str, np.ndarray]):
    lines = ["field,t_index,x_index,value"]
    for name in sorted(fields):
        values = fields[name]
        for k in range(values.shape[0]):
            for i in range(values.shape[1]):
                lines.append(f"{name},{k},{i},{_fmt(values[k, i])}")
    path.write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _describe(cfg: RunConfig) -> str:
    g = cfg.spec.grid
    H, C = cfg.spec.hamiltonian, cfg.spec.coupling
    lines = [
        f"grid: {g.n_t}x{g.n_x} on [0,{_fmt(g.T)}]x[{_fmt(g.x_min)},{_fmt(g.x_max)}]"
        f" ({g.topology})",
        f"hamiltonian: {H.family} q={_fmt(H.q)} varpi={_fmt(H.varpi)}"
        f" scale={_fmt(H.scale)}",
        f"coupling: eps={_fmt(C.epsilon)} f={C.f_family} params={list(C.f_params)}",
        f"method: {cfg.method}",
        f"checks: {list(cfg.checks)}",
        f"mass defects: m0={_fmt(cfg.spec.mass_defect_m0)}"
        f" m1={_fmt(cfg.spec.mass_defect_m1)}",
    ]
    return "\n".join(lines)


def _run_checks(cfg: RunConfig, primal_state, u, m_dual):
    spec = cfg.spec
    results = []
    for name in cfg.checks:
        if name == "duality_gap":
            if primal_state is None or u is None:
                results.append(estimates.CheckResult(
                    name, 0.0, 0.0, 0.0, True, skipped=True,
                    reason="needs both solves"))
                continue
            gap = estimates.duality_gap(primal_state, u, m_dual, spec)
            results.append(estimates.CheckResult(
                name=name, lhs=gap, rhs=0.0, tolerance=1e-3,
                passed=gap <= 1e-3,
                formula="|J(primal)-J(dual rebuild)|/(1+|J(primal)|)"))
            continue
        if u is None:
            results.append(estimates.CheckResult(
                name, 0.0, 0.0, 0.0, True, skipped=True,
                reason="needs a dual solve"))
            continue
        if name == "displacement_convexity":
            results.append(estimates.check_displacement_convexity(
                m_dual, u, spec))
        elif name == "lp_bounds":
            results.append(estimates.check_lp_bounds(m_dual, spec))
        elif name == "local_gradient_estimate":
            results.append(estimates.check_local_gradient_estimate(
                u, m_dual, spec))
        elif name == "energy_identity":
            results.append(estimates.check_energy_identity(u, m_dual, spec))
        elif name == "maximum_principle_ut":
            results.append(estimates.check_ut_max_principle(u, spec))
    return results


def run(config_path: str, verb: str = "solve", method: str | None = None,
        out: str | None = None, dry_run: bool = False) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if method is not None:
        if method not in ("primal", "dual", "both"):
            print("error: config key 'method': must be primal, dual, or both",
                  file=sys.stderr)
            return EXIT_CONFIG
        cfg = dataclasses.replace(cfg, method=method)
    if verb == "verify" and not cfg.checks:
        from .config import KNOWN_CHECKS
        cfg = dataclasses.replace(cfg, checks=KNOWN_CHECKS)

    report = validate_problem(cfg.spec)
    if not report.admissible:
        print(f"error: config key 'problem': inadmissible instance "
              f"({', '.join(report.reasons)})", file=sys.stderr)
        return EXIT_CONFIG

    if dry_run:
        print(_describe(cfg))
        return EXIT_OK

    outdir = Path(out or cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    if verb == "sweep":
        return _run_sweep(cfg, outdir)

    primal_state = primal_log = None
    u = m_dual = dual_log = None
    log_payload: dict = {}
    if cfg.method in ("primal", "both"):
        primal_state, primal_log = solve_primal(cfg.spec, cfg.primal)
        log_payload["primal"] = {
            "iters": primal_log.iters,
            "converged": primal_log.converged,
            "final_value": primal_log.final_value,
            "feasibility": primal_log.feasibility,
            "fp_residual": primal_log.fp_residual,
        }
        if not primal_log.converged:
            _write_json(outdir / "log.json", log_payload)
            print("primal solve did not converge", file=sys.stderr)
            return EXIT_NOT_CONVERGED
    if cfg.method in ("dual", "both"):
        try:
            u, m_dual, dual_log = solve_dual(cfg.spec, cfg.dual)
        except (DualSolveError, DegenerateHamiltonianError, ValueError) as exc:
            print(f"dual solve failed: {exc}", file=sys.stderr)
            return EXIT_NOT_CONVERGED
        log_payload["dual"] = {
            "stages": dual_log.stages,
            "converged": dual_log.converged,
            "final_residual": dual_log.final_residual,
            "refined": dual_log.refined,
        }

    fields = {}
    if primal_state is not None:
        fields["m_primal"] = primal_state.m.values
        fields["w_primal"] = primal_state.w.values
    if u is not None:
        fields["u_dual"] = u.values
        fields["m_dual"] = m_dual.values
    _write_fields_csv(outdir / "fields.csv", fields)
    _write_json(outdir / "log.json", log_payload)

    checks = _run_checks(cfg, primal_state, u, m_dual)
    _write_json(outdir / "report.json", {
        "checks": [dataclasses.asdict(c) for c in checks],
        "validation": dataclasses.asdict(report),
    })
    for c in checks:
        status = "SKIP" if c.skipped else ("PASS" if c.passed else "FAIL")
        print(f"{status} {c.name}: lhs={_fmt(c.lhs)} rhs={_fmt(c.rhs)} "
              f"tol={_fmt(c.tolerance)}")
    if any(not c.passed and not c.skipped for c in checks):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _run_sweep(cfg: RunConfig, outdir: Path) -> int:
    if not cfg.sweep_eps:
        print("error: config key 'sweep.eps_list': missing required key",
              file=sys.stderr)
        return EXIT_CONFIG
    try:
        sweep = estimates.eps_sweep(cfg.spec, cfg.sweep_eps, cfg.primal)
    except ValueError as exc:
        print(f"error: config key 'sweep': {exc}", file=sys.stderr)
        return EXIT_CONFIG
    lines = ["eps,error"]
    for eps, err in zip(sweep.eps_list, sweep.errors):
        lines.append(f"{_fmt(eps)},{_fmt(err)}")
    (outdir / "eps_error.csv").write_text("\n".join(lines) + "\n")
    _write_json(outdir / "report.json", {
        "sweep": dataclasses.asdict(sweep),
    })
    if not all(sweep.converged):
        print("sweep member solve did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    if not sweep.passed:
        print("sweep error profile is not monotone", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print("sweep: monotone nonincreasing error profile")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfplan",
        description="Entropy-regularized dynamic transport planning solver",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("solve", "verify", "sweep"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--dry-run", action="store_true")
        if verb == "solve":
            p.add_argument("--method", choices=("primal", "dual", "both"),
                           default=None)
    args = parser.parse_args(argv)
    return run(
        args.config,
        verb=args.verb,
        method=getattr(args, "method", None),
        out=args.out,
        dry_run=args.dry_run,
    )


if __name__ == "__main__":
    sys.exit(main())

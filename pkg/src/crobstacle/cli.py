"""Command-line front end.

Subcommands: ``run``, ``converge``, ``diagnose``, ``oracle``.
Exit codes: 0 success, 2 config error, 3 solver non-convergence,
4 acceptance-check failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .diagnostics import (CONSISTENCY_BATTERY, HDIV_BATTERY, energy_report, from_energy,
                          property_report, write_report_csv)
from .discretisation import TimeGrid, build_cr
from .io import write_manifest, write_snapshot, write_table
from .mesh import build_structured_triangulation
from .stepper import (SchemeOperators, StepFailure, initial_levels, advance_step,
                      solve_evolution)
from .study import ERROR_NAMES, orders, self_convergence, strictly_decreasing, variation

log = logging.getLogger("crobstacle")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4
ORDER_TARGET = 0.8


def _manifest(out: Path, command: str, cfg: RunConfig, status: str, extra=None) -> None:
    payload = {"command": command, "version": __version__, "status": status,
               "config": cfg.resolved()}
    if extra:
        payload.update(extra)
    write_manifest(out / "manifest.json", payload)


def _prepare(cfg: RunConfig, n: int, steps: int):
    spec = cfg.problem()
    mesh = build_structured_triangulation(n)
    try:
        spec.validate(mesh, seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    gd = build_cr(mesh, TimeGrid.uniform(cfg.T, steps), spec.obstacle)
    return spec, gd


def _residual_rows(traj):
    times = traj.times
    return [(k + 1, times[k + 1], r.picard_iterations, r.converged, r.residual_sign,
             r.residual_complementarity) for k, r in enumerate(traj.reports)]


RESIDUAL_HEADER = ["step", "t[time]", "picard_iterations[1]", "converged[bool]",
                   "residual_sign[1]", "residual_complementarity[1]"]


def cmd_run(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    steps = cfg.base_steps()
    spec, gd = _prepare(cfg, cfg.n, steps)
    status, code, failed_step = "ok", EXIT_OK, None
    try:
        traj = solve_evolution(spec, gd, cfg.step_options())
    except StepFailure as exc:
        log.error("%s", exc)
        traj, status, code, failed_step = exc.trajectory, "failed", EXIT_SOLVER, exc.step

    if cfg.vtk:
        for k in range(0, len(traj.a_levels), cfg.snapshot_every):
            write_snapshot(out / "snapshots", k, gd,
                           {"A": traj.a_levels[k], "B": traj.b_levels[k]}, traj.times[k])
    write_table(out / "residuals.csv", RESIDUAL_HEADER, _residual_rows(traj))
    if status == "ok":
        report = from_energy(energy_report(gd, traj))
        write_report_csv(out / "energy.csv", report.rows(0))
    max_res = max([0.0] + traj.residual_sign + traj.residual_complementarity)
    _manifest(out, "run", cfg, status, {"failed_step": failed_step, "partial": status != "ok",
                                        "max_residual": max_res, "n_dofs": gd.n_dofs})
    log.info("run %s: %d steps, max complementarity residual %.3e", status,
             len(traj.reports), max_res)
    return code


def cmd_converge(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    if cfg.levels < 3:
        raise ConfigError("converge needs at least 3 levels")
    steps = cfg.base_steps()
    spec = cfg.problem()
    try:
        spec.validate(build_structured_triangulation(cfg.n), seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        results, ref, errors = self_convergence(spec, cfg.n, steps, cfg.levels,
                                                cfg.step_options())
    except StepFailure as exc:
        log.error("%s", exc)
        _manifest(out, "converge", cfg, "failed", {"error": str(exc)})
        return EXIT_SOLVER

    ords = orders(errors)
    rows = []
    energy_rows = []
    max_res = []
    for r, e, o in zip(results + [ref], errors + [None], ords + [None]):
        traj = r.trajectory
        res = max([0.0] + traj.residual_sign + traj.residual_complementarity)
        max_res.append(res)
        row = [r.level, r.n, r.h, r.steps, r.dt]
        for k in ERROR_NAMES:
            row += [None if e is None else e[k], None if o is None else o[k]]
        rows.append(row + [res, int(r is ref)])
        energy_rows += from_energy(energy_report(traj.gd, traj)).rows(r.level)
    header = ["level", "n", "h[length]", "steps", "dt[time]"]
    for k in ERROR_NAMES:
        header += [f"err_{k}[1]", f"order_{k}[1]"]
    header += ["max_complementarity_residual[1]", "reference"]
    write_table(out / "convergence.csv", header, rows)
    write_report_csv(out / "energy.csv", energy_rows)

    decreasing = strictly_decreasing(errors)
    residual_ok = all(v <= cfg.check_tol for v in max_res)
    for k in ("PiA_LinfL2", "PiB_LinfL2"):
        last = ords[-1][k]
        if last is not None and last < ORDER_TARGET:
            log.warning("empirical order of %s is %.3f < %.1f (soft check)", k, last, ORDER_TARGET)
    ok = all(decreasing.values()) and residual_ok
    _manifest(out, "converge", cfg, "ok" if ok else "check-failed",
              {"strictly_decreasing": decreasing, "complementarity_ok": residual_ok})
    for k, v in decreasing.items():
        log.info("%-12s strictly decreasing: %s", k, v)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_diagnose(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    if cfg.levels < 3:
        raise ConfigError("diagnose needs at least 3 levels")
    grid = TimeGrid.uniform(cfg.T, cfg.base_steps())
    reports = []
    mesh = build_structured_triangulation(cfg.n)
    for level in range(cfg.levels):
        if level:
            mesh = build_structured_triangulation(cfg.n * 2 ** level)
        reports.append(property_report(mesh, grid))
    long_rows = [row for lvl, rep in enumerate(reports) for row in rep.rows(lvl)]
    write_report_csv(out / "diagnostics.csv", long_rows)

    metrics = [row[0] for row in reports[0].rows(0)]
    table = {name: [dict((r[0], r[2]) for r in rep.rows(0))[name] for rep in reports]
             for name in metrics}
    L = cfg.levels
    header = ["metric"] + [f"level{l}[1]" for l in range(L)] + \
             [f"ratio{l}{l + 1}[1]" for l in range(L - 1)]
    wide = []
    for name, vals in table.items():
        ratios = [vals[l] / vals[l + 1] if vals[l + 1] > 0 else None for l in range(L - 1)]
        wide.append([name] + vals + ratios)
    write_table(out / "diagnostics_table.csv", header, wide)

    failures = []
    cd = table["coercivity_CD"]
    if variation(cd) >= 0.2:
        failures.append(f"C_D varies by {variation(cd):.3f} >= 0.2")
    for case in CONSISTENCY_BATTERY:
        vals = table[f"consistency:{case.name}"]
        if case.kind == "affine":
            if max(vals) > 1e-10:
                failures.append(f"consistency:{case.name} not exact ({max(vals):.3e})")
        elif any(a / b < 1.5 for a, b in zip(vals, vals[1:])):
            failures.append(f"consistency:{case.name} decay factor below 1.5")
    for case in HDIV_BATTERY:
        vals = table[f"limit_conformity:{case.name}"]
        if case.decays and any(a / b < 1.5 for a, b in zip(vals, vals[1:])):
            failures.append(f"limit_conformity:{case.name} decay factor below 1.5")
    for f in failures:
        log.error("diagnose check failed: %s", f)
    _manifest(out, "diagnose", cfg, "ok" if not failures else "check-failed",
              {"failures": failures})
    return EXIT_OK if not failures else EXIT_CHECK


def cmd_oracle(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    steps = cfg.base_steps()
    spec, gd = _prepare(cfg, cfg.n, steps)
    if gd.n_dofs > 15:
        raise ConfigError(f"oracle needs at most 15 DOFs; n = {cfg.n} gives {gd.n_dofs}")
    opts = cfg.step_options()
    dt = cfg.T / steps
    ops = SchemeOperators.build(gd, spec)
    a0, b0 = initial_levels(spec, gd)
    a_p, b_p, rep_p = advance_step(gd, spec, a0, b0, dt, opts, ops)
    opts.vi_solver = "oracle"
    a_o, b_o, rep_o = advance_step(gd, spec, a0, b0, dt, opts, ops)
    disc = float(max(np.abs(a_p - a_o).max(initial=0.0), np.abs(b_p - b_o).max(initial=0.0)))
    tol = 1e-10 if gd.n_dofs == 1 else 1e-8
    rows = [(i, a_p[i], a_o[i], b_p[i], b_o[i]) for i in range(gd.n_dofs)]
    write_table(out / "oracle.csv", ["dof", "A_psor[1]", "A_oracle[1]", "B_psor[1]",
                                     "B_oracle[1]"], rows)
    ok = disc <= tol and rep_p.converged and rep_o.converged
    _manifest(out, "oracle", cfg, "ok" if ok else "check-failed",
              {"discrepancy": disc, "tolerance": tol, "n_dofs": gd.n_dofs})
    print(f"max discrepancy PSOR vs enumeration: {disc:.3e} (tol {tol:.0e}, {gd.n_dofs} DOFs)")
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "diagnose": cmd_diagnose,
            "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crobstacle", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=func.__name__.replace("cmd_", ""))
        p.add_argument("--config", required=True, metavar="PATH", help="INI run configuration")
        p.add_argument("--out", default="out", metavar="DIR", help="output directory")
        p.add_argument("--levels", type=int, default=None, metavar="K",
                       help="override [mesh] levels")
        p.add_argument("--seed", type=int, default=None, metavar="N", help="override [run] seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_file(args.config)
        if args.levels is not None:
            cfg.levels = args.levels
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()
        return COMMANDS[args.command](cfg, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

    insulated-neck table --n-max 6
    insulated-neck certify --config run.json --out out/
    insulated-neck sweep --set problem.n=4 --jobs 4

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 a diagnostic ran but did not pass.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certificate import blow_up_exponent, gamma_star, scan_certificate
from .config import RunConfig
from .errors import ConfigError, DomainError, SolverError
from .experiments import (check_boundary_identity, check_envelope, check_q_maximum, expected_slope,
                          run_sweep, solve_sweep)
from .solver import ReducedProblem, build_grid, gradient_surrogate, solve_problem

COMMANDS = ("certify", "solve", "sweep", "check-lemma", "check-q", "check-envelope", "table")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DIAGNOSTIC = 0, 1, 2, 3


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _report(command, cfg, result):
    return {"command": command, "version": __version__, "config": cfg.to_dict(), "result": result}


def gamma_table(n_max):
    return [(n, gamma_star(n), blow_up_exponent(n)) for n in range(3, n_max + 1)]


def cmd_table(cfg, out, args):
    n_max = args.n_max if args.n_max is not None else int(cfg.data["table"]["n_max"])
    if n_max < 3:
        raise ConfigError("--n-max must be >= 3")
    rows = gamma_table(n_max)
    print(f"{'n':>4} {'gamma*':>10} {'-(1-gamma*)/2':>14}")
    for n, g, e in rows:
        print(f"{n:>4} {g:>10.6f} {e:>14.6f}")
    if "csv" in cfg.data["output"]["formats"]:
        _write_csv(out / "table.csv", ["n", "gamma_star", "blow_up_exponent"], rows)
    _write_json(out / "table.json", _report("table", cfg, [list(r) for r in rows]))
    return EXIT_OK


def cmd_certify(cfg, out, args):
    aux = cfg.aux()
    params = {k: getattr(aux, k) for k in ("A", "b", "delta", "eps", "xi0")}
    rep = scan_certificate(aux.n, aux.gamma, aux.eta, cfg.scan_boxes(), **params)
    _write_json(out / "certificate.json", _report("certify", cfg, rep.to_dict()))
    if "csv" in cfg.data["output"]["formats"]:
        rows = [(name, r, z, phi, v, int(np.sign(v))) for name, r, z, phi, v in rep.rows]
        _write_csv(out / "certificate.csv",
                   ["check", "n", "gamma", "eta", "r", "z", "phi", "value", "sign"],
                   [(c, rep.n, rep.gamma, rep.eta, r, z, p, v, s) for c, r, z, p, v, s in rows])
    for c in rep.checks:
        print(f"{c.check_name:<15} {c.verdict:<6} worst={c.worst_value:+.6e} at {c.worst_point}")
    print(f"phi_crit: {rep.phi_crit}")
    return EXIT_OK


def cmd_solve(cfg, out, args):
    geom = cfg.geometry()
    grid = cfg.grid_policy().grid(geom)
    prob = ReducedProblem(cfg.n, cfg.k, geom, outer_data=cfg.outer_data)
    fld = solve_problem(prob, grid, tol=cfg.grid_policy().tol)
    G = gradient_surrogate(fld).G
    RR, ZZ = grid.mesh()
    meta = {"problem": {"n": prob.n, "k": prob.k, "outer_data": cfg.outer_data},
            "geometry": geom.to_dict(),
            "grid": {"Nr": grid.Nr, "Ns": grid.Ns, "stretch": grid.beta, "first_cell": float(grid.r[1])},
            "residual": fld.residual, "max_G": float(G.max())}
    _write_json(out / "field.json", _report("solve", cfg, meta))
    _write_csv(out / "field.csv", ["r", "z", "v", "G"],
               zip(RR.ravel(), ZZ.ravel(), fld.values.ravel(), G.ravel()))
    print(f"solved {grid.Nr}x{grid.Ns} grid, residual {fld.residual:.2e}, max G {G.max():.6g}")
    return EXIT_OK


def cmd_sweep(cfg, out, args):
    s = cfg.data["sweep"]
    fit, samples = run_sweep(cfg.n, cfg.k, cfg.geometry(), cfg.eps_list(), cfg.grid_policy(),
                             jobs=args.jobs, outer_data=cfg.outer_data)
    target = expected_slope(cfg.n, cfg.k)
    # drop-one stability needs a fit left over after removing a sample
    drop_slope = fit.drop_smallest().slope if len(fit.window) >= 4 else None
    drop_change = None if drop_slope is None else abs(drop_slope - fit.slope)
    passed = abs(fit.slope - target) <= s["slope_tol"] and fit.r_squared >= s["r_squared_min"]
    result = {"fit": fit.to_dict(), "expected_slope": target, "drop_one_slope": drop_slope,
              "drop_one_change": drop_change, "passed": bool(passed),
              "samples": [vars(x) for x in samples]}
    _write_json(out / "sweep.json", _report("sweep", cfg, result))
    if "csv" in cfg.data["output"]["formats"]:
        _write_csv(out / "sweep.csv", ["eps", "max_G", "Nr", "Ns", "residual", "resolved"],
                   [(x.eps, x.max_G, x.Nr, x.Ns, x.residual, x.resolved) for x in samples])
    print(f"{'eps':>10} {'max_G':>12} {'residual':>10}")
    for x in samples:
        print(f"{x.eps:>10.3e} {x.max_G:>12.6g} {x.residual:>10.2e}")
    drop_txt = "n/a" if drop_change is None else f"{drop_change:.4f}"
    print(f"slope {fit.slope:+.4f} (expected {target:+.4f}), r^2 {fit.r_squared:.6f}, "
          f"drop-one change {drop_txt}")
    return EXIT_OK if passed else EXIT_DIAGNOSTIC


def cmd_check_lemma(cfg, out, args):
    L = cfg.data["lemma"]
    geom = cfg.geometry(eps=float(L["eps"]))
    if not geom.is_paraboloid:
        raise ConfigError("check-lemma needs the pure paraboloid geometry")
    fields = []
    for lev in range(int(L["levels"])):
        grid = build_grid(geom, int(L["Nr0"]) * 2**lev, int(L["Ns0"]) * 2**lev, stretch=L["stretch"])
        fields.append(solve_problem(ReducedProblem(cfg.n, 1, geom), grid))
    r_max = float(L["r_max_fraction"]) * geom.R
    results = [check_boundary_identity(fields, sample, form, float(L["min_ratio"]), r_max)
               for sample, form in (("transverse", "literal"), ("transverse", "exact"),
                                    ("in_plane", "exact"), ("in_plane", "literal"))]
    gate = results[:3]
    _write_json(out / "lemma.json", _report("check-lemma", cfg, [r.to_dict() for r in results]))
    for i, r in enumerate(results):
        ratios = ", ".join(f"{q:.2f}" for q in r.details["ratios"])
        tag = "INFO" if i >= len(gate) else ("PASS" if r.passed else "FAIL")
        print(f"{tag} {r.name:<38} residuals {r.details['residuals']} ratios [{ratios}]")
    return EXIT_OK if all(r.passed for r in gate) else EXIT_DIAGNOSTIC


def cmd_check_q(cfg, out, args):
    geom = cfg.geometry()
    grid = cfg.grid_policy().grid(geom)
    fld = solve_problem(ReducedProblem(cfg.n, cfg.k, geom, outer_data=cfg.outer_data), grid)
    aux = None if cfg.data["q"]["control"] else cfg.aux(eps=geom.eps)
    res = check_q_maximum(fld, aux, band=float(cfg.data["q"]["band"]))
    _write_json(out / "q.json", _report("check-q", cfg, res.to_dict()))
    print(f"{'PASS' if res.passed else 'FAIL'} {res.name}: argmax r = {res.location['r']:.4g} "
          f"(band {res.tolerance} R = {res.tolerance * geom.R:.4g}), Q = {res.value:.6g}")
    return EXIT_OK if res.passed else EXIT_DIAGNOSTIC


def cmd_check_envelope(cfg, out, args):
    gamma = cfg.data["envelope"]["gamma"]
    gamma = gamma_star(cfg.n) if gamma is None else float(gamma)
    fields, samples = solve_sweep(cfg.n, cfg.k, cfg.geometry(), cfg.eps_list(), cfg.grid_policy(),
                                  jobs=args.jobs, outer_data=cfg.outer_data)
    failed = [s for s in samples if not np.isfinite(s.max_G)]
    if failed:
        raise SolverError(f"{len(failed)} sweep solves failed: {failed[0].error}")
    res = check_envelope(fields, gamma, float(cfg.data["envelope"]["ratio_max"]))
    _write_json(out / "envelope.json", _report("check-envelope", cfg, res.to_dict()))
    if "csv" in cfg.data["output"]["formats"]:
        _write_csv(out / "envelope.csv", ["eps", "C", "r_at_max"],
                   zip(res.details["eps"], res.details["C"], res.details["r_at_max"]))
    print(f"{'PASS' if res.passed else 'FAIL'} envelope gamma={gamma:.6f}: "
          f"max/min C = {res.value:.4f} (limit {res.tolerance})")
    return EXIT_OK if res.passed else EXIT_DIAGNOSTIC


HANDLERS = {
    "table": cmd_table, "certify": cmd_certify, "solve": cmd_solve, "sweep": cmd_sweep,
    "check-lemma": cmd_check_lemma, "check-q": cmd_check_q, "check-envelope": cmd_check_envelope,
}


def build_parser():
    p = argparse.ArgumentParser(prog="insulated-neck", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for eps sweeps")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set problem.n=4")
    p.add_argument("--n-max", type=int, default=None, help="largest n for `table`")
    return p


def _error(kind, exc, code, out):
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if getattr(exc, "residual", None) is not None:
        record["residual"] = exc.residual
    print(json.dumps(record), file=sys.stderr)
    if out is not None:
        try:
            _write_json(out / "error.json", record)
        except OSError:
            pass
    return code


def run(command, config_path=None, overrides=(), out=None, jobs=1, n_max=None):
    """Programmatic equivalent of the CLI; returns the exit code."""
    argv = [command]
    if config_path is not None:
        argv += ["--config", str(config_path)]
    if out is not None:
        argv += ["--out", str(out)]
    argv += ["--jobs", str(jobs)]
    for o in overrides:
        argv += ["--set", o]
    if n_max is not None:
        argv += ["--n-max", str(n_max)]
    return main(argv)


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = RunConfig.load(args.config, args.overrides)
        out = Path(args.out or cfg.data["output"]["dir"])
        code = HANDLERS[args.command](cfg, out, args)
    except (ConfigError, DomainError) as exc:
        return _error("validation", exc, EXIT_CONFIG, out)
    except SolverError as exc:
        return _error("numerical", exc, EXIT_NUMERIC, out)
    _write_json(out / "run_meta.json", {
        "command": args.command, "exit_code": code, "version": __version__,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    })
    return code


if __name__ == "__main__":
    sys.exit(main())

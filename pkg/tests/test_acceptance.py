"""Acceptance suite: one test and one PASS/FAIL line per criterion."""

import math
import time

import numpy as np
import pytest

from insulated_neck import AuxParams, NeckGeometry, blow_up_exponent, gamma_star
from insulated_neck.certificate import M_value, M_value_n3, ScanBoxes, scan_certificate
from insulated_neck.experiments import (GridPolicy, check_boundary_identity, check_envelope,
                                        check_q_maximum, default_eps_list, expected_slope,
                                        fit_exponent, run_sweep, solve_sweep)
from insulated_neck.solver import ReducedProblem, build_grid, solve_problem

pytestmark = pytest.mark.slow

EPS_SWEEP = default_eps_list(1e-4, 1e-2, 8)


@pytest.fixture(scope="module")
def sweep_n3():
    return solve_sweep(3, 1, NeckGeometry(eps=1e-2), EPS_SWEEP, GridPolicy())


def test_criterion_1_rate_table(report_line):
    table = [
        (3, math.sqrt(2) - 1, -(2 - math.sqrt(2)) / 2),
        (4, (math.sqrt(17) - 3) / 2, -(5 - math.sqrt(17)) / 4),
        (5, math.sqrt(7) - 2, -(3 - math.sqrt(7)) / 2),
        (6, (math.sqrt(41) - 5) / 2, -(7 - math.sqrt(41)) / 4),
    ]
    err = max(max(abs(gamma_star(n) - g), abs(blow_up_exponent(n) - e)) for n, g, e in table)
    ok = err <= 1e-12
    report_line(1, ok, f"max deviation from closed forms {err:.1e} (tol 1e-12)")
    assert ok


def test_criterion_2_certificate_numerics(report_line):
    t0 = time.perf_counter()
    g = gamma_star(3)
    m1, m2 = M_value(3, g, 0.02, 0.0), M_value(3, g, 0.2, 0.0)
    dual = max(abs(M_value_n3(g, p, 0.0) - M_value(3, g, p, 0.0)) for p in (0.02, 0.2))
    rep = scan_certificate(3, eta=0.0)
    dt = time.perf_counter() - t0
    crit = rep.phi_crit
    ok = (abs(m1 - 0.24485) <= 5e-4 and abs(m2 + 0.47157) <= 5e-4 and dual < 1e-12
          and len(crit) == 1 and 0.02 < crit[0] < 0.2 and dt < 1.0)
    report_line(2, ok, f"M(0.02)={m1:.6f} M(0.2)={m2:.6f} dual-path diff {dual:.1e} "
                       f"phi_crit={crit} runtime {dt:.2f}s")
    assert ok


def test_criterion_3_proof_chain_signs(report_line):
    t0 = time.perf_counter()
    parts = []
    for n in (3, 4, 5):
        boxes = ScanBoxes(R=0.5, r_count=200, phi_min=1e-6, phi_max=0.01, phi_count=100,
                          hess_r_count=50, hess_z_count=50)
        rep = scan_certificate(n, eta=1e-3, boxes=boxes, b=50.0, delta=0.01, eps=1e-4)
        for c in rep.checks:
            parts.append((n, c))
    dt = time.perf_counter() - t0
    ok = all(c.verdict == "holds" for _, c in parts) and dt < 5.0
    detail = "; ".join(f"n={n} {c.check_name} {c.verdict} ({c.n_violations}/{c.n_points} bad, "
                       f"worst {c.worst_value:+.3e} at {c.worst_point})" for n, c in parts)
    report_line(3, ok, f"{detail}; runtime {dt:.2f}s")
    assert ok


def _mms_mode1_errors(n, sizes):
    geom = NeckGeometry(eps=0.1, c3_top=0.2)
    prob = ReducedProblem(
        n, 1, geom, outer_data=lambda z: geom.R * (1 + z),
        flux_top=lambda r: r - geom.dprofile_top(r) * (1 + geom.z_top(r)),
        flux_bot=lambda r: r - geom.dprofile_bot(r) * (1 + geom.z_bot(r)))
    errs = []
    for N in sizes:
        grid = build_grid(geom, N, N, stretch=1.5)
        RR, ZZ = grid.mesh()
        errs.append(np.abs(solve_problem(prob, grid).values - RR * (1 + ZZ)).max())
    return np.array(errs)


def test_criterion_4_solver_correctness(report_line):
    t0 = time.perf_counter()
    errs = _mms_mode1_errors(3, [16, 32, 64, 128])
    orders = np.log2(errs[:-1] / errs[1:])

    geom = NeckGeometry(eps=1e-3, lambda1=0.6, c3_top=0.1, c3_bot=-0.2)
    const = solve_problem(ReducedProblem(3, 0, geom, outer_data=1.0), build_grid(geom, 256, 16))
    const_err = float(np.abs(const.values - 1.0).max())

    sym = NeckGeometry(eps=1e-4)
    fld = solve_problem(ReducedProblem(3, 1, sym), GridPolicy().grid(sym))
    asym = float(np.abs(fld.values - fld.values[:, ::-1]).max() / np.abs(fld.values).max())
    dt = time.perf_counter() - t0

    ok = bool(np.all(np.abs(orders - 2) <= 0.2)) and const_err <= 1e-10 and asym <= 1e-10 and dt < 30
    report_line(4, ok, f"MMS orders {np.round(orders, 3).tolist()}, constant-data error {const_err:.1e}, "
                       f"even-symmetry defect {asym:.1e}, runtime {dt:.1f}s")
    assert ok


@pytest.mark.parametrize("n", [3, 4, 5])
def test_criterion_5_blow_up_exponent(report_line, n):
    t0 = time.perf_counter()
    fit, samples = run_sweep(n, 1, NeckGeometry(eps=1e-2), EPS_SWEEP, GridPolicy())
    dt = time.perf_counter() - t0
    target = expected_slope(n, 1)
    drop = abs(fit.drop_smallest().slope - fit.slope)
    ok = (len(fit.window) == 8 and abs(fit.slope - target) <= 0.03 and fit.r_squared >= 0.995
          and drop < 0.01 and dt < 300)
    report_line(f"5 (n={n})", ok, f"slope {fit.slope:+.4f} vs {target:+.4f}, r^2 {fit.r_squared:.6f}, "
                                  f"drop-one change {drop:.4f}, runtime {dt:.1f}s")
    assert ok


def test_criterion_6_boundary_identity(report_line):
    geom = NeckGeometry(eps=0.01)
    fields = [solve_problem(ReducedProblem(3, 1, geom),
                            build_grid(geom, 64 * 2**l, 8 * 2**l, stretch=2.0)) for l in range(3)]
    gated = [check_boundary_identity(fields, s, f, 1.8) for s, f in
             (("transverse", "literal"), ("transverse", "exact"), ("in_plane", "exact"))]
    info = check_boundary_identity(fields, "in_plane", "literal", 1.8)
    ok = all(r.passed for r in gated)
    detail = "; ".join(f"{r.name} ratios {np.round(r.details['ratios'], 2).tolist()}" for r in gated)
    detail += (f"; [info] {info.name} residuals {np.round(info.details['residuals'], 4).tolist()} "
               "(constant offset where the normal derivative is nonzero)")
    report_line(6, ok, detail)
    assert ok


def test_criterion_7_q_maximum(report_line):
    geom_of = lambda eps: NeckGeometry(eps=eps)
    results = []
    for eps in (1e-3, 1e-4):
        g = geom_of(eps)
        fld = solve_problem(ReducedProblem(3, 1, g), GridPolicy().grid(g))
        aux = AuxParams.make(3, b=50.0, delta=0.01, eta=1e-3, eps=eps)
        results.append((eps, check_q_maximum(fld, aux, band=0.9), fld))
    control = check_q_maximum(results[0][2], aux=None)
    control_inner = control.location["r"] < 0.5 * results[0][2].grid.geom.R
    ok = all(r.passed for _, r, _ in results) and control_inner
    detail = "; ".join(f"eps={e:g}: argmax r={r.location['r']:.4f} "
                       f"(Q axis {r.details['Q_axis_max']:.4f}, Q outer {r.details['Q_outer_max']:.4f}) "
                       f"{'ok' if r.passed else 'below 0.9R'}" for e, r, _ in results)
    detail += f"; F=1 control argmax r={control.location['r']:.4f} {'inner' if control_inner else 'outer'}"
    report_line(7, ok, detail)
    assert ok


def test_criterion_8_envelope(report_line, sweep_n3):
    fields, samples = sweep_n3
    sharp = check_envelope(fields, gamma_star(3), ratio_max=1.5)
    flat = check_envelope(fields, 0.0, ratio_max=1.5)
    too_big = check_envelope(fields, gamma_star(3) + 0.2, ratio_max=1.5)
    ok = sharp.passed and not flat.passed
    report_line(8, ok, f"gamma*: max/min C {sharp.value:.4f} ({'pass' if sharp.passed else 'fail'}); "
                       f"gamma=0: {flat.value:.4f} ({'fails as required' if not flat.passed else 'does not fail'}); "
                       f"[info] gamma*+0.2: {too_big.value:.4f}")
    assert ok

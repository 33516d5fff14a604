"""Epsilon sweeps, exponent fits and solution-based diagnostics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .certificate import AuxParams, aux_F
from .errors import ConfigError, SolverError
from .solver import (ReducedProblem, build_grid, gradient_surrogate, mapped_derivatives,
                     mode_eigenvalue, solve_problem)


def mode_exponent(n, k):
    """Positive root of ``a**2 + (n-1) a - k(k+n-3) = 0``.

    In the thin part of the neck the k-th mode grows like ``r**a``; for
    ``k = 1`` this is ``gamma_star(n)``.
    """
    c = mode_eigenvalue(n, k)
    return 2.0 * c / ((n - 1) + math.sqrt((n - 1) ** 2 + 4 * c)) if c else 0.0


def expected_slope(n, k):
    """Predicted log-log slope of ``max G`` against eps for mode k."""
    return min(0.0, -(1.0 - mode_exponent(n, k)) / 2.0)


# ---------------------------------------------------------------- fitting


@dataclass
class RateFit:
    samples: list
    slope: float
    intercept: float
    r_squared: float
    window: list
    excluded: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def drop_smallest(self):
        """Refit without the smallest-eps sample of the window."""
        kept = [self.samples[i] for i in self.window]
        smallest = min(range(len(kept)), key=lambda i: kept[i][0])
        return fit_exponent([s for i, s in enumerate(kept) if i != smallest])


def fit_exponent(samples, valid=None):
    """Least-squares line through ``(log eps, log max_G)``.

    ``valid`` flags samples usable for the fit; the others are kept in
    ``samples`` but left out of ``window``.
    """
    samples = sorted(((float(e), float(y)) for e, y in samples), key=lambda s: -s[0])
    if valid is None:
        valid = [True] * len(samples)
    window = [i for i, ((e, y), ok) in enumerate(zip(samples, valid))
              if ok and e > 0 and y > 0 and np.isfinite(y)]
    if len(window) < 3:
        raise ConfigError(f"need at least 3 valid positive samples, got {len(window)}")
    x = np.log([samples[i][0] for i in window])
    y = np.log([samples[i][1] for i in window])
    X = np.column_stack([np.ones_like(x), x])
    (intercept, slope), *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ np.array([intercept, slope])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(res**2))
    # a flat line (up to rounding) is a perfect fit
    flat = ss_tot <= 1e-24 * max(1.0, float(np.sum(y**2)))
    r2 = 1.0 if flat else max(0.0, 1.0 - ss_res / ss_tot)
    excluded = [i for i in range(len(samples)) if i not in window]
    return RateFit(samples, float(slope), float(intercept), r2, window, excluded)


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class GridPolicy:
    """Grid per eps: first radial cell ``sqrt(eps) / axis_cells_per_sqrt_eps``."""

    Nr: int = 512
    Ns: int = 32
    axis_cells_per_sqrt_eps: float = 16.0
    stretch: float | None = None
    tol: float = 1e-10

    def __post_init__(self):
        if self.Nr < 4 or self.Ns < 2:
            raise ConfigError(f"grid too small: Nr={self.Nr}, Ns={self.Ns}")
        if self.axis_cells_per_sqrt_eps < 8:
            raise ConfigError("axis_cells_per_sqrt_eps must be >= 8 to resolve the neck")

    def grid(self, geom):
        return build_grid(geom, self.Nr, self.Ns, stretch=self.stretch,
                          axis_cell=math.sqrt(geom.eps) / self.axis_cells_per_sqrt_eps)


@dataclass
class SweepSample:
    eps: float
    max_G: float
    Nr: int
    Ns: int
    residual: float
    resolved: bool
    error: str | None = None


def _solve_one(args):
    n, k, geom, policy, outer_data = args
    try:
        grid = policy.grid(geom)
        fld = solve_problem(ReducedProblem(n, k, geom, outer_data=outer_data), grid, tol=policy.tol)
    except (SolverError, ConfigError) as exc:
        return None, SweepSample(geom.eps, float("nan"), policy.Nr, policy.Ns,
                                 getattr(exc, "residual", None) or float("nan"), False, str(exc))
    G = gradient_surrogate(fld).G
    inner = grid.r <= 0.5 * geom.R * (1 + 1e-12)
    # the first cell must resolve the sqrt(eps) neck scale
    resolved = bool(grid.r[1] <= math.sqrt(geom.eps) / 8 * (1 + 1e-12))
    return fld, SweepSample(geom.eps, float(G[inner].max()), grid.Nr, grid.Ns, fld.residual, resolved)


def solve_sweep(n, k, geom_template, eps_list, grid_policy=None, jobs=1, outer_data=None):
    """Solve the mode problem for every eps; returns ``(fields, samples)`` in input order.

    A failed solve yields ``None`` in ``fields`` and an unresolved sample.
    """
    policy = GridPolicy() if grid_policy is None else grid_policy
    tasks = [(n, k, replace(geom_template, eps=float(e)), policy, outer_data) for e in eps_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_solve_one, tasks))
    else:
        out = [_solve_one(t) for t in tasks]
    return [o[0] for o in out], [o[1] for o in out]


def run_sweep(n, k, geom_template, eps_list, grid_policy=None, jobs=1, outer_data=None):
    """Solve across eps and fit ``max G ~ eps**slope`` over ``Omega_{R/2}``.

    Returns ``(fit, samples)``; ``fit.samples`` is sorted by decreasing eps.
    """
    if len(eps_list) < 3:
        raise ConfigError("an eps sweep needs at least 3 values")
    _, samples = solve_sweep(n, k, geom_template, eps_list, grid_policy, jobs, outer_data)
    samples = sorted(samples, key=lambda s: -s.eps)
    fit = fit_exponent([(s.eps, s.max_G) for s in samples], valid=[s.resolved for s in samples])
    return fit, samples


def default_eps_list(eps_min=1e-4, eps_max=1e-2, count=8):
    return [float(e) for e in np.geomspace(eps_max, eps_min, count)]


# ---------------------------------------------------------------- diagnostics


@dataclass
class DiagnosticResult:
    name: str
    value: float
    passed: bool
    tolerance: float
    location: dict | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def boundary_identity_residuals(fld, r_max=None, floor=1e-8):
    """Relative residuals of ``d/dnu |grad u|**2`` identities on the upper wall.

    ``nu = (-x', 1)`` is the non-unit conormal of the normalized paraboloid.
    Two angle samples of a k = 1 mode have closed-form ``|grad u|**2``:

    * ``transverse`` (``Y = 0``): ``(v/r)**2``; here ``u_n = 0``
    * ``in_plane`` (``Y = 1``, x' along the mode axis): ``v_r**2 + v_z**2``

    For each sample two targets are compared with the differenced
    ``d/dnu |grad u|**2``: ``literal`` is ``2 |grad u|**2``; ``exact`` is
    ``2 |grad u|**2 - 2 u_n**2``, which is what the Neumann condition
    actually implies. They agree where ``u_n = 0``.
    """
    grid, geom = fld.grid, fld.grid.geom
    if not geom.is_paraboloid:
        raise ConfigError("boundary identity needs lambda1 = lambda2 = 1/2 and zero cubic terms")
    if fld.problem.k != 1:
        raise ConfigError("boundary identity diagnostic is defined for the k = 1 mode")
    r_max = 0.5 * geom.R if r_max is None else r_max
    gf = gradient_surrogate(fld)
    mask = (grid.r > 0) & (grid.r <= r_max * (1 + 1e-12))
    r = grid.r[mask]
    out = {}
    for name, X, un2 in (("transverse", gf.transverse_sq, np.zeros_like(gf.vz)),
                         ("in_plane", gf.in_plane_sq, gf.vz**2)):
        Xr, Xz = mapped_derivatives(X, grid)
        top = X[mask, -1]
        dnu = -r * Xr[mask, -1] + Xz[mask, -1]
        denom = top + floor * np.abs(top).max()
        for form, target in (("literal", 2 * top), ("exact", 2 * top - 2 * un2[mask, -1])):
            res = np.abs(dnu - target) / denom
            i = int(np.argmax(res))
            out[(name, form)] = (float(res[i]), float(r[i]))
    return out


def check_boundary_identity(fields, sample="transverse", form="literal", min_ratio=1.8, r_max=None):
    """Refinement study of the wall identity over a sequence of fields.

    ``fields`` go from coarse to fine with halved spacing; passes iff every
    successive residual ratio is at least ``min_ratio``.
    """
    if len(fields) < 2:
        raise ConfigError("need at least two refinement levels")
    res = [boundary_identity_residuals(f, r_max)[(sample, form)] for f in fields]
    vals = [v for v, _ in res]
    ratios = [a / b if b > 0 else float("inf") for a, b in zip(vals[:-1], vals[1:])]
    passed = all(q >= min_ratio for q in ratios) or all(v == 0.0 for v in vals)
    return DiagnosticResult(
        name=f"boundary_identity[{sample},{form}]", value=vals[-1], passed=bool(passed),
        tolerance=min_ratio, location={"r": res[-1][1]},
        details={"residuals": vals, "ratios": ratios,
                 "levels": [[f.grid.Nr, f.grid.Ns] for f in fields]})


def max_angle_grad_sq(fld):
    """``max over angles of |grad u|**2`` at each node (k = 0 or 1 only)."""
    gf = gradient_surrogate(fld)
    if fld.problem.k == 0:
        return gf.in_plane_sq
    if fld.problem.k == 1:
        # |grad u|^2 = (v_r^2 + v_z^2) Y^2 + (v/r)^2 (1 - Y^2) with Y = cos(angle)
        return np.maximum(gf.in_plane_sq, gf.transverse_sq)
    raise ConfigError("closed-form angular maximum is available for k = 0 and k = 1")


def check_q_maximum(fld, aux=None, band=0.9):
    """Locate the maximum of ``Q = F |grad u|**2`` over the neck grid.

    ``aux=None`` uses ``F = 1`` (the bare gradient control). Passes iff the
    argmax radius is at least ``band * R``.
    """
    grid = fld.grid
    RR, ZZ = grid.mesh()
    grad2 = max_angle_grad_sq(fld)
    if aux is None:
        F = np.ones_like(grad2)
        name = "q_maximum[F=1]"
    else:
        aux.require_compliant()
        if not math.isclose(aux.eps, grid.geom.eps, rel_tol=1e-12):
            aux = replace(aux, eps=grid.geom.eps)
        F = aux_F(aux, RR, ZZ)
        name = "q_maximum"
    Q = F * grad2
    i, j = np.unravel_index(int(np.argmax(Q)), Q.shape)
    r_at = float(RR[i, j])
    R = grid.geom.R
    return DiagnosticResult(
        name=name, value=float(Q[i, j]), passed=bool(r_at >= band * R), tolerance=band,
        location={"r": r_at, "z": float(ZZ[i, j]), "i": int(i), "j": int(j)},
        details={"R": R, "eps": grid.geom.eps, "Q_axis_max": float(Q[0].max()),
                 "Q_outer_max": float(Q[-1].max())})


def envelope_constant(fld, gamma):
    """``max_{r <= R/2} max_z G(r, z) * (eps + r**2)**((1 - gamma)/2)``."""
    grid = fld.grid
    geom = grid.geom
    G = gradient_surrogate(fld).G
    mask = grid.r <= 0.5 * geom.R * (1 + 1e-12)
    weighted = G[mask].max(axis=1) * (geom.eps + grid.r[mask] ** 2) ** ((1 - gamma) / 2)
    i = int(np.argmax(weighted))
    return float(weighted[i]), float(grid.r[mask][i])


def check_envelope(fields, gamma, ratio_max=1.5):
    """Stability of the envelope constant across an eps sweep."""
    fields = [f for f in fields if f is not None]
    if not fields:
        raise ConfigError("no solved fields")
    consts = [envelope_constant(f, gamma) for f in fields]
    C = [c for c, _ in consts]
    if min(C) <= 0:
        ratio = 0.0 if max(C) == 0 else float("inf")
    else:
        ratio = max(C) / min(C)
    return DiagnosticResult(
        name="envelope", value=float(ratio), passed=bool(ratio <= ratio_max), tolerance=ratio_max,
        location=None,
        details={"gamma": gamma, "eps": [f.grid.geom.eps for f in fields], "C": C,
                 "r_at_max": [r for _, r in consts]})

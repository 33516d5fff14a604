"""Closed-form quantities of the maximum-principle argument and region scans.

Everything here is evaluated with ``r = |x'|`` and ``z = x_n`` under the
normalization ``lambda1 = lambda2 = 1/2`` (upper surface
``z = eps/2 + r**2/2``). The auxiliary weight is

    F = (r**2 + b*eps)**(1 - gamma) - (b*eps)**(1 - gamma)
        + eps**(1 - gamma*(1 - delta)) - A * (r**2 + b*eps)**(-gamma) * z**2

and the scanned quantities are the boundary expression ``dF/dnu + 2F``, the
interior bracket ``M(phi, gamma)`` and the Hessian coefficient.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .errors import ConfigError, DomainError


def gamma_star(n):
    """Positive root of ``gamma**2 + (n-1)*gamma - (n-2) = 0``."""
    if int(n) != n or n < 3:
        raise DomainError(f"dimension must be an integer >= 3, got {n}")
    n = int(n)
    # rationalized form avoids cancellation for large n
    return 2.0 * (n - 2) / ((n - 1) + math.sqrt((n - 1) ** 2 + 4 * (n - 2)))


def blow_up_exponent(n):
    """Predicted exponent beta in ``max |grad u| ~ eps**beta``."""
    return -(1.0 - gamma_star(n)) / 2.0


def rho(n, gamma):
    return -(gamma**2 + (n - 1) * gamma - (n - 2))


def default_xi0(n, eta):
    return 1.0 - n / (4.0 * (n - 1)) + eta


@dataclass(frozen=True)
class AuxParams:
    """Parameter pack of the auxiliary function F.

    ``xi0`` defaults to ``1 - n/(4(n-1)) + eta``; the mixing weight itself is
    ``xi = xi0 / (1 + eta)``.
    """

    n: int
    gamma: float
    A: float
    b: float = 50.0
    delta: float = 0.01
    eps: float = 1e-4
    eta: float = 1e-3
    xi0: float | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ConfigError(f"n must be an integer >= 3, got {self.n}")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not self.b > 0:
            raise ConfigError("b must be positive")
        if not 0 <= self.delta < 1:
            raise ConfigError(f"delta must lie in [0, 1), got {self.delta}")
        if self.A < 0:
            raise ConfigError("A must be non-negative")
        if self.eta < 0:
            raise ConfigError("eta must be non-negative")
        if self.xi0 is None:
            object.__setattr__(self, "xi0", default_xi0(self.n, self.eta))

    @classmethod
    def make(cls, n, gamma=None, **kw):
        """Defaults: ``gamma = gamma_star(n)``, ``A = 2.05 * gamma``."""
        if gamma is None:
            gamma = gamma_star(n)
        kw.setdefault("A", 2.05 * gamma)
        return cls(n=n, gamma=gamma, **kw)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown aux keys: {sorted(unknown)}")
        d = dict(d)
        n = int(d.pop("n"))
        gamma = d.pop("gamma", None)
        return cls.make(n, gamma, **d)

    def to_dict(self):
        return asdict(self)

    @property
    def xi(self):
        return self.xi0 / (1.0 + self.eta)

    @property
    def compliant(self):
        """Whether ``2 gamma < A < 2.1 gamma`` and ``gamma <= gamma_star(n)``."""
        g = self.gamma
        return 2 * g < self.A < 2.1 * g and g <= gamma_star(self.n) + 1e-15

    def require_compliant(self):
        if not self.compliant:
            raise ConfigError(
                f"aux parameters need 2*gamma < A < 2.1*gamma and gamma <= gamma_star(n); "
                f"got n={self.n}, gamma={self.gamma}, A={self.A}")


def _P(p, r):
    return r**2 + p.b * p.eps


def aux_F(p, r, z):
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    g = p.gamma
    P = _P(p, r)
    return (P ** (1 - g) - (p.b * p.eps) ** (1 - g) + p.eps ** (1 - g * (1 - p.delta))
            - p.A * P ** (-g) * z**2)


def grad_F(p, r, z):
    """Return ``(dF/dr, dF/dz)``."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    g = p.gamma
    P = _P(p, r)
    dr = 2 * (1 - g) * P ** (-g) * r + 2 * p.A * g * P ** (-g - 1) * r * z**2
    dz = -2 * p.A * P ** (-g) * z
    return dr, dz


def laplacian_F(p, r, z, n=None):
    """Exact n-dimensional Laplacian of F, all five terms."""
    n = p.n if n is None else n
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    g, A = p.gamma, p.A
    P = _P(p, r)
    return (2 * (n - 1) * (1 - g) * P ** (-g)
            - 4 * g * (1 - g) * P ** (-g - 1) * r**2
            + 2 * A * (n - 1) * g * P ** (-g - 1) * z**2
            - 4 * A * g * (1 + g) * P ** (-g - 2) * z**2 * r**2
            - 2 * A * P ** (-g))


def _require_normalized(geom):
    if geom is not None and not (geom.lambda1 == 0.5 and geom.lambda2 == 0.5):
        raise DomainError("certificate formulas assume lambda1 = lambda2 = 1/2")


def boundary_expr(p, r, geom=None):
    """``dF/dnu + 2F`` on the upper surface, with ``nu = (-x', 1)``.

    Expanded term by term; `grad_F` and `aux_F` give an independent route.
    """
    _require_normalized(geom)
    r = np.asarray(r, dtype=float)
    g, A = p.gamma, p.A
    P = _P(p, r)
    x = 0.5 * p.eps + 0.5 * r**2
    return (-2 * (1 - g) * P ** (-g) * r**2
            - 2 * A * g * P ** (-g - 1) * r**2 * x**2
            - 2 * A * P ** (-g) * x
            + 2 * P ** (1 - g)
            - 2 * (p.b * p.eps) ** (1 - g)
            + 2 * p.eps ** (1 - g * (1 - p.delta))
            - 2 * A * P ** (-g) * x**2)


def M_value(n, gamma, phi, eta=0.0):
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0) or np.any(phi > 1):
        raise DomainError("phi must lie in (0, 1]")
    pg = phi**gamma
    return (((6 * n + 4 - 4 / (n - 1)) * pg - 4 * n * phi - 2 * n - 2) * gamma
            + (2 * (n - 1) + 4 * (n - 2) * phi + (8 - 6 * n) * pg)
            - gamma / 5 - eta)


def M_value_n3(gamma, phi, eta=0.0):
    """Hand-specialized n = 3 form, kept as a second route for `M_value`."""
    phi = np.asarray(phi, dtype=float)
    pg = phi**gamma
    return 4 * (1 + phi + 5 * pg * gamma - 2 * gamma - 2.5 * pg - 3 * phi * gamma) - gamma / 5 - eta


def hessian_coeff(p, r, z):
    """``2F - 8F(n-1)/n (1-xi) - (4/eta) F_z**2``."""
    if p.eta <= 0:
        raise DomainError("hessian coefficient needs eta > 0")
    F = aux_F(p, r, z)
    _, Fz = grad_F(p, r, z)
    n = p.n
    return 2 * F - 8 * F * (n - 1) / n * (1 - p.xi) - 4 / p.eta * Fz**2


# ---------------------------------------------------------------- scanning


@dataclass(frozen=True)
class ScanBoxes:
    """Grids for `scan_certificate`.

    The radial grids are ``R * (1..count)/count``; the Hessian grid puts
    ``z_count`` points across the full gap at each radius, walls included.
    """

    R: float = 0.5
    r_count: int = 200
    phi_min: float = 1e-4
    phi_max: float = 0.01
    phi_count: int = 100
    phi_values: tuple | None = None
    hess_r_count: int = 50
    hess_z_count: int = 50
    crit_phi_min: float = 1e-6
    crit_phi_max: float = 1.0
    crit_phi_count: int = 200

    def __post_init__(self):
        counts = (self.r_count, self.phi_count, self.hess_r_count, self.hess_z_count, self.crit_phi_count)
        if min(counts) < 1 or (self.phi_values is not None and len(self.phi_values) == 0):
            raise ConfigError("empty scan box")
        if not 0 < self.R < 1:
            raise ConfigError("R must lie in (0, 1)")
        if not 0 < self.phi_min <= self.phi_max <= 1:
            raise ConfigError("need 0 < phi_min <= phi_max <= 1")
        if not 0 < self.crit_phi_min < self.crit_phi_max <= 1:
            raise ConfigError("need 0 < crit_phi_min < crit_phi_max <= 1")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scan keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("phi_values") is not None:
            d["phi_values"] = tuple(float(x) for x in d["phi_values"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        if d["phi_values"] is not None:
            d["phi_values"] = list(d["phi_values"])
        return d

    def r_grid(self):
        return self.R * np.arange(1, self.r_count + 1) / self.r_count

    def phi_grid(self):
        if self.phi_values is not None:
            return np.asarray(self.phi_values, dtype=float)
        if self.phi_count == 1:
            return np.array([self.phi_max])
        return np.geomspace(self.phi_min, self.phi_max, self.phi_count)


@dataclass
class CheckRecord:
    check_name: str
    parameter_box: dict
    verdict: str  # holds / fails / mixed
    expected_sign: int
    worst_point: dict
    worst_value: float
    n_points: int
    n_violations: int

    def to_dict(self):
        return asdict(self)


@dataclass
class CertificateReport:
    n: int
    gamma: float
    eta: float
    params: dict
    checks: list = field(default_factory=list)
    phi_crit: list = field(default_factory=list)
    hessian_condition_violations: int = 0
    rows: list = field(default_factory=list, repr=False)

    def check(self, name):
        for c in self.checks:
            if c.check_name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {
            "n": self.n,
            "gamma": self.gamma,
            "eta": self.eta,
            "params": self.params,
            "checks": [c.to_dict() for c in self.checks],
            "phi_crit": self.phi_crit,
            "hessian_condition_violations": self.hessian_condition_violations,
        }


def _record(name, box, values, expected_sign, coords):
    """Summarize a sign check; ``coords`` maps coordinate names to arrays shaped like values."""
    values = np.asarray(values, dtype=float)
    ok = values * expected_sign > 0
    if ok.all():
        verdict = "holds"
    elif not ok.any():
        verdict = "fails"
    else:
        verdict = "mixed"
    # worst point: the value closest to (or furthest past) the wrong sign
    idx = int(np.argmin(values * expected_sign))
    worst = {k: float(np.ravel(v)[idx]) for k, v in coords.items()}
    return CheckRecord(name, box, verdict, expected_sign, worst, float(np.ravel(values)[idx]),
                       int(values.size), int((~ok).sum()))


def find_sign_changes(f, lo, hi, count, xtol=1e-6):
    """Roots of ``f`` on ``[lo, hi]``: log-grid bracketing, then bisection."""
    grid = np.geomspace(lo, hi, count)
    vals = np.asarray(f(grid), dtype=float)
    roots = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa == 0.0:
            roots.append(float(a))
        elif fa * fb < 0:
            roots.append(float(optimize.bisect(lambda t: float(f(t)), a, b, xtol=xtol)))
    if vals[-1] == 0.0:
        roots.append(float(grid[-1]))
    return roots


def scan_certificate(n, gamma=None, eta=1e-3, boxes=None, **params):
    """Evaluate every sign claim over the scan boxes.

    ``params`` override the remaining `AuxParams` fields (A, b, delta, eps,
    xi0). The M scan uses ``eta`` as its slack; the Hessian scan needs
    ``eta > 0`` and is skipped otherwise.
    """
    boxes = ScanBoxes() if boxes is None else boxes
    p = AuxParams.make(n, gamma, eta=eta, **params)
    report = CertificateReport(n=p.n, gamma=p.gamma, eta=p.eta, params=p.to_dict())

    r = boxes.r_grid()
    bvals = boundary_expr(p, r)
    report.checks.append(_record("boundary_expr", {"r": [float(r[0]), float(r[-1]), r.size]},
                                 bvals, -1, {"r": r}))
    report.rows += [("boundary_expr", float(ri), "", "", float(v)) for ri, v in zip(r, bvals)]

    phi = boxes.phi_grid()
    mvals = M_value(p.n, p.gamma, phi, p.eta)
    report.checks.append(_record("M_value", {"phi": [float(phi.min()), float(phi.max()), phi.size]},
                                 mvals, +1, {"phi": phi}))
    report.rows += [("M_value", "", "", float(f), float(v)) for f, v in zip(phi, mvals)]

    if p.eta > 0:
        hr = boxes.R * np.arange(1, boxes.hess_r_count + 1) / boxes.hess_r_count
        t = np.linspace(-1.0, 1.0, boxes.hess_z_count)
        RR, TT = np.meshgrid(hr, t, indexing="ij")
        ZZ = TT * (0.5 * p.eps + 0.5 * RR**2)
        hvals = hessian_coeff(p, RR, ZZ)
        report.checks.append(_record("hessian_coeff",
                                     {"r": [float(hr[0]), float(hr[-1]), hr.size],
                                      "z": "full gap", "z_count": t.size},
                                     hvals, +1, {"r": RR, "z": ZZ}))
        report.rows += [("hessian_coeff", float(a), float(b), "", float(v))
                        for a, b, v in zip(RR.ravel(), ZZ.ravel(), hvals.ravel())]
        # with the default xi0 the coefficient is 2F*eta/(1+eta) - (4/eta)*Fz**2
        F = aux_F(p, RR, ZZ)
        _, Fz = grad_F(p, RR, ZZ)
        dominated = 4 / p.eta * Fz**2 < 2 * F * p.eta / (1 + p.eta)
        report.hessian_condition_violations = int((dominated & (hvals <= 0)).sum())

    report.phi_crit = find_sign_changes(lambda f: M_value(p.n, p.gamma, f, p.eta),
                                        boxes.crit_phi_min, boxes.crit_phi_max,
                                        boxes.crit_phi_count)
    return report

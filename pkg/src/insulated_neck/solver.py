"""Mode-reduced insulated problem on a boundary-fitted neck grid.

Writing ``u = v(r, z) * Y_k(omega)`` with ``Y_k`` a spherical harmonic of
degree k on the (n-2)-sphere turns the n-dimensional Laplacian into

    L v = v_rr + (n-2)/r v_r - k(k+n-3)/r**2 v + v_zz.

The neck ``z_bot(r) < z < z_top(r)``, ``0 <= r <= R`` is mapped to the unit
square by ``z = (1-s) z_bot(r) + s z_top(r)`` and ``r = r(xi)``, where

    r(xi) = R sinh(beta xi) / sinh(beta)

clusters nodes at the axis (``beta = 0`` is uniform). Everything is
differenced in the uniform ``(xi, s)`` coordinates with the chain rule, so
the scheme stays second order on the stretched grid.

Boundary conditions:

* ``r = R``: Dirichlet, ``v = outer_data(z)``
* ``s = 0, 1``: conormal Neumann ``v_z - h'(r) v_r = flux`` (flux 0 for the
  physical problem), one-sided in ``s``
* ``r = 0``: ``v = 0`` for ``k >= 1``; reflection symmetry for ``k = 0``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import linalg as spla

from .errors import ConfigError, SolverError
from .geometry import NeckGeometry

MAX_CELL_RATIO = 1.1


def mode_eigenvalue(n, k):
    """Eigenvalue ``k(k+n-3)`` of ``-Delta`` on the (n-2)-sphere."""
    return k * (k + n - 3)


@dataclass
class ReducedProblem:
    n: int
    k: int
    geom: NeckGeometry
    outer_data: object = None  # callable z -> v(R, z), a number, or None for v = R
    source: object = None      # callable (r, z) -> f
    flux_top: object = None    # callable r -> v_z - h1' v_r on the upper surface
    flux_bot: object = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ConfigError(f"n must be an integer >= 3, got {self.n}")
        if int(self.k) != self.k or self.k < 0:
            raise ConfigError(f"mode index k must be a non-negative integer, got {self.k}")
        self.n = int(self.n)
        self.k = int(self.k)

    @property
    def c(self):
        return mode_eigenvalue(self.n, self.k)

    def outer_values(self, z):
        z = np.asarray(z, dtype=float)
        if self.outer_data is None:
            return np.full_like(z, self.geom.R)
        if callable(self.outer_data):
            return np.broadcast_to(np.asarray(self.outer_data(z), dtype=float), z.shape).copy()
        return np.full_like(z, float(self.outer_data))


def _mapping(xi, R, beta):
    """Return r, dr/dxi, d2r/dxi2 for the sinh stretching."""
    if beta < 1e-8:
        return R * xi, np.full_like(xi, R), np.zeros_like(xi)
    sb = np.sinh(beta)
    return (R * np.sinh(beta * xi) / sb,
            R * beta * np.cosh(beta * xi) / sb,
            R * beta**2 * np.sinh(beta * xi) / sb)


def _stretch_for_first_cell(R, Nr, h0):
    """Smallest beta with first cell ``r(1/Nr) <= h0``."""
    if R / Nr <= h0:
        return 0.0
    f = lambda b: R * np.sinh(b / Nr) / np.sinh(b) - h0
    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e4:
            raise ConfigError("cannot reach the requested axis cell size")
    return optimize.brentq(f, 1e-8, hi, xtol=1e-14)


@dataclass
class Grid:
    geom: NeckGeometry
    Nr: int
    Ns: int
    beta: float
    xi: np.ndarray
    r: np.ndarray
    dr: np.ndarray
    d2r: np.ndarray
    s: np.ndarray

    @property
    def dxi(self):
        return 1.0 / self.Nr

    @property
    def ds(self):
        return 1.0 / self.Ns

    @property
    def shape(self):
        return (self.Nr + 1, self.Ns + 1)

    @property
    def r_nodes(self):
        return self.r

    @property
    def s_nodes(self):
        return self.s

    def z(self, r, s):
        """Mapped height ``(1-s) z_bot(r) + s z_top(r)``."""
        return (1 - s) * self.geom.z_bot(r) + s * self.geom.z_top(r)

    def mesh(self):
        """Nodal ``(r, z)`` arrays of shape ``(Nr+1, Ns+1)``."""
        RR, SS = np.meshgrid(self.r, self.s, indexing="ij")
        return RR, self.z(RR, SS)

    def cell_ratio(self):
        h = np.diff(self.r)
        return float(np.max(np.maximum(h[1:] / h[:-1], h[:-1] / h[1:])))

    def metrics(self):
        """Per-node coefficients of the (r, z) -> (r, s) chain rule."""
        g = self.geom
        RR, SS = np.meshgrid(self.r, self.s, indexing="ij")
        zt1, zb1 = g.dprofile_top(RR), g.dprofile_bot(RR)
        zt2, zb2 = g.d2profile_top(RR), g.d2profile_bot(RR)
        gap = g.gap(RR)
        gp, gpp = zt1 - zb1, zt2 - zb2
        s_r = -(zb1 + SS * gp) / gap
        s_rr = -(zb2 + SS * gpp + 2 * s_r * gp) / gap
        return dict(r=RR, s=SS, gap=gap, s_r=s_r, s_rr=s_rr, zt1=zt1, zb1=zb1)


def build_grid(geom, Nr, Ns, stretch=None, axis_cell=None):
    """Boundary-fitted grid with ``Nr`` radial and ``Ns`` cross-gap cells.

    Unless ``stretch`` fixes the sinh parameter, it is chosen so the first
    radial cell is at most ``axis_cell`` (default ``sqrt(eps)/8``).
    """
    if Nr < 4 or Ns < 2:
        raise ConfigError(f"grid too small: Nr={Nr}, Ns={Ns}")
    if stretch is None:
        h0 = np.sqrt(geom.eps) / 8 if axis_cell is None else axis_cell
        stretch = _stretch_for_first_cell(geom.R, Nr, h0)
    xi = np.linspace(0.0, 1.0, Nr + 1)
    r, dr, d2r = _mapping(xi, geom.R, float(stretch))
    r[-1] = geom.R
    grid = Grid(geom, int(Nr), int(Ns), float(stretch), xi, r, dr, d2r, np.linspace(0.0, 1.0, Ns + 1))
    if grid.cell_ratio() > MAX_CELL_RATIO:
        raise ConfigError(f"radial cell ratio {grid.cell_ratio():.3f} exceeds {MAX_CELL_RATIO}; raise Nr")
    return grid


@dataclass
class SparseSystem:
    A: sparse.csr_matrix
    rhs: np.ndarray
    shape: tuple
    problem: ReducedProblem
    grid: Grid

    def index(self, i, j):
        return i * self.shape[1] + j

    def unravel(self, vec):
        return np.asarray(vec).reshape(self.shape)


class _Builder:
    def __init__(self, shape):
        self.shape = shape
        self.rows, self.cols, self.vals = [], [], []

    def add(self, I, J, di, dj, coef):
        """Add ``coef * w[I+di, J+dj]`` to rows of nodes ``(I, J)`` (arrays)."""
        m = self.shape[1]
        self.rows.append((I * m + J).ravel())
        self.cols.append(((I + di) * m + (J + dj)).ravel())
        self.vals.append(np.broadcast_to(coef, I.shape).astype(float).ravel())

    def matrix(self):
        N = self.shape[0] * self.shape[1]
        return sparse.coo_matrix((np.concatenate(self.vals),
                                  (np.concatenate(self.rows), np.concatenate(self.cols))),
                                 shape=(N, N)).tocsr()


def assemble(prob, grid):
    """Finite-difference system for ``L v = f`` with the neck boundary conditions."""
    if grid.geom is not prob.geom and grid.geom != prob.geom:
        raise ConfigError("grid and problem use different geometries")
    if np.any(np.diff(grid.r) <= 0):
        raise ConfigError("degenerate grid: radial nodes not strictly increasing")
    n, c = prob.n, prob.c
    Nr, Ns = grid.Nr, grid.Ns
    dx, ds = grid.dxi, grid.ds
    m = grid.metrics()
    rp = np.broadcast_to(grid.dr[:, None], grid.shape)
    rpp = np.broadcast_to(grid.d2r[:, None], grid.shape)
    RR, ZZ = grid.mesh()
    b = _Builder(grid.shape)
    rhs = np.zeros(grid.shape)
    f = prob.source

    # interior nodes 0 < i < Nr, 0 < j < Ns
    I, J = np.meshgrid(np.arange(1, Nr), np.arange(1, Ns), indexing="ij")
    r, g = RR[I, J], m["gap"][I, J]
    s_r, s_rr = m["s_r"][I, J], m["s_rr"][I, J]
    p1, p2 = rp[I, J], rpp[I, J]
    c_xx = 1 / p1**2
    c_x = -p2 / p1**3 + (n - 2) / (r * p1)
    c_xs = 2 * s_r / p1
    c_ss = s_r**2 + 1 / g**2
    c_s = s_rr + (n - 2) / r * s_r
    c_0 = -c / r**2
    b.add(I, J, 0, 0, -2 * c_xx / dx**2 - 2 * c_ss / ds**2 + c_0)
    b.add(I, J, 1, 0, c_xx / dx**2 + c_x / (2 * dx))
    b.add(I, J, -1, 0, c_xx / dx**2 - c_x / (2 * dx))
    b.add(I, J, 0, 1, c_ss / ds**2 + c_s / (2 * ds))
    b.add(I, J, 0, -1, c_ss / ds**2 - c_s / (2 * ds))
    q = c_xs / (4 * dx * ds)
    b.add(I, J, 1, 1, q)
    b.add(I, J, -1, -1, q)
    b.add(I, J, 1, -1, -q)
    b.add(I, J, -1, 1, -q)
    if f is not None:
        rhs[I, J] = f(r, ZZ[I, J])

    # conormal Neumann rows on the curved walls, 0 < i < Nr
    I = np.arange(1, Nr)
    for j, sgn, slope, flux in ((Ns, -1, m["zt1"], prob.flux_top), (0, 1, m["zb1"], prob.flux_bot)):
        J = np.full_like(I, j)
        h1 = slope[I, j]
        a = (1 + h1**2) / m["gap"][I, j]
        # sgn = -1: backward difference from the top, +1: forward from the bottom
        b.add(I, J, 0, 0, a * (-sgn) * 3 / (2 * ds))
        b.add(I, J, 0, sgn, a * sgn * 4 / (2 * ds))
        b.add(I, J, 0, 2 * sgn, a * (-sgn) / (2 * ds))
        b.add(I, J, 1, 0, -h1 / (2 * dx * rp[I, j]))
        b.add(I, J, -1, 0, h1 / (2 * dx * rp[I, j]))
        if flux is not None:
            rhs[I, j] = flux(RR[I, j])

    # outer Dirichlet column
    J = np.arange(Ns + 1)
    I = np.full_like(J, Nr)
    b.add(I, J, 0, 0, 1.0)
    rhs[Nr, :] = prob.outer_values(ZZ[Nr, :])

    # axis
    if prob.k >= 1:
        I = np.zeros_like(J)
        b.add(I, J, 0, 0, 1.0)
        rhs[0, :] = 0.0
    else:
        # L -> (n-1)(w_rr + s_rr w_s) + w_ss / gap**2 with w_xi(0) = 0 by reflection
        J = np.arange(1, Ns)
        I = np.zeros_like(J)
        g, s_rr = m["gap"][0, J], m["s_rr"][0, J]
        c_xx = (n - 1) / rp[0, J] ** 2
        c_ss = 1 / g**2
        c_s = (n - 1) * s_rr
        b.add(I, J, 0, 0, -2 * c_xx / dx**2 - 2 * c_ss / ds**2)
        b.add(I, J, 1, 0, 2 * c_xx / dx**2)
        b.add(I, J, 0, 1, c_ss / ds**2 + c_s / (2 * ds))
        b.add(I, J, 0, -1, c_ss / ds**2 - c_s / (2 * ds))
        if f is not None:
            rhs[0, J] = f(np.zeros(J.shape), ZZ[0, J])
        for j, sgn, flux in ((Ns, -1, prob.flux_top), (0, 1, prob.flux_bot)):
            I0, J0 = np.array([0]), np.array([j])
            a = 1 / m["gap"][0, j]
            b.add(I0, J0, 0, 0, a * (-sgn) * 3 / (2 * ds))
            b.add(I0, J0, 0, sgn, a * sgn * 4 / (2 * ds))
            b.add(I0, J0, 0, 2 * sgn, a * (-sgn) / (2 * ds))
            rhs[0, j] = 0.0 if flux is None else float(flux(np.array(0.0)))

    # row equilibration: Dirichlet, Neumann and interior rows differ by ~1/eps**2
    A = b.matrix()
    scale = 1.0 / abs(A).max(axis=1).toarray().ravel()
    A = sparse.diags(scale) @ A
    return SparseSystem(A.tocsr(), scale * rhs.ravel(), grid.shape, prob, grid)


@dataclass
class Field:
    values: np.ndarray
    problem: ReducedProblem
    grid: Grid
    residual: float = 0.0
    meta: dict = field(default_factory=dict)

    def mesh(self):
        return self.grid.mesh()


def solve(system, tol=1e-10):
    """Direct sparse LU solve; raises `SolverError` if the residual exceeds ``tol``."""
    A, rhs = system.A, system.rhs
    try:
        lu = spla.splu(A.tocsc())
        x = lu.solve(rhs)
        x += lu.solve(rhs - A @ x)  # one step of iterative refinement
    except RuntimeError as exc:  # singular factor
        raise SolverError(f"sparse LU failed: {exc}", residual=float("inf")) from exc
    res = A @ x - rhs
    scale = np.linalg.norm(rhs)
    rel = float(np.linalg.norm(res) / scale) if scale > 0 else float(np.linalg.norm(res))
    if not np.all(np.isfinite(x)) or rel > tol:
        raise SolverError(f"relative residual {rel:.3e} above tolerance {tol:.1e}", residual=rel)
    return Field(system.unravel(x), system.problem, system.grid, residual=rel)


def solve_problem(prob, grid, tol=1e-10):
    return solve(assemble(prob, grid), tol)


@dataclass
class GradientField:
    vr: np.ndarray
    vz: np.ndarray
    angular: np.ndarray  # v / r, with its axis limit
    G: np.ndarray

    @property
    def in_plane_sq(self):
        """``|grad u|**2`` where ``Y = 1`` with zero angular gradient: ``v_r**2 + v_z**2``."""
        return self.vr**2 + self.vz**2

    @property
    def transverse_sq(self):
        """``|grad u|**2`` for k = 1 at angles where ``Y = 0``: ``(v/r)**2``."""
        return self.angular**2


def mapped_derivatives(values, grid):
    """``(v_r, v_z)`` of a nodal array via the mapped-coordinate chain rule."""
    w_x, w_s = np.gradient(values, grid.dxi, grid.ds, edge_order=2)
    m = grid.metrics()
    vr = w_x / grid.dr[:, None] + m["s_r"] * w_s
    vz = w_s / m["gap"]
    return vr, vz


def gradient_surrogate(fld, prob=None, grid=None):
    """``G = sqrt(v_r**2 + v_z**2 + k(k+n-3) v**2 / r**2)`` at every node.

    ``G**2`` is the spherical average of ``|grad u|**2`` (for unit-mean
    ``Y_k**2``).
    """
    if fld is None or fld.values is None:
        raise SolverError("field has not been solved")
    prob = fld.problem if prob is None else prob
    grid = fld.grid if grid is None else grid
    v = fld.values
    vr, vz = mapped_derivatives(v, grid)
    ang = np.zeros_like(v)
    ang[1:] = v[1:] / grid.r[1:, None]
    if prob.k == 1:
        ang[0] = vr[0]
    G = np.sqrt(vr**2 + vz**2 + prob.c * ang**2)
    return GradientField(vr, vz, ang, G)

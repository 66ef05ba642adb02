"""Backward-Euler solver for u_t = Lu on the square, plus extraction of the inverse-problem data.

``Lu = Lap u + b1 u_x1 + b2 u_x2 - c u`` with Dirichlet data g0 on the lateral
boundary and initial data at t = -T.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    GridError,
    ScalarField,
    SpaceTimeGrid,
    _linear_weights,
    lateral_trace,
    perimeter_indices,
)

log = logging.getLogger(__name__)


class ForwardError(RuntimeError):
    def __init__(self, message: str, level: int | None = None, index=None):
        super().__init__(message)
        self.level = level
        self.index = index


@dataclass(frozen=True, eq=False)
class ParabolicProblem:
    """Coefficients and data sampled on the spatial nodes of the forward grid.

    ``g0`` is a lateral trace of shape (n_perimeter, nt).  When ``mu`` is set the
    positivity hypotheses f_init >= mu, g0 >= mu are checked and the solver
    rejects nonpositive solutions.
    """

    c: np.ndarray
    f_init: np.ndarray
    g0: np.ndarray
    b1: np.ndarray | None = None
    b2: np.ndarray | None = None
    mu: float | None = None

    def check(self, grid: SpaceTimeGrid) -> None:
        shape = grid.space_shape
        for name in ("c", "f_init", "b1", "b2"):
            a = getattr(self, name)
            if a is not None and np.shape(a) != shape:
                raise GridError(f"{name} has shape {np.shape(a)}, expected {shape}")
        nper = perimeter_indices(grid.nx)[0].size
        if np.shape(self.g0) != (nper, grid.nt):
            raise GridError(f"g0 has shape {np.shape(self.g0)}, expected {(nper, grid.nt)}")
        mismatch = np.max(np.abs(self.g0[:, 0] - lateral_trace(self.f_init)))
        if mismatch > 1e-12:
            raise ForwardError(f"g0(x,-T) differs from f_init on the boundary by {mismatch:.3g}")
        if self.mu is not None:
            if np.min(self.f_init) < self.mu or np.min(self.g0) < self.mu:
                raise ForwardError(f"initial or boundary data fall below mu={self.mu}")


def constant_boundary(grid: SpaceTimeGrid, value: float = 1.0) -> np.ndarray:
    nper = perimeter_indices(grid.nx)[0].size
    return np.full((nper, grid.nt), float(value))


def boundary_from_function(grid: SpaceTimeGrid, g) -> np.ndarray:
    """Sample ``g(x1, x2, t)`` on the lateral boundary nodes at every time level."""
    ii, jj = perimeter_indices(grid.nx)
    x = grid.x
    return np.asarray(g(x[ii][:, None], x[jj][:, None], grid.t[None, :]), dtype=float) \
        * np.ones((ii.size, grid.nt))


def system_matrix(grid: SpaceTimeGrid, c, b1=None, b2=None) -> sp.csr_matrix:
    """I - ht L_h on interior rows, identity rows on the boundary."""
    nx, h, ht = grid.nx, grid.hx, grid.ht
    n = nx * nx
    idx = np.arange(n).reshape(nx, nx)
    interior = np.zeros((nx, nx), dtype=bool)
    interior[1:-1, 1:-1] = True
    b1 = np.zeros((nx, nx)) if b1 is None else np.asarray(b1, float)
    b2 = np.zeros((nx, nx)) if b2 is None else np.asarray(b2, float)
    c = np.asarray(c, float)

    I, J = np.nonzero(interior)
    centre = idx[I, J]
    rows = [centre]
    cols = [centre]
    vals = [1.0 + ht * (4.0 / h**2 + c[I, J])]
    for di, dj, drift in ((1, 0, b1), (-1, 0, -b1), (0, 1, b2), (0, -1, -b2)):
        rows.append(centre)
        cols.append(idx[I + di, J + dj])
        vals.append(-ht * (1.0 / h**2 + drift[I, J] / (2 * h)))
    bnd = idx[~interior]
    rows.append(bnd)
    cols.append(bnd)
    vals.append(np.ones(bnd.size))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def solve_forward(p: ParabolicProblem, grid: SpaceTimeGrid) -> ScalarField:
    p.check(grid)
    nx, nt = grid.nx, grid.nt
    mat = system_matrix(grid, p.c, p.b1, p.b2).tocsc()
    try:
        lu = spla.splu(mat)
    except RuntimeError as exc:
        raise ForwardError(f"factorisation of the time-step matrix failed: {exc}", level=1) from exc
    ii, jj = perimeter_indices(nx)
    bflat = ii * nx + jj
    u = np.empty((nx, nx, nt))
    u[:, :, 0] = p.f_init
    prev = np.asarray(p.f_init, float).ravel().copy()
    for k in range(1, nt):
        rhs = prev.copy()
        rhs[bflat] = p.g0[:, k]
        nxt = lu.solve(rhs)
        if not np.all(np.isfinite(nxt)):
            raise ForwardError("linear solve produced non-finite values", level=k)
        if p.mu is not None and np.min(nxt) <= 0:
            at = int(np.argmin(nxt))
            raise ForwardError(
                f"solution became nonpositive at time level {k}", level=k,
                index=(at // nx, at % nx, k),
            )
        u[:, :, k] = nxt.reshape(nx, nx)
        prev = nxt
    return ScalarField(grid, u)


def extract_g1(u: ScalarField) -> np.ndarray:
    """u_x1 on the face x1 = B, shape (nx, nt) indexed by (x2 node, time level)."""
    v = u.values
    h = u.grid.hx
    return (0.5 * v[-3] - 2.0 * v[-2] + 1.5 * v[-1]) / h


def extract_f0(u: ScalarField, t0: float) -> ScalarField:
    g = u.grid
    if not -g.T - 1e-12 <= t0 <= g.T + 1e-12:
        raise GridError(f"t0={t0} outside [-{g.T}, {g.T}]")
    w = _linear_weights(g.t, np.array([float(t0)]))
    sl = (u.values.reshape(-1, g.nt) @ w.T.toarray()).reshape(g.space_shape)
    return ScalarField(g, sl)


@dataclass
class MaxPrincipleReport:
    min_value: float
    passed: bool
    index: tuple[int, int, int]
    tol: float = 1e-10

    def line(self) -> str:
        status = "pass" if self.passed else "fail"
        return f"MAXPRINCIPLE {status} min={self.min_value:.17g} node={self.index}"


def check_maximum_principle(u: ScalarField, mu: float, tol: float = 1e-10) -> MaxPrincipleReport:
    v = u.values
    at = tuple(int(i) for i in np.unravel_index(np.argmin(v), v.shape))
    m = float(v[at])
    return MaxPrincipleReport(m, m >= mu - tol, at, tol)


# ---------------------------------------------------------------------------
# measurements


@dataclass(frozen=True, eq=False)
class MeasurementData:
    """g1 on a (x2, t) detector grid and f0 on an nf-by-nf spatial detector grid.

    ``grid`` fixes the extents and the g1 layout (nx detectors along x2, nt in
    time); ``f0`` may be denser, shape (nf, nf) with nodes A + i (B - A)/(nf - 1).
    """

    grid: SpaceTimeGrid
    t0: float
    g1: np.ndarray
    f0: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.g1.shape != (self.grid.nx, self.grid.nt):
            raise GridError(f"g1 has shape {self.g1.shape}, expected {(self.grid.nx, self.grid.nt)}")
        if self.f0.ndim != 2 or self.f0.shape[0] != self.f0.shape[1] or self.f0.shape[0] < 3:
            raise GridError(f"f0 must be square with >= 3 nodes per side, got {self.f0.shape}")

    @property
    def nf(self) -> int:
        return self.f0.shape[0]

    def f0_grid(self) -> SpaceTimeGrid:
        return SpaceTimeGrid(self.grid.A, self.grid.B, self.grid.T, self.nf, self.grid.nt)

    def replace(self, **kw) -> "MeasurementData":
        args = dict(grid=self.grid, t0=self.t0, g1=self.g1, f0=self.f0, meta=dict(self.meta))
        args.update(kw)
        return MeasurementData(**args)


def measure(u: ScalarField, t0: float, n_x2: int, n_t: int, nf: int) -> MeasurementData:
    """Sample g1 on an (n_x2, n_t) detector grid and f0 on an (nf, nf) grid."""
    g = u.grid
    det = SpaceTimeGrid(g.A, g.B, g.T, n_x2, n_t)
    g1_fine = extract_g1(u)
    wx = _linear_weights(g.x, det.x)
    wt = _linear_weights(g.t, det.t)
    g1 = (wx @ (wt @ g1_fine.T).T)
    f0_fine = extract_f0(u, t0).values
    fgrid = SpaceTimeGrid(g.A, g.B, g.T, nf, n_t)
    wf = _linear_weights(g.x, fgrid.x)
    f0 = wf @ f0_fine @ wf.T
    return MeasurementData(det, float(t0), np.asarray(g1), np.asarray(f0))

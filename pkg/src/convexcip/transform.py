"""Logarithmic change of variables and the coefficient-free operator K.

With ``v = ln u`` and ``w = v_t`` the coefficient c drops out of the
t-differentiated equation, leaving

    K(w) = w_t - Lap w - sum_j b_j w_xj - 2 grad w . int_{t0}^t grad w - 2 grad w . grad f0~

where ``v(x, t) = int_{t0}^t w + f0~(x)`` and ``f0~ = ln f0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import (
    GridError,
    ScalarField,
    SpaceTimeGrid,
    d1_matrix,
    d2_matrix,
    diff_array,
    perimeter_indices,
)


class PositivityError(ValueError):
    """A quantity that must be positive (u, g0, f0) is not."""

    def __init__(self, message: str, index: tuple[int, ...] | None = None):
        super().__init__(message)
        self.index = index


def _check_positive(values: np.ndarray, name: str) -> None:
    if np.all(values > 0):
        return
    idx = tuple(int(i) for i in np.unravel_index(np.argmin(values), values.shape))
    raise PositivityError(
        f"{name} must be positive; found {values[idx]:.6g} at node {idx}", idx
    )


def log_field(u: ScalarField) -> ScalarField:
    _check_positive(u.values, "u")
    return u.with_values(np.log(u.values))


def time_derivative_w(v: ScalarField) -> ScalarField:
    if v.rank != "st":
        raise GridError("time_derivative_w expects a space-time field")
    return v.with_values(diff_array(v.values, v.grid, "t", 1))


# ---------------------------------------------------------------------------
# Volterra integration in time


@lru_cache(maxsize=32)
def volterra_matrix(nt: int, ht: float, T: float, t0: float) -> np.ndarray:
    """Dense (nt, nt) matrix C with (C f)_k = int_{t0}^{t_k} f dt.

    The integrand is the piecewise-linear interpolant of the nodal values, so
    the rule is the cumulative trapezoid when t0 is a node.  Off-node t0 is
    handled by integrating the linear piece up to t0 exactly.
    """
    if not -T - 1e-12 <= t0 <= T + 1e-12:
        raise GridError(f"t0={t0} outside the time window [-{T}, {T}]")
    cum = np.zeros((nt, nt))
    for k in range(1, nt):
        cum[k] = cum[k - 1]
        cum[k, k - 1] += 0.5 * ht
        cum[k, k] += 0.5 * ht
    s = (t0 + T) / ht
    j = min(max(int(np.floor(s + 1e-9)), 0), nt - 1)
    theta = s - j
    if abs(theta) < 1e-9 or j == nt - 1:
        base = cum[j].copy()
    else:
        base = cum[j].copy()
        base[j] += ht * (theta - 0.5 * theta**2)
        base[j + 1] += ht * 0.5 * theta**2
    mat = cum - base[None, :]
    mat.setflags(write=False)
    return mat


def cumulative_integral(values: np.ndarray, grid: SpaceTimeGrid, t0: float) -> np.ndarray:
    """int_{t0}^{t} of a space-time array, node by node."""
    c = volterra_matrix(grid.nt, grid.ht, grid.T, float(t0))
    return values @ c.T


def volterra_reconstruct(w: ScalarField, f0_tilde: ScalarField, t0: float) -> ScalarField:
    if w.rank != "st" or f0_tilde.rank != "s":
        raise GridError("volterra_reconstruct expects space-time w and space-only f0_tilde")
    v = cumulative_integral(w.values, w.grid, t0) + f0_tilde.values[:, :, None]
    return w.with_values(v)


# ---------------------------------------------------------------------------
# Cauchy data


@dataclass(frozen=True, eq=False)
class CauchyData:
    """Data entering K and the boundary penalty, all on the inversion grid.

    p0 is a lateral trace (n_perimeter, nt); p1 is a Gamma trace (nx, nt).
    """

    grid: SpaceTimeGrid
    t0: float
    p0: np.ndarray
    p1: np.ndarray
    f0_tilde: np.ndarray
    grad_f0_tilde: tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        nper = perimeter_indices(self.grid.nx)[0].size
        if self.p0.shape != (nper, self.grid.nt):
            raise GridError(f"p0 has shape {self.p0.shape}, expected {(nper, self.grid.nt)}")
        if self.p1.shape != (self.grid.nx, self.grid.nt):
            raise GridError(f"p1 has shape {self.p1.shape}")
        for name, a in (("p0", self.p0), ("p1", self.p1), ("f0_tilde", self.f0_tilde)):
            if not np.all(np.isfinite(a)):
                raise GridError(f"{name} contains non-finite values")

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid, t0: float = 0.0) -> "CauchyData":
        nper = perimeter_indices(grid.nx)[0].size
        z = np.zeros(grid.space_shape)
        return cls(grid, t0, np.zeros((nper, grid.nt)), np.zeros((grid.nx, grid.nt)), z, (z, z))

    @classmethod
    def from_f0_tilde(cls, grid, t0, p0, p1, f0_tilde) -> "CauchyData":
        grad = (diff_array(f0_tilde, grid, "x1", 1), diff_array(f0_tilde, grid, "x2", 1))
        return cls(grid, float(t0), np.asarray(p0, float), np.asarray(p1, float),
                   np.asarray(f0_tilde, float), grad)


def derive_cauchy(
    grid: SpaceTimeGrid,
    g0: np.ndarray,
    g1: np.ndarray,
    f0: np.ndarray,
    t0: float,
    g1_time_derivative: np.ndarray | None = None,
) -> CauchyData:
    """p0 = g0_t / g0 on S_T, p1 = d/dt (g1 / g0) on Gamma, f0~ = ln f0.

    ``g0`` is a lateral trace (n_perimeter, nt) and ``g1`` a Gamma trace (nx, nt).
    ``g1_time_derivative`` may supply d/dt(g1/g0) computed elsewhere (e.g. from
    splines of smoothed data); otherwise the grid stencil is used.
    """
    g0 = np.asarray(g0, dtype=float)
    g1 = np.asarray(g1, dtype=float)
    f0 = np.asarray(f0, dtype=float)
    _check_positive(g0, "g0")
    _check_positive(f0, "f0")
    dt = d1_matrix(grid.nt, grid.ht)
    p0 = (dt @ g0.T).T / g0
    # g0 restricted to the Gamma face x1 = B
    ii, jj = perimeter_indices(grid.nx)
    face = ii == grid.nx - 1
    g0_gamma = np.empty((grid.nx, grid.nt))
    g0_gamma[jj[face]] = g0[face]
    if g1_time_derivative is None:
        p1 = (dt @ (g1 / g0_gamma).T).T
    else:
        p1 = np.asarray(g1_time_derivative, dtype=float)
    return CauchyData.from_f0_tilde(grid, t0, p0, p1, np.log(f0))


# ---------------------------------------------------------------------------
# the operator K on flat vectors


class DiscreteK:
    """K(w), its linearisation and the adjoint of that linearisation on flat vectors.

    All three share the same stencils and the same Volterra matrix, so the
    functional gradient built from ``vjp`` is the exact transpose of ``jvp``.
    """

    def __init__(self, data: CauchyData, b1: np.ndarray | None = None,
                 b2: np.ndarray | None = None, t0: float | None = None):
        g = data.grid
        self.grid = g
        self.t0 = data.t0 if t0 is None else float(t0)
        nx, nt = g.nx, g.nt
        ops = _flat_operators(g)
        self.dx, self.dy, self.dt, self.lap = ops
        c = volterra_matrix(nt, g.ht, g.T, self.t0)
        self.vol = sp.kron(sp.identity(nx * nx, format="csr"), sp.csr_matrix(c), format="csr")

        def spread(a):
            if a is None:
                return np.zeros(nx * nx * nt)
            a = np.asarray(a, dtype=float)
            if a.shape != (nx, nx):
                raise GridError(f"coefficient of shape {a.shape}, expected {(nx, nx)}")
            return np.repeat(a.ravel(), nt)

        self.b1, self.b2 = spread(b1), spread(b2)
        self.fx, self.fy = spread(data.grad_f0_tilde[0]), spread(data.grad_f0_tilde[1])
        self.linear0 = (self.dt - self.lap
                        - sp.diags(self.b1 + 2 * self.fx) @ self.dx
                        - sp.diags(self.b2 + 2 * self.fy) @ self.dy).tocsr()

    def evaluate(self, w: np.ndarray):
        """Return K(w) and the intermediates needed by jvp / vjp."""
        gx, gy = self.dx @ w, self.dy @ w
        ix, iy = self.vol @ gx, self.vol @ gy
        k = self.linear0 @ w - 2.0 * (gx * ix + gy * iy)
        return k, (gx, gy, ix, iy)

    def __call__(self, w: np.ndarray) -> np.ndarray:
        return self.evaluate(w)[0]

    def jvp(self, cache, h: np.ndarray) -> np.ndarray:
        gx, gy, ix, iy = cache
        hx, hy = self.dx @ h, self.dy @ h
        return (self.linear0 @ h
                - 2.0 * (hx * ix + gx * (self.vol @ hx))
                - 2.0 * (hy * iy + gy * (self.vol @ hy)))

    def vjp(self, cache, r: np.ndarray) -> np.ndarray:
        gx, gy, ix, iy = cache
        out = self.linear0.T @ r
        out -= 2.0 * (self.dx.T @ (ix * r + self.vol.T @ (gx * r)))
        out -= 2.0 * (self.dy.T @ (iy * r + self.vol.T @ (gy * r)))
        return out


@lru_cache(maxsize=16)
def _flat_operators(g: SpaceTimeGrid):
    nx, nt = g.nx, g.nt
    ix = sp.identity(nx, format="csr")
    it = sp.identity(nt, format="csr")
    d1 = d1_matrix(nx, g.hx)
    d2 = d2_matrix(nx, g.hx)
    dx = sp.kron(sp.kron(d1, ix), it, format="csr")
    dy = sp.kron(sp.kron(ix, d1), it, format="csr")
    dt = sp.kron(sp.kron(ix, ix), d1_matrix(nt, g.ht), format="csr")
    lap = (sp.kron(sp.kron(d2, ix), it) + sp.kron(sp.kron(ix, d2), it)).tocsr()
    return dx, dy, dt, lap


def apply_K(w: ScalarField, cauchy: CauchyData, b1: ScalarField | np.ndarray | None = None,
            b2: ScalarField | np.ndarray | None = None, t0: float | None = None) -> ScalarField:
    if w.rank != "st" or w.grid != cauchy.grid:
        raise GridError("w must be a space-time field on the Cauchy data grid")
    b1 = b1.values if isinstance(b1, ScalarField) else b1
    b2 = b2.values if isinstance(b2, ScalarField) else b2
    op = DiscreteK(cauchy, b1, b2, t0)
    return w.with_values(op(w.values.ravel()).reshape(w.grid.shape))

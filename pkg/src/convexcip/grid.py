"""Uniform space-time grids, finite-difference stencils and discrete Sobolev norms.

Fields live on the cylinder ``(A, B)^2 x (-T, T)``.  Space-time arrays are
indexed ``[i, j, k]`` with ``i`` along x1, ``j`` along x2 and ``k`` along t;
flattening is C order, so the flat index is ``(i * nx + j) * nt + k``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

AXES = ("x1", "x2", "t")


class GridError(ValueError):
    """Raised for invalid grid parameters or mismatched fields."""


@dataclass(frozen=True)
class SpaceTimeGrid:
    A: float
    B: float
    T: float
    nx: int
    nt: int

    def __post_init__(self):
        if not (self.B > self.A > 0):
            raise GridError(f"need B > A > 0, got A={self.A}, B={self.B}")
        if not self.T > 0:
            raise GridError(f"need T > 0, got T={self.T}")
        if self.nx < 3 or self.nt < 3:
            raise GridError(f"need nx, nt >= 3, got nx={self.nx}, nt={self.nt}")

    @property
    def hx(self) -> float:
        return (self.B - self.A) / (self.nx - 1)

    @property
    def ht(self) -> float:
        return 2.0 * self.T / (self.nt - 1)

    @property
    def x(self) -> np.ndarray:
        return self.A + np.arange(self.nx) * self.hx

    @property
    def t(self) -> np.ndarray:
        return -self.T + np.arange(self.nt) * self.ht

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.nx, self.nt)

    @property
    def space_shape(self) -> tuple[int, int]:
        return (self.nx, self.nx)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable (x1, x2, t) coordinate arrays of shape (nx,1,1), (1,nx,1), (1,1,nt)."""
        x = self.x
        return x[:, None, None], x[None, :, None], self.t[None, None, :]

    def space_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.x
        return x[:, None], x[None, :]

    def spacing(self, axis: str) -> float:
        return self.ht if axis == "t" else self.hx

    def size(self, axis: str) -> int:
        return self.nt if axis == "t" else self.nx

    def time_index(self, t0: float, tol: float = 1e-9) -> int | None:
        """Index of the time level equal to ``t0`` (within ``tol * ht``), else None."""
        s = (t0 + self.T) / self.ht
        k = int(round(s))
        if abs(s - k) <= tol and 0 <= k < self.nt:
            return k
        return None

    def same_extent(self, other: "SpaceTimeGrid") -> bool:
        return (
            np.isclose(self.A, other.A)
            and np.isclose(self.B, other.B)
            and np.isclose(self.T, other.T)
        )


def build_grid(A: float, B: float, T: float, nx: int, nt: int) -> SpaceTimeGrid:
    return SpaceTimeGrid(float(A), float(B), float(T), int(nx), int(nt))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values on a grid; rank 'st' (nx, nx, nt) or 's' (nx, nx)."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape not in (self.grid.shape, self.grid.space_shape):
            raise GridError(
                f"values of shape {values.shape} do not fit grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise GridError("field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def rank(self) -> str:
        return "st" if self.values.ndim == 3 else "s"

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)


# ---------------------------------------------------------------------------
# 1D stencils


@lru_cache(maxsize=64)
def d1_matrix(n: int, h: float) -> sp.csr_matrix:
    """First derivative: central inside, second-order one-sided at both ends."""
    if n < 3:
        raise GridError("first-derivative stencil needs at least 3 nodes")
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5, 0.5]
    rows += [0, 0, 0, n - 1, n - 1, n - 1]
    cols += [0, 1, 2, n - 3, n - 2, n - 1]
    vals += [-1.5, 2.0, -0.5, 0.5, -2.0, 1.5]
    m = sp.csr_matrix((np.array(vals) / h, (rows, cols)), shape=(n, n))
    return m


@lru_cache(maxsize=64)
def d2_matrix(n: int, h: float) -> sp.csr_matrix:
    """Second derivative: 3-point inside, 4-point one-sided at the ends (3-point if n == 3)."""
    if n < 3:
        raise GridError("second-derivative stencil needs at least 3 nodes")
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [1.0, -2.0, 1.0]
    if n >= 4:
        rows += [0] * 4 + [n - 1] * 4
        cols += [0, 1, 2, 3, n - 1, n - 2, n - 3, n - 4]
        vals += [2.0, -5.0, 4.0, -1.0] * 2
    else:
        rows += [0] * 3 + [2] * 3
        cols += [0, 1, 2, 0, 1, 2]
        vals += [1.0, -2.0, 1.0] * 2
    return sp.csr_matrix((np.array(vals) / h**2, (rows, cols)), shape=(n, n))


def derivative_matrix(n: int, h: float, order: int) -> sp.csr_matrix:
    """Per-axis derivative of order 0..3; order 3 is D1 composed with D2."""
    if order == 0:
        return sp.identity(n, format="csr")
    if order == 1:
        return d1_matrix(n, h)
    if order == 2:
        return d2_matrix(n, h)
    if order == 3:
        return (d1_matrix(n, h) @ d2_matrix(n, h)).tocsr()
    raise GridError(f"unsupported derivative order {order}")


@lru_cache(maxsize=64)
def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    w.setflags(write=False)
    return w


def quadrature_weights(grid: SpaceTimeGrid, space_only: bool = False) -> np.ndarray:
    """Tensor trapezoid weights, shaped like the field."""
    wx = trapezoid_weights(grid.nx, grid.hx)
    if space_only:
        return wx[:, None] * wx[None, :]
    wt = trapezoid_weights(grid.nt, grid.ht)
    return wx[:, None, None] * wx[None, :, None] * wt[None, None, :]


# ---------------------------------------------------------------------------
# nodal operators


def _apply_along(matrix: sp.spmatrix, values: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, 0)
    out = matrix @ moved.reshape(moved.shape[0], -1)
    return np.moveaxis(out.reshape((matrix.shape[0],) + moved.shape[1:]), 0, axis)


def diff_array(values: np.ndarray, grid: SpaceTimeGrid, axis: str, order: int) -> np.ndarray:
    """Derivative of a raw nodal array (space-time or space-only) along ``axis``."""
    if axis not in AXES:
        raise GridError(f"unknown axis {axis!r}")
    if axis == "t" and values.ndim != 3:
        raise GridError("time derivative of a space-only array")
    if order not in (1, 2, 3):
        raise GridError(f"unsupported derivative order {order}")
    n, h = grid.size(axis), grid.spacing(axis)
    return _apply_along(derivative_matrix(n, h, order), values, AXES.index(axis))


def diff(f: ScalarField, axis: str, order: int) -> ScalarField:
    if f.rank != "st":
        raise GridError("diff expects a space-time field")
    if order not in (1, 2):
        raise GridError("diff supports order 1 or 2")
    return f.with_values(diff_array(f.values, f.grid, axis, order))


def multi_indices(k: int, dims: int = 3) -> list[tuple[int, ...]]:
    """All multi-indices of total order <= k, in lexicographic order."""
    return [a for a in itertools.product(range(k + 1), repeat=dims) if sum(a) <= k]


def _mixed_derivative(values: np.ndarray, grid: SpaceTimeGrid, alpha: tuple[int, ...]) -> np.ndarray:
    out = values
    for axis, order in zip(AXES, alpha):
        if order:
            if order == 3:
                out = diff_array(diff_array(out, grid, axis, 2), grid, axis, 1)
            else:
                out = diff_array(out, grid, axis, order)
    return out


def sobolev_norm_sq(f: ScalarField, k: int) -> float:
    """Discrete H^k norm squared: trapezoid sum of all mixed derivatives of order <= k."""
    if f.rank != "st":
        raise GridError("sobolev_norm_sq expects a space-time field")
    if k not in (0, 1, 2, 3):
        raise GridError(f"unsupported Sobolev index {k}")
    q = quadrature_weights(f.grid)
    total = 0.0
    for alpha in multi_indices(k):
        d = _mixed_derivative(f.values, f.grid, alpha)
        total += float(np.sum(q * d * d))
    return total


@lru_cache(maxsize=16)
def sobolev_gram(grid: SpaceTimeGrid, k: int) -> sp.csr_matrix:
    """Sparse Gram matrix G with  w @ G @ w == sobolev_norm_sq(w, k)  on flat vectors."""
    nx, nt = grid.nx, grid.nt
    wx = sp.diags(trapezoid_weights(nx, grid.hx))
    wt = sp.diags(trapezoid_weights(nt, grid.ht))

    def block(n, h, w, order):
        m = derivative_matrix(n, h, order)
        return (m.T @ w @ m).tocsr()

    gx = [block(nx, grid.hx, wx, o) for o in range(k + 1)]
    gt = [block(nt, grid.ht, wt, o) for o in range(k + 1)]
    gram = None
    for a, b, c in multi_indices(k):
        term = sp.kron(sp.kron(gx[a], gx[b]), gt[c], format="csr")
        gram = term if gram is None else gram + term
    return gram.tocsr()


def h21_norm_sq(f: ScalarField, gamma: float) -> float:
    """H^{2,1} norm squared over the truncated cylinder |t| <= gamma*T.

    Includes the value, all spatial derivatives up to order two and the first
    time derivative.  Derivatives use the full-window stencils; quadrature is
    restricted to the time levels inside the truncated window.
    """
    if not 0 < gamma <= 1:
        raise GridError(f"gamma must lie in (0, 1], got {gamma}")
    if f.rank != "st":
        raise GridError("h21_norm_sq expects a space-time field")
    g = f.grid
    keep = np.abs(g.t) <= gamma * g.T + 1e-9 * g.ht
    idx = np.flatnonzero(keep)
    if idx.size < 2:
        return 0.0
    wt = np.zeros(g.nt)
    wt[idx] = g.ht
    wt[idx[0]] = wt[idx[-1]] = 0.5 * g.ht
    wx = trapezoid_weights(g.nx, g.hx)
    q = wx[:, None, None] * wx[None, :, None] * wt[None, None, :]
    alphas = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (2, 0, 0), (1, 1, 0), (0, 2, 0), (0, 0, 1)]
    total = 0.0
    for alpha in alphas:
        d = _mixed_derivative(f.values, g, alpha)
        total += float(np.sum(q * d * d))
    return total


# ---------------------------------------------------------------------------
# interpolation


def _linear_weights(src: np.ndarray, dst: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix mapping samples on ``src`` nodes to linear interpolants at ``dst``."""
    n = src.size
    h = (src[-1] - src[0]) / (n - 1)
    s = (dst - src[0]) / h
    lo = np.clip(np.floor(s + 1e-12).astype(int), 0, n - 2)
    theta = s - lo
    # nodes that coincide with a source node are copied exactly
    snap = np.abs(theta) <= 1e-12
    snap_hi = np.abs(theta - 1.0) <= 1e-12
    theta = np.where(snap, 0.0, np.where(snap_hi, 1.0, theta))
    rows = np.repeat(np.arange(dst.size), 2)
    cols = np.stack([lo, lo + 1], axis=1).ravel()
    vals = np.stack([1.0 - theta, theta], axis=1).ravel()
    m = sp.csr_matrix((vals, (rows, cols)), shape=(dst.size, n))
    m.eliminate_zeros()
    return m


def interpolate_array(values: np.ndarray, src: SpaceTimeGrid, dst: SpaceTimeGrid) -> np.ndarray:
    """Tensor-product linear interpolation of a raw array between grids of equal extent."""
    if not src.same_extent(dst):
        raise GridError("interpolation grids must cover the same extents")
    out = values
    mx = _linear_weights(src.x, dst.x)
    out = _apply_along(mx, out, 0)
    out = _apply_along(mx, out, 1)
    if values.ndim == 3:
        out = _apply_along(_linear_weights(src.t, dst.t), out, 2)
    return out


def interpolate_to(f: ScalarField, target: SpaceTimeGrid) -> ScalarField:
    if target == f.grid:
        return f
    return ScalarField(target, interpolate_array(f.values, f.grid, target))


# ---------------------------------------------------------------------------
# boundary traces
#
# A lateral trace (on S_T) is an array of shape (n_perimeter, nt) ordered as
# perimeter_indices(nx); a Gamma trace (on the face x1 = B) has shape (nx, nt)
# indexed by the x2 node.


@lru_cache(maxsize=32)
def perimeter_indices(nx: int) -> tuple[np.ndarray, np.ndarray]:
    """(i, j) indices of the boundary nodes of the nx-by-nx square, each listed once."""
    mask = np.zeros((nx, nx), dtype=bool)
    mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
    ii, jj = np.nonzero(mask)
    ii.setflags(write=False)
    jj.setflags(write=False)
    return ii, jj


def perimeter_weights(nx: int, hx: float) -> np.ndarray:
    """Line-integral trapezoid weights on the boundary of the square.

    Each face contributes its own 1D trapezoid weights, so corners collect
    half a cell from each of the two faces that meet there.
    """
    w1 = trapezoid_weights(nx, hx)
    face = np.zeros((nx, nx))
    face[0, :] += w1
    face[-1, :] += w1
    face[:, 0] += w1
    face[:, -1] += w1
    ii, jj = perimeter_indices(nx)
    return face[ii, jj]


def lateral_trace(values: np.ndarray) -> np.ndarray:
    """Restrict a space-time array (or space-only array) to the lateral boundary."""
    ii, jj = perimeter_indices(values.shape[0])
    return values[ii, jj]

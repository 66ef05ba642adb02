"""Carleman-weighted functional J_{lambda,beta}, its gradient, and numerical checks of the estimates.

Every weighted quadrature uses the normalised weight exp(2 lambda (x1^2 - t^2 - B^2)) <= 1,
which absorbs the e^{-2 lambda B^2} prefactor of the functional and cannot overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import (
    GridError,
    ScalarField,
    SpaceTimeGrid,
    d1_matrix,
    diff_array,
    perimeter_indices,
    perimeter_weights,
    quadrature_weights,
    sobolev_gram,
    trapezoid_weights,
)
from .transform import CauchyData, DiscreteK, cumulative_integral


@dataclass(frozen=True)
class FunctionalParams:
    lam: float = 1.0
    beta: float = 0.01
    k: int = 3
    t0: float = 0.0
    boundary_penalty: float = 1e3
    R: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.k not in (2, 3):
            raise ValueError(f"Sobolev index must be 2 or 3, got {self.k}")
        if self.boundary_penalty < 0:
            raise ValueError("boundary_penalty must be >= 0")
        if self.R is not None and self.R <= 0:
            raise ValueError("R must be positive")


def cwf(lam: float, x, t, B: float | None = None):
    """Carleman weight exp(2 lam (x^2 - t^2)); with ``B`` given, divided by its maximum e^{2 lam B^2}."""
    shift = 0.0 if B is None else B * B
    return np.exp(2.0 * lam * (np.asarray(x) ** 2 - np.asarray(t) ** 2 - shift))


def weight_field(grid: SpaceTimeGrid, lam: float) -> np.ndarray:
    """Trapezoid weights times the normalised CWF, shaped (nx, nx, nt)."""
    x1, _, t = grid.mesh()
    return quadrature_weights(grid) * cwf(lam, x1, t, grid.B)


class WeightedFunctional:
    """J(w) = sum q phi K(w)^2 + beta |w|_{H^k}^2 + penalty * (trace misfit)^2 on flat nodal vectors.

    The trace misfit compares w with p0 on the lateral boundary and the
    one-sided x1-derivative of w with p1 on the face x1 = B, both integrated
    with surface trapezoid weights.
    """

    def __init__(self, data: CauchyData, params: FunctionalParams, b1=None, b2=None):
        g = data.grid
        self.grid = g
        self.data = data
        self.params = params
        self.K = DiscreteK(data, b1, b2, params.t0)
        self.weights = weight_field(g, params.lam).ravel()
        self.gram = sobolev_gram(g, params.k)
        nx, nt = g.nx, g.nt
        wt = trapezoid_weights(nt, g.ht)

        ii, jj = perimeter_indices(nx)
        node = (ii * nx + jj)[:, None] * nt + np.arange(nt)[None, :]
        self.lateral_index = node.ravel()
        self.lateral_weight = (perimeter_weights(nx, g.hx)[:, None] * wt[None, :]).ravel()
        self.p0 = data.p0.ravel()

        # x1-derivative restricted to the Gamma face: rows (j, k) -> one-sided stencil
        d1 = d1_matrix(nx, g.hx)
        last = d1[nx - 1].toarray().ravel()
        cols_i = np.nonzero(last)[0]
        j, k = np.meshgrid(np.arange(nx), np.arange(nt), indexing="ij")
        rows = np.repeat(np.arange(nx * nt), cols_i.size)
        cols = ((cols_i[None, :] * nx + j.ravel()[:, None]) * nt + k.ravel()[:, None]).ravel()
        vals = np.tile(last[cols_i], nx * nt)
        self.gamma_dx = sp.csr_matrix((vals, (rows, cols)), shape=(nx * nt, nx * nx * nt))
        self.gamma_weight = (trapezoid_weights(nx, g.hx)[:, None] * wt[None, :]).ravel()
        self.p1 = data.p1.ravel()

    @property
    def size(self) -> int:
        return self.grid.nx * self.grid.nx * self.grid.nt

    def terms(self, w: np.ndarray) -> dict[str, float]:
        kw = self.K(w)
        pen = self.params.boundary_penalty
        r0 = w[self.lateral_index] - self.p0
        r1 = self.gamma_dx @ w - self.p1
        return {
            "residual": float(np.dot(self.weights, kw * kw)),
            "regularization": self.params.beta * float(np.dot(w, self.gram @ w)),
            "penalty": pen * (float(np.dot(self.lateral_weight, r0 * r0))
                              + float(np.dot(self.gamma_weight, r1 * r1))),
        }

    def value(self, w: np.ndarray) -> float:
        t = self.terms(w)
        return t["residual"] + t["regularization"] + t["penalty"]

    def value_and_gradient(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        p = self.params
        kw, cache = self.K.evaluate(w)
        wk = self.weights * kw
        gw = self.gram @ w
        r0 = w[self.lateral_index] - self.p0
        r1 = self.gamma_dx @ w - self.p1
        lw0 = self.lateral_weight * r0
        gw1 = self.gamma_weight * r1
        value = (float(np.dot(wk, kw)) + p.beta * float(np.dot(w, gw))
                 + p.boundary_penalty * (float(np.dot(lw0, r0)) + float(np.dot(gw1, r1))))
        grad = 2.0 * self.K.vjp(cache, wk) + 2.0 * p.beta * gw
        if p.boundary_penalty:
            pen_grad = np.zeros_like(w)
            np.add.at(pen_grad, self.lateral_index, lw0)
            pen_grad += self.gamma_dx.T @ gw1
            grad += 2.0 * p.boundary_penalty * pen_grad
        return value, grad

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.value_and_gradient(w)[1]

    def quadratic_part(self) -> sp.csr_matrix:
        """Hessian of J with the quadratic Volterra term of K dropped (exact when that term vanishes)."""
        lin = self.K.linear0
        p = self.params
        h = lin.T @ sp.diags(self.weights) @ lin + p.beta * self.gram
        if p.boundary_penalty:
            lat = sp.csr_matrix(
                (self.lateral_weight, (self.lateral_index, self.lateral_index)),
                shape=(self.size, self.size),
            )
            gam = self.gamma_dx.T @ sp.diags(self.gamma_weight) @ self.gamma_dx
            h = h + p.boundary_penalty * (lat + gam)
        return (2.0 * h).tocsc()


def _flat(w) -> np.ndarray:
    return (w.values if isinstance(w, ScalarField) else np.asarray(w, float)).ravel()


def functional_J(w: ScalarField, data: CauchyData, params: FunctionalParams, b1=None, b2=None) -> float:
    return WeightedFunctional(data, params, b1, b2).value(_flat(w))


def gradient_J(w: ScalarField, data: CauchyData, params: FunctionalParams, b1=None, b2=None) -> ScalarField:
    grad = WeightedFunctional(data, params, b1, b2).gradient(_flat(w))
    return ScalarField(data.grid, grad.reshape(data.grid.shape))


# ---------------------------------------------------------------------------
# verification of the estimates


def check_volterra_lemma(q: ScalarField, lam: float, t0: float = 0.0) -> tuple[float, float]:
    """(lhs, rhs) = (int (int_{t0}^t q)^2 phi, (1 / 4 lam) int q^2 phi), normalised weight."""
    if lam < 1:
        raise ValueError("the Volterra estimate is stated for lambda >= 1")
    wq = weight_field(q.grid, lam)
    iq = cumulative_integral(q.values, q.grid, t0)
    lhs = float(np.sum(wq * iq * iq))
    rhs = float(np.sum(wq * q.values * q.values)) / (4.0 * lam)
    return lhs, rhs


@dataclass
class CarlemanReport:
    lam: float
    I_res: float
    I_2: float
    I_1: float
    I_bdry: float
    C_hat: float | None

    @property
    def admissible(self) -> bool:
        return self.C_hat is not None

    def line(self) -> str:
        c = "nan" if self.C_hat is None else f"{self.C_hat:.6g}"
        return f"CARLEMAN lambda={self.lam:g} Chat={c}"


def check_carleman_estimate(u: ScalarField, lam: float) -> CarlemanReport:
    """Component integrals of the Carleman estimate for the heat operator and the implied constant.

    All integrals carry the normalised weight; the boundary term is
    e^{-2 lam T^2} times the integrals over Omega at t = +-T.
    """
    g = u.grid
    v = u.values
    ut = diff_array(v, g, "t", 1)
    ux, uy = diff_array(v, g, "x1", 1), diff_array(v, g, "x2", 1)
    uxx, uyy = diff_array(v, g, "x1", 2), diff_array(v, g, "x2", 2)
    uxy = diff_array(ux, g, "x2", 1)
    wq = weight_field(g, lam)
    res = ut - uxx - uyy
    i_res = float(np.sum(wq * res * res))
    i_2 = float(np.sum(wq * (ut**2 + uxx**2 + 2 * uxy**2 + uyy**2)))
    i_1 = float(np.sum(wq * (ux**2 + uy**2 + lam**2 * v**2)))
    qs = quadrature_weights(g, space_only=True)
    bd = 0.0
    for k in (0, g.nt - 1):
        bd += float(np.sum(qs * (ut[..., k] ** 2 + ux[..., k] ** 2 + uy[..., k] ** 2
                                 + lam**2 * v[..., k] ** 2)))
    i_bdry = math.exp(-2.0 * lam * g.T**2) * bd
    denom = i_2 / lam + lam * i_1 - i_bdry
    c_hat = i_res / denom if denom > 0 else None
    return CarlemanReport(lam, i_res, i_2, i_1, i_bdry, c_hat)


def check_convexity_gap(w1: ScalarField, w2: ScalarField, data: CauchyData,
                        params: FunctionalParams, b1=None, b2=None) -> tuple[float, float]:
    """Bregman gap J(w2) - J(w1) - <J'(w1), w2 - w1> and the bound (beta / 2) |w2 - w1|^2_{H^k}."""
    if w1.values.shape != w2.values.shape:
        raise GridError("w1 and w2 must have the same shape")
    fn = WeightedFunctional(data, params, b1, b2)
    a, b = _flat(w1), _flat(w2)
    h = b - a
    j1, g1 = fn.value_and_gradient(a)
    gap = fn.value(b) - j1 - float(np.dot(g1, h))
    bound = 0.5 * params.beta * float(np.dot(h, fn.gram @ h))
    return gap, bound


# ---------------------------------------------------------------------------
# parameter schedule of the accuracy estimate


class GeometryError(ValueError):
    def __init__(self, message: str, min_T: float):
        super().__init__(message)
        self.min_T = min_T


@dataclass(frozen=True)
class TheorySchedule:
    gamma: float
    eta1: float
    eta2: float
    rho: float
    delta: float
    lambda_of_delta: float
    beta_of_delta: float

    @property
    def below_unit_lambda(self) -> bool:
        """The schedule gives lambda < 1, where the estimates are not claimed."""
        return self.lambda_of_delta < 1.0


def theory_schedule(gamma: float, delta: float, A: float, B: float, T: float) -> TheorySchedule:
    if not 0 < gamma < 1 / math.sqrt(3):
        raise ValueError(f"gamma must lie in (0, 1/sqrt(3)), got {gamma}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    spread = B * B - A * A
    min_T = math.sqrt(3.0 * spread)
    if T <= min_T:
        raise GeometryError(
            f"T={T:g} is inadmissible: need T^2 > 3(B^2 - A^2) = {3 * spread:g}, i.e. T > {min_T:g}",
            min_T,
        )
    eta1 = gamma**2 * T**2 + spread
    eta2 = (1.0 - 3.0 * gamma**2) * T**2 - 3.0 * spread
    if eta2 <= 0:
        min_T_gamma = math.sqrt(3.0 * spread / (1.0 - 3.0 * gamma**2))
        raise GeometryError(
            f"T={T:g} is inadmissible for gamma={gamma:g}: need T > {min_T_gamma:g}", min_T_gamma
        )
    rho = 0.5 * min(1.0, eta2 / eta1)
    lam = math.log(delta ** (-1.0 / eta1))
    beta = 2.0 * math.exp(-lam * T**2)
    return TheorySchedule(gamma, eta1, eta2, rho, delta, lam, beta)


# ---------------------------------------------------------------------------
# randomized verification suites


def random_smooth_field(grid: SpaceTimeGrid, rng: np.random.Generator, modes: int = 3) -> ScalarField:
    """Sum of low-frequency separable cosines with standard normal amplitudes."""
    x1, x2, t = grid.mesh()
    s1 = (x1 - grid.A) / (grid.B - grid.A)
    s2 = (x2 - grid.A) / (grid.B - grid.A)
    st = (t + grid.T) / (2 * grid.T)
    out = np.zeros(grid.shape)
    for a in range(modes):
        for b in range(modes):
            for c in range(modes):
                phase = rng.uniform(0, 2 * np.pi, 3)
                out += rng.standard_normal() / (1 + a + b + c) * (
                    np.cos(np.pi * a * s1 + phase[0]) * np.cos(np.pi * b * s2 + phase[1])
                    * np.cos(np.pi * c * st + phase[2])
                )
    return ScalarField(grid, out)


def random_cauchy_data(grid: SpaceTimeGrid, rng: np.random.Generator, t0: float = 0.0,
                       scale: float = 0.1) -> CauchyData:
    nper = perimeter_indices(grid.nx)[0].size
    f0 = scale * random_smooth_field(grid, rng, 2).values[..., 0]
    return CauchyData.from_f0_tilde(
        grid, t0, scale * rng.standard_normal((nper, grid.nt)),
        scale * rng.standard_normal((grid.nx, grid.nt)), f0,
    )


def lemma_suite(grid: SpaceTimeGrid, lams=(1, 2, 5, 10), trials: int = 20, seed: int = 0,
                t0: float = 0.0, slack: float = 1.02) -> list[tuple[float, float, float, bool]]:
    """(lambda, lhs, rhs, lhs <= slack * rhs) for random smooth q."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        q = random_smooth_field(grid, rng)
        for lam in lams:
            lhs, rhs = check_volterra_lemma(q, lam, t0)
            out.append((float(lam), lhs, rhs, lhs <= slack * rhs))
    return out


def carleman_test_functions(grid: SpaceTimeGrid) -> list[ScalarField]:
    """Ten fixed functions vanishing with their first derivatives near the lateral boundary."""
    x1, x2, t = grid.mesh()
    L = grid.B - grid.A
    s1, s2 = (x1 - grid.A) / L, (x2 - grid.A) / L
    st = t / grid.T
    bump = (np.sin(np.pi * s1) * np.sin(np.pi * s2)) ** 2
    profiles = [
        np.ones_like(st), st, 1 - st**2, np.cos(np.pi * st), np.exp(-st),
        np.sin(2 * np.pi * st), 1 + st**3, np.cos(np.pi * s1) * (1 + st),
        np.sin(2 * np.pi * s2) * np.cos(0.5 * np.pi * st), np.cos(2 * np.pi * (s1 + s2)) * (1 - 0.5 * st**2),
    ]
    return [ScalarField(grid, np.broadcast_to(bump * p, grid.shape).copy()) for p in profiles]


def carleman_sweep(grid: SpaceTimeGrid, lams=(2, 4, 8, 16)) -> dict[float, list[CarlemanReport]]:
    suite = carleman_test_functions(grid)
    return {float(lam): [check_carleman_estimate(u, lam) for u in suite] for lam in lams}


def random_ball_point(grid: SpaceTimeGrid, rng: np.random.Generator, R: float, k: int = 3) -> ScalarField:
    """Random smooth field rescaled to H^k norm uniform in [0, R)."""
    w = random_smooth_field(grid, rng).values
    flat = w.ravel()
    norm = math.sqrt(float(flat @ (sobolev_gram(grid, k) @ flat)))
    return ScalarField(grid, w * (R * rng.uniform() / norm))


def convexity_suite(grid: SpaceTimeGrid, pairs: int = 50, R: float = 5.0, lam: float = 3.0,
                    beta: float = 0.01, seed: int = 0) -> list[tuple[float, float, bool]]:
    """(gap, bound, gap >= bound) for random pairs in the H^3 ball of radius R."""
    rng = np.random.default_rng(seed)
    data = random_cauchy_data(grid, rng)
    params = FunctionalParams(lam=lam, beta=beta, k=3, t0=data.t0)
    out = []
    for _ in range(pairs):
        w1 = random_ball_point(grid, rng, R)
        w2 = random_ball_point(grid, rng, R)
        gap, bound = check_convexity_gap(w1, w2, data, params)
        out.append((gap, bound, gap >= bound))
    return out

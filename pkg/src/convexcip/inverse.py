"""Minimisation of the weighted functional and recovery of the coefficient c."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .carleman import FunctionalParams, WeightedFunctional
from .grid import (
    GridError,
    ScalarField,
    diff_array,
    quadrature_weights,
    sobolev_gram,
)
from .transform import CauchyData, volterra_reconstruct

log = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
MAX_HALVINGS = 40


@dataclass(frozen=True)
class MinimizerOptions:
    method: str = "lbfgs"  # or "steepest"
    grad_tol: float = 1e-2
    grad_norm: str = "sup"  # or "l2"
    max_iters: int = 500
    step0: float = 1.0
    memory: int = 10
    precondition: bool = True
    projection_R: float | None = None

    def __post_init__(self):
        if self.method not in ("lbfgs", "steepest"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.grad_norm not in ("sup", "l2"):
            raise ValueError(f"unknown gradient norm {self.grad_norm!r}")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class MinimizerTrace:
    J: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    converged: bool = False
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.steps)


def project_ball(w: ScalarField, R: float, k: int) -> ScalarField:
    """Radial projection onto the centred H^k ball of radius R."""
    if R <= 0:
        raise ValueError("R must be positive")
    flat = w.values.ravel()
    norm = float(np.sqrt(flat @ (sobolev_gram(w.grid, k) @ flat)))
    if norm <= R:
        return w
    return w.with_values(w.values * (R / norm))


def _projector(grid, R, k):
    if R is None:
        return None
    gram = sobolev_gram(grid, k)

    def proj(x):
        norm = float(np.sqrt(x @ (gram @ x)))
        return x if norm <= R else x * (R / norm)

    return proj


def _norm(g: np.ndarray, kind: str) -> float:
    return float(np.max(np.abs(g))) if kind == "sup" else float(np.linalg.norm(g))


def minimize(data: CauchyData, params: FunctionalParams, opts: MinimizerOptions = MinimizerOptions(),
             b1=None, b2=None, start: ScalarField | np.ndarray | None = None,
             functional: WeightedFunctional | None = None) -> tuple[ScalarField, MinimizerTrace]:
    """Descent on J with Armijo backtracking and an optional ball projection after every step.

    The quasi-Newton variant is L-BFGS whose initial inverse Hessian is the
    inverse of ``quadratic_part`` (the Hessian with the Volterra product
    dropped), factorised once.
    """
    fn = functional or WeightedFunctional(data, params, b1, b2)
    g = data.grid
    if start is None:
        x = np.zeros(fn.size)
    else:
        x = (start.values if isinstance(start, ScalarField) else np.asarray(start, float)).ravel().copy()
    proj = _projector(g, opts.projection_R, params.k)
    if proj is not None:
        x = proj(x)

    if opts.method == "lbfgs" and opts.precondition:
        lu = spla.splu(fn.quadratic_part())
        h0 = lu.solve
    else:
        h0 = None

    trace = MinimizerTrace()
    f, grad = fn.value_and_gradient(x)
    trace.J.append(f)
    trace.grad_norm.append(_norm(grad, opts.grad_norm))
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    step_prev = opts.step0

    for _ in range(opts.max_iters):
        if trace.grad_norm[-1] < opts.grad_tol:
            trace.converged = True
            trace.message = "gradient below tolerance"
            break
        if opts.method == "lbfgs":
            d = -_two_loop(grad, s_hist, y_hist, h0)
            if not np.dot(grad, d) < 0:
                s_hist.clear()
                y_hist.clear()
                d = -(h0(grad) if h0 else grad)
            step = 1.0 if (h0 or s_hist) else opts.step0
        else:
            d = -grad
            step = min(2.0 * step_prev, 1e12)

        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            trial = x + step * d
            if proj is not None:
                trial = proj(trial)
            f_new, g_new = fn.value_and_gradient(trial)
            if np.isfinite(f_new) and f_new <= f + ARMIJO_C1 * np.dot(grad, trial - x) and f_new < f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            trace.message = "line search failed"
            break

        s, y = trial - x, g_new - grad
        if np.dot(s, y) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > opts.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, grad = trial, f_new, g_new
        step_prev = step
        trace.J.append(f)
        trace.grad_norm.append(_norm(grad, opts.grad_norm))
        trace.steps.append(step)
    else:
        if trace.grad_norm[-1] < opts.grad_tol:
            trace.converged = True
            trace.message = "gradient below tolerance"
        else:
            trace.message = "maximum iterations reached"

    log.info("minimize: %s after %d iterations, J=%.6g, |grad|=%.3g",
             trace.message, trace.iterations, trace.J[-1], trace.grad_norm[-1])
    return ScalarField(g, x.reshape(g.shape)), trace


def _two_loop(grad, s_hist, y_hist, h0):
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        q -= a * y
        alphas.append((rho, a))
    if h0 is not None:
        r = h0(q)
    elif s_hist:
        s, y = s_hist[-1], y_hist[-1]
        r = (np.dot(s, y) / np.dot(y, y)) * q
    else:
        r = q
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * np.dot(y, r)
        r += (a - b) * s
    return r


# ---------------------------------------------------------------------------
# coefficient recovery


def coefficient_levels(w: ScalarField, data: CauchyData, b1=None, b2=None) -> np.ndarray:
    """c evaluated at every time level from v = int_{t0}^t w + f0~.

    With u = e^v the equation u_t = Lap u + b.grad u - c u becomes
    c = Lap v + |grad v|^2 + b.grad v - v_t.
    """
    g = w.grid
    v = volterra_reconstruct(w, ScalarField(g, data.f0_tilde), data.t0).values
    vx, vy = diff_array(v, g, "x1", 1), diff_array(v, g, "x2", 1)
    c = diff_array(v, g, "x1", 2) + diff_array(v, g, "x2", 2) + vx**2 + vy**2
    c -= diff_array(v, g, "t", 1)
    if b1 is not None:
        c += np.asarray(getattr(b1, "values", b1))[:, :, None] * vx
    if b2 is not None:
        c += np.asarray(getattr(b2, "values", b2))[:, :, None] * vy
    return c


def reconstruct_c(w_min: ScalarField, data: CauchyData, b1=None, b2=None,
                  mode: str = "slice", gamma: float | None = None) -> ScalarField:
    """c from the minimiser: the t0 slice (default) or the time average over |t| <= gamma T."""
    g = w_min.grid
    levels = coefficient_levels(w_min, data, b1, b2)
    if mode == "slice":
        s = (data.t0 + g.T) / g.ht
        j = min(max(int(np.floor(s + 1e-9)), 0), g.nt - 2)
        theta = min(max(s - j, 0.0), 1.0)
        if abs(theta) < 1e-9:
            c = levels[..., j]
        elif abs(theta - 1.0) < 1e-9:
            c = levels[..., j + 1]
        else:
            c = (1 - theta) * levels[..., j] + theta * levels[..., j + 1]
    elif mode == "average":
        if gamma is None or not 0 < gamma < 1 / np.sqrt(3):
            raise ValueError(f"gamma must lie in (0, 1/sqrt(3)), got {gamma}")
        idx = np.flatnonzero(np.abs(g.t) <= gamma * g.T + 1e-9 * g.ht)
        if idx.size < 2:
            raise ValueError("averaging window contains fewer than two time levels")
        wt = np.full(idx.size, g.ht)
        wt[0] = wt[-1] = 0.5 * g.ht
        c = levels[..., idx] @ wt / wt.sum()
    else:
        raise ValueError(f"unknown reconstruction mode {mode!r}")
    return ScalarField(g, np.ascontiguousarray(c))


def reconstruction_error(c_comp: ScalarField, c_true: ScalarField) -> float:
    """Relative L2(Omega) error with trapezoid quadrature."""
    if c_comp.grid.space_shape != c_true.grid.space_shape or not c_comp.grid.same_extent(c_true.grid):
        raise GridError("c_comp and c_true live on different grids")
    q = quadrature_weights(c_comp.grid, space_only=True)
    num = np.sqrt(np.sum(q * (c_comp.values - c_true.values) ** 2))
    den = np.sqrt(np.sum(q * c_true.values**2))
    return float(num / max(den, 1e-12))


@dataclass
class ReconstructionReport:
    c_comp: ScalarField
    w_min: ScalarField
    iterations: int
    J_trace: list[float]
    grad_norm_final: float
    converged: bool
    rel_l2_error: float | None
    wall_time: float
    message: str = ""

    def manifest(self) -> dict[str, str]:
        out = {
            "iterations": str(self.iterations),
            "final_J": f"{self.J_trace[-1]:.17g}",
            "grad_norm": f"{self.grad_norm_final:.17g}",
            "converged": str(self.converged).lower(),
            "message": self.message,
            "wall_time": f"{self.wall_time:.3f}",
        }
        if self.rel_l2_error is not None:
            out["rel_l2_error"] = f"{self.rel_l2_error:.17g}"
        return out


def invert(data: CauchyData, params: FunctionalParams, opts: MinimizerOptions = MinimizerOptions(),
           b1=None, b2=None, c_true: ScalarField | None = None, mode: str = "slice",
           gamma: float | None = None, start=None) -> ReconstructionReport:
    t = time.perf_counter()
    w_min, trace = minimize(data, params, opts, b1, b2, start=start)
    c = reconstruct_c(w_min, data, b1, b2, mode, gamma)
    err = reconstruction_error(c, c_true) if c_true is not None else None
    return ReconstructionReport(
        c, w_min, trace.iterations, trace.J, trace.grad_norm[-1], trace.converged, err,
        time.perf_counter() - t, trace.message,
    )


def correlation(a: ScalarField | np.ndarray, b: ScalarField | np.ndarray) -> float:
    a = np.asarray(getattr(a, "values", a), float).ravel()
    b = np.asarray(getattr(b, "values", b), float).ravel()
    return float(np.corrcoef(a, b)[0, 1])



"""Multiplicative measurement noise and the smoothing used before differentiating noisy data."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline

from .forward import MeasurementData

RNG_ALGORITHM = "numpy Philox4x64-10, standard_normal (ziggurat); g1 block then f0 block, C order"
GCV_STRENGTHS = np.logspace(-2, 7, 10)


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.0
    seed: int = 0
    smoother_strength: float | None = None  # None: choose by generalised cross-validation

    def __post_init__(self):
        if not 0 <= self.sigma <= 0.5:
            raise ValueError(f"sigma must lie in [0, 0.5], got {self.sigma}")
        if self.smoother_strength is not None and self.smoother_strength < 0:
            raise ValueError("smoother_strength must be >= 0")


def add_noise(m: MeasurementData, cfg: NoiseConfig) -> MeasurementData:
    """g1 -> g1 (1 + sigma xi), f0 -> f0 (1 + sigma xi) with one standard normal per detector."""
    if cfg.sigma == 0:
        return m.replace(g1=m.g1.copy(), f0=m.f0.copy())
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    xi_g1 = rng.standard_normal(m.g1.shape)
    xi_f0 = rng.standard_normal(m.f0.shape)
    return m.replace(g1=m.g1 * (1.0 + cfg.sigma * xi_g1), f0=m.f0 * (1.0 + cfg.sigma * xi_f0))


# ---------------------------------------------------------------------------
# penalised least squares:  min |s - d|^2 + strength (|D2_rows s|^2 + |D2_cols s|^2)


@lru_cache(maxsize=16)
def _second_difference_eigen(n: int):
    d2 = np.zeros((n - 2, n))
    for i in range(n - 2):
        d2[i, i:i + 3] = (1.0, -2.0, 1.0)
    mu, q = np.linalg.eigh(d2.T @ d2)
    mu = np.clip(mu, 0.0, None)
    mu.setflags(write=False)
    q.setflags(write=False)
    return mu, q


def _smooth_block(data: np.ndarray, strength: float | None) -> tuple[np.ndarray, float]:
    if data.shape[0] < 3 or data.shape[1] < 3:
        return data.copy(), 0.0
    mu1, q1 = _second_difference_eigen(data.shape[0])
    mu2, q2 = _second_difference_eigen(data.shape[1])
    coeffs = q1.T @ data @ q2
    spectrum = mu1[:, None] + mu2[None, :]

    def fit(s):
        return q1 @ (coeffs / (1.0 + s * spectrum)) @ q2.T

    if strength is None:
        n = data.size
        best = None
        for s in GCV_STRENGTHS:
            trace = float(np.sum(1.0 / (1.0 + s * spectrum)))
            rss = float(np.sum((fit(s) - data) ** 2))
            score = n * rss / (n - trace) ** 2
            if best is None or score < best[0]:
                best = (score, s)
        strength = best[1]
    if strength == 0:
        return data.copy(), 0.0
    return fit(strength), float(strength)


def smooth(m: MeasurementData, cfg: NoiseConfig) -> MeasurementData:
    """Smooth the g1 block on its (x2, t) grid and the f0 block on its spatial grid."""
    g1, s1 = _smooth_block(m.g1, cfg.smoother_strength)
    f0, s2 = _smooth_block(m.f0, cfg.smoother_strength)
    meta = dict(m.meta, smoother_g1=repr(s1), smoother_f0=repr(s2))
    return m.replace(g1=g1, f0=f0, meta=meta)


def spline_derivatives(values, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of the natural cubic spline through equispaced samples."""
    y = np.asarray(values, dtype=float)
    if y.ndim != 1 or y.size < 4:
        raise ValueError("spline_derivatives needs a 1D sequence of at least 4 samples")
    x = np.arange(y.size) * spacing
    s = CubicSpline(x, y, bc_type="natural")
    return s(x, 1), s(x, 2)


def spline_time_derivative(block: np.ndarray, spacing: float) -> np.ndarray:
    """Row-wise spline first derivative of a (n_x2, n_t) block."""
    return np.vstack([spline_derivatives(row, spacing)[0] for row in block])

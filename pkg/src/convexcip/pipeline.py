"""Glue between the forward solver, the measurement files and the inversion grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import (
    MeasurementData,
    ParabolicProblem,
    constant_boundary,
    measure,
    solve_forward,
)
from .grid import ScalarField, SpaceTimeGrid, _linear_weights
from .noise import NoiseConfig, add_noise, smooth, spline_time_derivative
from .phantoms import Scenario, standard_initial
from .transform import CauchyData, derive_cauchy


@dataclass
class Simulation:
    scenario: Scenario
    u: ScalarField
    c_true: np.ndarray
    measurements: MeasurementData


def simulate(sc: Scenario, paper_fine: bool = False, c_values: np.ndarray | None = None,
             clip_nonnegative: bool = False) -> Simulation:
    """Forward solve on the scenario's fine grid and sample the detectors (noise-free)."""
    g = sc.forward_grid(paper_fine)
    c = sc.phantom().values(g, clip_nonnegative) if c_values is None else np.asarray(c_values, float)
    problem = ParabolicProblem(c=c, f_init=standard_initial(g), g0=constant_boundary(g, sc.g0))
    u = solve_forward(problem, g)
    n_x2, n_t = sc.g1_detectors
    m = measure(u, sc.t0, n_x2, n_t, sc.f0_detectors)
    m.meta.update(scenario=sc.name, forward_nx=str(g.nx), forward_nt=str(g.nt))
    return Simulation(sc, u, c, m)


def noisy_measurements(m: MeasurementData, sigma: float, seed: int) -> MeasurementData:
    return add_noise(m, NoiseConfig(sigma=sigma, seed=seed))


def cauchy_from_measurements(m: MeasurementData, grid: SpaceTimeGrid, g0: float = 1.0,
                             smoothing: bool = False,
                             smoother_strength: float | None = None) -> CauchyData:
    """Cauchy data on the inversion grid from detector readings.

    g1 and f0 are interpolated linearly onto the inversion nodes (an exact
    subsampling when the detector grid is a refinement of the inversion
    grid).  With ``smoothing`` both blocks are smoothed on their detector
    grids first and d/dt(g1/g0) comes from natural cubic splines in time.
    """
    if not grid.same_extent(m.grid) or not np.isclose(grid.T, m.grid.T):
        raise ValueError("measurement and inversion grids cover different domains")
    if smoothing:
        m = smooth(m, NoiseConfig(smoother_strength=smoother_strength))
    wx = _linear_weights(m.grid.x, grid.x)
    wt = _linear_weights(m.grid.t, grid.t)

    def to_inverse(block):
        return np.asarray(wx @ (wt @ block.T).T)

    g1 = to_inverse(m.g1)
    p1 = to_inverse(spline_time_derivative(m.g1 / g0, m.grid.ht)) if smoothing else None
    wf = _linear_weights(m.f0_grid().x, grid.x)
    f0 = np.asarray(wf @ m.f0 @ wf.T)
    return derive_cauchy(grid, constant_boundary(grid, g0), g1, f0, m.t0, g1_time_derivative=p1)


def true_coefficient(sc: Scenario, grid: SpaceTimeGrid, clip_nonnegative: bool = False) -> ScalarField:
    return ScalarField(grid, sc.phantom().values(grid, clip_nonnegative))

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from convexcip.carleman import FunctionalParams, WeightedFunctional
from convexcip.forward import ParabolicProblem, constant_boundary, extract_f0, extract_g1, solve_forward
from convexcip.grid import GridError, ScalarField, SpaceTimeGrid, sobolev_norm_sq
from convexcip.inverse import (
    MinimizerOptions,
    correlation,
    minimize,
    project_ball,
    reconstruct_c,
    reconstruction_error,
)
from convexcip.phantoms import standard_initial
from convexcip.transform import CauchyData, derive_cauchy, log_field, time_derivative_w


class QuadraticTraceFunctional:
    """beta |w|^2_{H^k} + penalty * trace misfit, i.e. the functional with the K residual removed."""

    def __init__(self, fn: WeightedFunctional):
        p = fn.params
        n = fn.size
        lat = sp.csr_matrix((np.ones(fn.lateral_index.size), (np.arange(fn.lateral_index.size),
                                                             fn.lateral_index)), shape=(fn.lateral_index.size, n))
        self.ops = [(lat, fn.lateral_weight, fn.p0), (fn.gamma_dx, fn.gamma_weight, fn.p1)]
        self.size = n
        self.hess = 2 * (p.beta * fn.gram + p.boundary_penalty * sum(
            m.T @ sp.diags(wt) @ m for m, wt, _ in self.ops))
        self.rhs = 2 * p.boundary_penalty * sum(m.T @ (wt * d) for m, wt, d in self.ops)
        self.const = p.boundary_penalty * sum(float(wt @ (d * d)) for _, wt, d in self.ops)

    def value_and_gradient(self, w):
        hw = self.hess @ w
        return 0.5 * w @ hw - self.rhs @ w + self.const, hw - self.rhs

    def value(self, w):
        return self.value_and_gradient(w)[0]

    def quadratic_part(self):
        return self.hess.tocsc()


@pytest.fixture
def trace_problem(rng):
    g = SpaceTimeGrid(1, 2, 1, 5, 5)
    data = CauchyData.from_f0_tilde(g, 0.0, rng.standard_normal((16, 5)), rng.standard_normal((5, 5)),
                                    np.zeros((5, 5)))
    fn = WeightedFunctional(data, FunctionalParams(beta=0.01, boundary_penalty=10.0))
    return data, fn.params, QuadraticTraceFunctional(fn)


class TestMinimize:
    def test_options_validation(self):
        for kw in (dict(method="newton"), dict(grad_norm="l1"), dict(grad_tol=0), dict(max_iters=0)):
            with pytest.raises(ValueError):
                MinimizerOptions(**kw)

    def test_quadratic_matches_direct_solve(self, trace_problem):
        data, params, q = trace_problem
        direct = spla.spsolve(q.hess.tocsc(), q.rhs)
        w, trace = minimize(data, params, MinimizerOptions(grad_tol=1e-10), functional=q)
        assert trace.converged
        assert np.linalg.norm(w.values.ravel() - direct) <= 1e-8 * np.linalg.norm(direct)

    def test_steepest_descent_monotone_and_linear(self, trace_problem):
        data, params, q = trace_problem
        w, trace = minimize(data, params, MinimizerOptions(method="steepest", grad_tol=1e-12,
                                                           max_iters=400), functional=q)
        J = np.array(trace.J)
        assert np.all(np.diff(J) < 0)
        gap = J - J.min() + 1e-300
        # geometric decay of the optimality gap over the early iterations
        ratio = (gap[60] / gap[10]) ** (1 / 50)
        assert ratio < 1

    def test_start_at_fixed_point(self):
        # w constant: K(w) = 0; consistent traces p0 = w, p1 = 0 leave only the tiny beta term
        g = SpaceTimeGrid(1, 2, 1, 9, 9)
        data = CauchyData.from_f0_tilde(g, 0.0, np.full((32, 9), 0.3), np.zeros((9, 9)), np.zeros((9, 9)))
        params = FunctionalParams(beta=1e-8)
        _, trace = minimize(data, params, MinimizerOptions(), start=np.full(g.shape, 0.3))
        assert trace.converged and trace.iterations == 0

    def test_projection_keeps_iterates_in_ball(self, rng):
        g = SpaceTimeGrid(1, 2, 1, 5, 5)
        data = CauchyData.from_f0_tilde(g, 0.0, 3 * rng.standard_normal((16, 5)),
                                        rng.standard_normal((5, 5)), np.zeros((5, 5)))
        w, trace = minimize(data, FunctionalParams(), MinimizerOptions(projection_R=0.5, max_iters=50))
        assert sobolev_norm_sq(w, 3) <= 0.5**2 * (1 + 1e-12)
        assert np.all(np.diff(trace.J) < 0)


class TestTest1Run:
    def test_converges_with_decreasing_J(self, test1_run):
        *_, report = test1_run
        assert report.converged
        assert np.all(np.diff(report.J_trace) < 0)
        assert report.grad_norm_final < 1e-2

    def test_stationarity(self, test1_run):
        sc, sim, data, params, report = test1_run
        fn = WeightedFunctional(data, params)
        grad = fn.gradient(report.w_min.values.ravel())
        r = np.random.default_rng(0)
        for _ in range(10):
            d = r.standard_normal(grad.size)
            assert grad @ d >= -1e-2 * np.linalg.norm(d)

    def test_manifest_keys(self, test1_run):
        man = test1_run[-1].manifest()
        assert {"iterations", "final_J", "grad_norm", "rel_l2_error", "wall_time"} <= set(man)


class TestProjectBall:
    def test_inside_is_identity(self, g9):
        w = ScalarField(g9, np.full(g9.shape, 0.1))
        assert project_ball(w, 10.0, 3) is w

    def test_radial_scaling_and_idempotence(self, g9, rng):
        w = ScalarField(g9, rng.standard_normal(g9.shape))
        R = 0.5 * np.sqrt(sobolev_norm_sq(w, 3))
        p = project_ball(w, R, 3)
        assert np.sqrt(sobolev_norm_sq(p, 3)) == pytest.approx(R, rel=1e-12)
        np.testing.assert_array_equal(project_ball(p, R, 3).values, p.values)

    def test_nonexpansive_on_collinear_pairs(self, g9, rng):
        w = ScalarField(g9, rng.standard_normal(g9.shape))
        n = np.sqrt(sobolev_norm_sq(w, 3))
        a, b = w.with_values(0.5 * w.values), w.with_values(3.0 * w.values)
        pa, pb = project_ball(a, n, 3), project_ball(b, n, 3)
        d = lambda x, y: np.sqrt(sobolev_norm_sq(x.with_values(x.values - y.values), 3))  # noqa: E731
        assert d(pa, pb) <= d(a, b)

    def test_rejects_radius(self, g9):
        with pytest.raises(ValueError):
            project_ball(ScalarField(g9, np.zeros(g9.shape)), 0.0, 3)


class TestReconstruct:
    def test_all_zero(self, g9):
        c = reconstruct_c(ScalarField(g9, np.zeros(g9.shape)), CauchyData.zeros(g9))
        np.testing.assert_array_equal(c.values, 0.0)

    def test_zero_w_with_initial_profile(self):
        # c = Lap f0~ + |grad f0~|^2 = Lap f0 / f0, closed form for f0 = 1 + sin sin
        g = SpaceTimeGrid(1, 2, 1, 65, 5)
        f0 = standard_initial(g)
        data = CauchyData.from_f0_tilde(g, 0.0, np.zeros((256, 5)), np.zeros((65, 5)), np.log(f0))
        c = reconstruct_c(ScalarField(g, np.zeros(g.shape)), data)
        x1, x2 = g.space_mesh()
        s = np.sin(np.pi * (x1 - 1)) * np.sin(np.pi * (x2 - 1))
        exact = -2 * np.pi**2 * s / (1 + s)
        assert np.max(np.abs(c.values - exact)[2:-2, 2:-2]) < 0.02

    def test_average_mode(self, g9):
        w = ScalarField(g9, np.zeros(g9.shape))
        c = reconstruct_c(w, CauchyData.zeros(g9), mode="average", gamma=0.3)
        np.testing.assert_array_equal(c.values, 0.0)
        with pytest.raises(ValueError):
            reconstruct_c(w, CauchyData.zeros(g9), mode="average", gamma=0.7)
        with pytest.raises(ValueError):
            reconstruct_c(w, CauchyData.zeros(g9), mode="median")

    def test_exact_w_converges_under_refinement(self):
        errs = []
        for n in (17, 33, 65):
            g = SpaceTimeGrid(1, 2, 1, n, n)
            x1, x2 = g.space_mesh()
            c_true = 0.5 + 0.4 * np.sin(np.pi * (x1 - 1)) * np.cos(np.pi * (x2 - 1))
            u = solve_forward(ParabolicProblem(c=c_true, f_init=standard_initial(g),
                                               g0=constant_boundary(g)), g)
            data = derive_cauchy(g, constant_boundary(g), extract_g1(u), extract_f0(u, 0.0).values, 0.0)
            c = reconstruct_c(time_derivative_w(log_field(u)), data)
            errs.append(reconstruction_error(c, ScalarField(g, c_true)))
        assert errs[2] < errs[1] < errs[0]


class TestError:
    def test_examples(self, g9, rng):
        c = ScalarField(g9, rng.uniform(0.5, 1.5, g9.space_shape))
        assert reconstruction_error(c, c) == 0.0
        assert reconstruction_error(c.with_values(2 * c.values), c) == pytest.approx(1.0)
        one = ScalarField(g9, np.ones(g9.space_shape))
        assert reconstruction_error(one.with_values(1.25 * np.ones(g9.space_shape)), one) == pytest.approx(0.25)

    def test_grid_mismatch(self, g9):
        other = SpaceTimeGrid(1, 2, 1, 5, 5)
        with pytest.raises(GridError):
            reconstruction_error(ScalarField(g9, np.ones(g9.space_shape)), ScalarField(other, np.ones((5, 5))))

    def test_correlation(self):
        a = np.arange(10.0)
        assert correlation(a, 2 * a + 1) == pytest.approx(1.0)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from convexcip.grid import (
    GridError,
    ScalarField,
    SpaceTimeGrid,
    build_grid,
    d1_matrix,
    d2_matrix,
    diff,
    h21_norm_sq,
    interpolate_to,
    lateral_trace,
    multi_indices,
    perimeter_indices,
    perimeter_weights,
    quadrature_weights,
    sobolev_gram,
    sobolev_norm_sq,
)


def field(grid, fn):
    x1, x2, t = grid.mesh()
    return ScalarField(grid, np.broadcast_to(fn(x1, x2, t), grid.shape).copy())


class TestSpaceTimeGrid:
    def test_inversion_spacing(self):
        g = build_grid(1, 2, 1, 17, 17)
        assert g.hx == pytest.approx(1 / 16, abs=1e-15)
        assert g.ht == pytest.approx(1 / 8, abs=1e-15)

    def test_minimal_grid(self):
        g = build_grid(1, 2, 0.1, 3, 3)
        assert g.hx == pytest.approx(0.5)
        assert g.ht == pytest.approx(0.1)

    def test_fine_forward_spacing(self):
        g = build_grid(1, 2, 1, 641, 513)
        assert g.hx == pytest.approx(1 / 640)
        assert g.ht == pytest.approx(2 / 512)

    @pytest.mark.parametrize("args", [(2, 1, 1, 9, 9), (1, 2, 0, 9, 9), (1, 2, 1, 2, 9), (1, 2, 1, 9, 2),
                                      (0, 2, 1, 9, 9)])
    def test_rejects_bad_parameters(self, args):
        with pytest.raises(GridError):
            build_grid(*args)

    def test_time_index(self):
        g = build_grid(1, 2, 0.1, 17, 17)
        assert g.time_index(0.0) == 8
        assert g.time_index(-0.1) == 0
        assert g.time_index(-0.08) is None


class TestScalarField:
    def test_values_are_read_only(self, g9):
        f = ScalarField(g9, np.zeros(g9.shape))
        with pytest.raises(ValueError):
            f.values[0, 0, 0] = 1.0

    def test_rejects_wrong_shape_and_nan(self, g9):
        with pytest.raises(GridError):
            ScalarField(g9, np.zeros((9, 9, 8)))
        bad = np.zeros(g9.shape)
        bad[1, 2, 3] = np.nan
        with pytest.raises(GridError):
            ScalarField(g9, bad)

    def test_rank(self, g9):
        assert ScalarField(g9, np.zeros(g9.shape)).rank == "st"
        assert ScalarField(g9, np.zeros(g9.space_shape)).rank == "s"


class TestDiff:
    def test_linear_in_x1(self):
        g = build_grid(1, 2, 1, 11, 7)
        d = diff(field(g, lambda x1, x2, t: x1 + 0 * x2 + 0 * t), "x1", 1)
        np.testing.assert_allclose(d.values, 1.0, rtol=0, atol=1e-12)

    def test_quadratic_in_t(self):
        g = build_grid(1, 2, 1, 5, 9)
        d = diff(field(g, lambda x1, x2, t: t**2 + 0 * x1), "t", 2)
        np.testing.assert_allclose(d.values, 2.0, rtol=0, atol=1e-11)

    def test_sine_derivative(self):
        g = build_grid(1, 2, 1, 17, 5)
        d = diff(field(g, lambda x1, x2, t: np.sin(np.pi * x1) + 0 * x2 + 0 * t), "x1", 1)
        exact = np.pi * np.cos(np.pi * g.x)[:, None, None]
        assert np.max(np.abs(d.values - exact)) <= 0.05

    @pytest.mark.parametrize("axis", ["x1", "x2", "t"])
    def test_second_order_exact_on_quadratics(self, axis):
        g = build_grid(1, 2, 0.5, 6, 5)
        coeffs = {"x1": (1, 0, 0), "x2": (0, 1, 0), "t": (0, 0, 1)}[axis]
        f = field(g, lambda x1, x2, t: (coeffs[0] * x1 + coeffs[1] * x2 + coeffs[2] * t) ** 2 + 3.0)
        np.testing.assert_allclose(diff(f, axis, 2).values, 2.0, atol=1e-10)

    def test_three_node_axis(self):
        g = build_grid(1, 2, 1, 3, 3)
        f = field(g, lambda x1, x2, t: x1**2 + 0 * x2 + 0 * t)
        np.testing.assert_allclose(diff(f, "x1", 2).values, 2.0, atol=1e-12)
        np.testing.assert_allclose(diff(f, "x1", 1).values, 2 * g.x[:, None, None] + 0 * f.values, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**32 - 1),
           st.sampled_from(["x1", "x2", "t"]), st.sampled_from([1, 2]))
    def test_linearity(self, a, b, seed, axis, order):
        g = build_grid(1, 2, 1, 7, 6)
        r = np.random.default_rng(seed)
        f = ScalarField(g, r.standard_normal(g.shape))
        h = ScalarField(g, r.standard_normal(g.shape))
        lhs = diff(ScalarField(g, a * f.values + b * h.values), axis, order).values
        rhs = a * diff(f, axis, order).values + b * diff(h, axis, order).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + np.max(np.abs(rhs))))

    def test_stencil_matrices_shapes(self):
        assert d1_matrix(5, 0.25).shape == (5, 5)
        assert d2_matrix(3, 0.5).shape == (3, 3)


class TestSobolev:
    def test_zero(self, g9):
        assert sobolev_norm_sq(ScalarField(g9, np.zeros(g9.shape)), 3) == 0.0

    def test_constant_is_volume(self, g9):
        assert sobolev_norm_sq(ScalarField(g9, np.ones(g9.shape)), 3) == pytest.approx(2.0, abs=1e-12)

    def test_linear_x1_against_quadrature(self):
        g = build_grid(1, 2, 1, 1025, 3)
        f = field(g, lambda x1, x2, t: x1 + 0 * x2 + 0 * t)
        # independent oracle: adaptive cubature of x1^2 + 1 over (1,2)^2 x (-1,1)
        exact, _ = integrate.tplquad(lambda t, x2, x1: x1**2 + 1.0, 1, 2, 1, 2, -1, 1)
        assert sobolev_norm_sq(f, 1) == pytest.approx(exact, abs=1e-6)

    def test_multi_index_count(self):
        assert [len(multi_indices(k)) for k in range(4)] == [1, 4, 10, 20]

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_in_k_and_gram_agrees(self, seed):
        g = build_grid(1, 2, 0.5, 6, 5)
        f = ScalarField(g, np.random.default_rng(seed).standard_normal(g.shape))
        norms = [sobolev_norm_sq(f, k) for k in range(4)]
        assert norms[0] > 0
        assert all(norms[k] >= norms[k - 1] for k in range(1, 4))
        flat = f.values.ravel()
        for k in range(4):
            assert flat @ (sobolev_gram(g, k) @ flat) == pytest.approx(norms[k], rel=1e-10)

    def test_definite(self):
        g = build_grid(1, 2, 0.5, 5, 5)
        mu = np.linalg.eigvalsh(sobolev_gram(g, 3).toarray())
        assert mu.min() > 0

    def test_rejects_bad_index(self, g9):
        with pytest.raises(GridError):
            sobolev_norm_sq(ScalarField(g9, np.zeros(g9.shape)), 4)


class TestH21:
    def test_zero(self, g9):
        assert h21_norm_sq(ScalarField(g9, np.zeros(g9.shape)), 1.0) == 0.0

    def test_linear_in_t(self):
        g = build_grid(1, 2, 1, 5, 2049)
        f = field(g, lambda x1, x2, t: t + 0 * x1)
        exact, _ = integrate.quad(lambda t: t**2 + 1.0, -1, 1)
        assert h21_norm_sq(f, 1.0) == pytest.approx(exact, abs=1e-6)

    def test_half_window_constant(self):
        g = build_grid(1, 2, 0.8, 5, 17)
        assert h21_norm_sq(ScalarField(g, np.ones(g.shape)), 0.5) == pytest.approx(1.0 * 2 * 0.5 * 0.8)

    def test_rejects_gamma(self, g9):
        with pytest.raises(GridError):
            h21_norm_sq(ScalarField(g9, np.zeros(g9.shape)), 0.0)


class TestInterpolation:
    def test_constant(self):
        src, dst = build_grid(1, 2, 1, 9, 9), build_grid(1, 2, 1, 6, 4)
        out = interpolate_to(ScalarField(src, np.full(src.shape, 3.5)), dst)
        np.testing.assert_allclose(out.values, 3.5, rtol=0, atol=1e-14)

    def test_affine_exact(self):
        src, dst = build_grid(1, 2, 1, 9, 7), build_grid(1, 2, 1, 13, 10)
        fn = lambda x1, x2, t: x1 + x2 + t  # noqa: E731
        out = interpolate_to(field(src, fn), dst)
        np.testing.assert_allclose(out.values, field(dst, fn).values, atol=1e-13)

    def test_same_grid_is_identity(self, g9):
        f = ScalarField(g9, np.arange(np.prod(g9.shape), dtype=float).reshape(g9.shape))
        assert interpolate_to(f, g9) is f

    def test_fine_to_coarse_sine(self):
        # full-scale spatial resolution; a shorter time axis keeps memory modest
        src, dst = build_grid(1, 2, 1, 641, 33), build_grid(1, 2, 1, 17, 17)
        fn = lambda x1, x2, t: np.sin(np.pi * x1) * np.sin(np.pi * x2) + 0 * t  # noqa: E731
        out = interpolate_to(field(src, fn), dst)
        assert np.max(np.abs(out.values - field(dst, fn).values)) <= 1e-4

    def test_extent_mismatch(self, g9):
        with pytest.raises(GridError):
            interpolate_to(ScalarField(g9, np.zeros(g9.shape)), build_grid(1, 3, 1, 9, 9))


class TestBoundary:
    def test_perimeter_count_and_weights(self):
        ii, jj = perimeter_indices(9)
        assert ii.size == 4 * 8
        assert perimeter_weights(9, 1 / 8).sum() == pytest.approx(4.0)

    def test_lateral_trace(self):
        a = np.arange(25.0).reshape(5, 5)
        tr = lateral_trace(a)
        assert tr.size == 16 and 12.0 not in tr

    def test_quadrature_total(self, g9):
        assert quadrature_weights(g9).sum() == pytest.approx(2.0)
        assert quadrature_weights(g9, space_only=True).sum() == pytest.approx(1.0)

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from slpoly.core import (
    BoundaryProblem,
    Grid,
    SampledFunction,
    SpectralData,
    cumulative_trapezoid,
    integrate_product,
    make_polynomial_pair,
    poly_derivative,
    poly_eval,
    poly_roots,
    principal_sqrt,
)
from slpoly.errors import CommonRoot, DegreeMismatch, GridMismatch, NonMonic, ValidationError

small = st.floats(-5, 5, allow_nan=False)
cplx = st.builds(complex, small, small)


class TestGrid:
    def test_endpoints_exact(self):
        x = Grid(2048).points
        assert x[0] == 0.0 and x[-1] == np.pi
        assert np.allclose(np.diff(x), np.pi / 2048, rtol=0, atol=1e-14)

    def test_minimum_size(self):
        Grid(15)
        with pytest.raises(ValidationError):
            Grid(14)


class TestSampledFunction:
    def test_shape_checked(self):
        with pytest.raises(GridMismatch):
            SampledFunction(Grid(32), np.zeros(10))

    def test_nonfinite_rejected(self):
        v = np.zeros(33)
        v[3] = np.nan
        with pytest.raises(ValidationError):
            SampledFunction(Grid(32), v)

    def test_values_read_only(self):
        f = SampledFunction.zeros(Grid(32))
        with pytest.raises(ValueError):
            f.values[0] = 1

    def test_subtraction_needs_same_grid(self):
        with pytest.raises(GridMismatch):
            SampledFunction.zeros(Grid(32)) - SampledFunction.zeros(Grid(64))


class TestPolynomials:
    def test_pair_constant(self):
        p = make_polynomial_pair([1], [0])
        assert p.degree == 0

    def test_pair_linear(self):
        p = make_polynomial_pair([2, 1], [1, 3])
        assert p.degree == 1
        assert p.r1_at(1.0) == 3 and p.r2_at(1.0) == 4

    def test_non_monic(self):
        with pytest.raises(NonMonic):
            make_polynomial_pair([0, 2], [1, 0])

    def test_r2_padded(self):
        p = make_polynomial_pair([0, 0, 1], [5])
        assert list(p.r2) == [5, 0, 0]

    def test_r2_too_long(self):
        with pytest.raises(DegreeMismatch):
            make_polynomial_pair([1], [0, 1])

    def test_common_root(self):
        with pytest.raises(CommonRoot):
            make_polynomial_pair([-1, 1], [2, -2])

    @pytest.mark.parametrize("p, lam, expected", [
        ([2, 1], 3, 5),
        ([1], 17 + 4j, 1),
        ([0, 0, 1], 2j, -4),
    ])
    def test_eval(self, p, lam, expected):
        assert poly_eval(p, lam) == expected

    @pytest.mark.parametrize("p, expected", [([2, 1], [1]), ([1], [0]), ([0, 0, 1], [0, 2])])
    def test_derivative(self, p, expected):
        assert list(poly_derivative(p)) == expected

    def test_roots(self):
        assert np.allclose(sorted(poly_roots([-2, -1, 1]).real), [-1, 2])
        assert poly_roots([0, 0]).size == 0

    def test_roots_ignore_negligible_leading_coefficient(self):
        with np.errstate(all="raise"):
            assert np.allclose(poly_roots([2, 1, 2.2250738585e-313]), [-2])

    @given(st.lists(cplx, min_size=1, max_size=5), cplx)
    def test_derivative_matches_central_difference(self, p, lam):
        lam = lam * 2  # |lam| <= 10
        h = 1e-5
        fd = (poly_eval(p, lam + h) - poly_eval(p, lam - h)) / (2 * h)
        exact = poly_eval(poly_derivative(p), lam)
        assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact)) * 10

    @given(st.lists(cplx, min_size=0, max_size=3), st.lists(cplx, min_size=1, max_size=4))
    @example([0j], [1j, 2.2250738585e-313j])
    def test_pair_roundtrip(self, lower, r2):
        r1 = lower + [1.0]
        r2 = r2[: len(r1)]
        try:
            p = make_polynomial_pair(r1, r2)
        except CommonRoot:
            return
        q = make_polynomial_pair(p.r1, p.r2)
        assert q == p


class TestQuadrature:
    def test_constant(self):
        g = Grid(64)
        one = SampledFunction(g, np.ones(65))
        assert integrate_product(one, one, 64) == pytest.approx(np.pi, abs=1e-14)

    def test_cos_squared(self):
        g = Grid(2048)
        c = SampledFunction.from_callable(g, np.cos)
        assert abs(integrate_product(c, c, g.m) - np.pi / 2) < 1e-6

    def test_upper_zero(self):
        g = Grid(32)
        c = SampledFunction.from_callable(g, np.cos)
        assert integrate_product(c, c, 0) == 0

    def test_bad_index(self):
        g = Grid(32)
        c = SampledFunction.zeros(g)
        with pytest.raises(GridMismatch):
            integrate_product(c, c, 33)

    def test_exact_for_linear(self):
        g = Grid(40)
        f = SampledFunction.from_callable(g, lambda x: 2 - 3 * x)
        one = SampledFunction(g, np.ones(41))
        x = g.points[25]
        assert integrate_product(f, one, 25) == pytest.approx(2 * x - 1.5 * x**2, abs=1e-13)

    @pytest.mark.parametrize("k, j", [(1, 2), (3, 3), (5, 8), (8, 8)])
    def test_second_order(self, k, j):
        # full-interval integrals of cos*cos are exact on this grid, so stop at 7 pi / 24
        def err(m):
            g = Grid(m)
            f = SampledFunction.from_callable(g, lambda x: np.cos(k * x))
            h = SampledFunction.from_callable(g, lambda x: np.cos(j * x))
            i = 7 * m // 24
            x = g.points[i]
            if k == j:
                exact = x / 2 + np.sin(2 * k * x) / (4 * k)
            else:
                exact = np.sin((k - j) * x) / (2 * (k - j)) + np.sin((k + j) * x) / (2 * (k + j))
            return abs(integrate_product(f, h, i) - exact)

        assert err(192) / err(384) >= 3.5

    def test_cumulative_matches_pointwise(self):
        g = Grid(48)
        f = SampledFunction.from_callable(g, np.sin)
        one = SampledFunction(g, np.ones(49))
        cum = cumulative_trapezoid(f.values, g.h)
        assert np.allclose(cum[[0, 10, 48]], [integrate_product(f, one, i) for i in (0, 10, 48)])


class TestSpectralData:
    def test_lambda_must_be_square(self):
        with pytest.raises(ValidationError):
            SpectralData(np.array([1.0]), np.array([2.0]))

    def test_kappa_for_neumann(self):
        d = SpectralData.from_rho(np.arange(5.0), np.r_[1 / np.pi, np.full(4, 2 / np.pi)])
        assert np.allclose(d.kappa(), 0)
        assert np.allclose(d.kappa0()[1:], 0)

    def test_truncated(self):
        d = SpectralData.from_rho(np.arange(5.0), np.ones(5), unperturbed_prefix=3)
        t = d.truncated(2)
        assert t.count == 2 and t.unperturbed_prefix == 2

    def test_principal_sqrt_branch(self):
        assert principal_sqrt(-4) == 2j
        assert principal_sqrt(4) == 2
        assert principal_sqrt(-4 - 1e-30j).real >= 0


def test_build_accepts_scalar_callable_and_array():
    g = Grid(32)
    a = BoundaryProblem.build(0.3, [1], [0], grid=g)
    b = BoundaryProblem.build(lambda x: 0.3 + 0 * x, [1], [0], grid=g)
    c = BoundaryProblem.build(np.full(33, 0.3), [1], [0], grid=g)
    assert np.array_equal(a.sigma.values, b.sigma.values)
    assert np.array_equal(a.sigma.values, c.sigma.values)
    assert a.M1 == 0

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from nbe import _pykernels
from nbe._backend import BACKEND, kernels
from nbe.numerics import (
    BesselUnderflowWarning,
    CholeskyError,
    DeltaLaplaceParams,
    DistancePattern,
    DomainError,
    MaternParams,
    RngStream,
    SingularMatrixError,
    bessel_k,
    cholesky,
    delta_laplace,
    derive_stream_id,
    forward_solve,
    gamma_quantile,
    gauss_to_delta_laplace,
    log_gamma,
    lower_incomplete_gamma,
    matern_corr_matrix,
    matern_cov,
    pairwise_distances,
    regularized_gamma,
    rng_stream,
    std_normal,
)


def half_integer_k(nu, x):
    pre = math.sqrt(math.pi / (2 * x)) * math.exp(-x)
    if nu == 0.5:
        return pre
    if nu == 1.5:
        return pre * (1 + 1 / x)
    if nu == 2.5:
        return pre * (1 + 3 / x + 3 / x**2)
    raise ValueError(nu)


class TestLogGamma:
    def test_trivial(self):
        assert log_gamma(1.0) == 0.0
        assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-14)

    def test_factorial(self):
        # 9! = 362880
        assert log_gamma(10.0) == pytest.approx(math.log(362880.0), rel=1e-13)
        assert log_gamma(10.0) == pytest.approx(12.80183, abs=1e-5)

    def test_against_scipy(self):
        x = np.geomspace(1e-6, 1e4, 200)
        np.testing.assert_allclose(log_gamma(x), special.gammaln(x), rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("bad", [0.0, -1.0, -0.5])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            log_gamma(bad)


class TestIncompleteGamma:
    def test_exponential_case(self):
        x = np.array([0.1, 1.0, 3.0, 10.0])
        np.testing.assert_allclose(lower_incomplete_gamma(1.0, x), -np.expm1(-x), rtol=1e-12)

    def test_zero_upper_limit(self):
        assert lower_incomplete_gamma(2.5, 0.0) == 0.0

    def test_half_one(self):
        val = lower_incomplete_gamma(0.5, 1.0)
        assert val == pytest.approx(math.sqrt(math.pi) * math.erf(1.0), rel=1e-12)
        quad, _ = integrate.quad(lambda t: t**-0.5 * math.exp(-t), 0, 1)
        assert val == pytest.approx(quad, rel=1e-9)
        assert val == pytest.approx(1.49365, abs=1e-5)

    def test_against_scipy(self):
        a = np.repeat([0.05, 0.3, 1.0, 2.5, 7.0, 30.0, 200.0], 8)
        x = np.tile([1e-3, 0.1, 0.9, 2.0, 6.0, 25.0, 80.0, 300.0], 7)
        P, Q = regularized_gamma(a, x)
        np.testing.assert_allclose(P, special.gammainc(a, x), rtol=1e-10, atol=1e-300)
        np.testing.assert_allclose(Q, special.gammaincc(a, x), rtol=1e-10, atol=1e-300)
        small = a <= 30
        np.testing.assert_allclose(
            lower_incomplete_gamma(a[small], x[small]),
            special.gammainc(a[small], x[small]) * special.gamma(a[small]),
            rtol=1e-10,
        )

    def test_domain(self):
        with pytest.raises(DomainError):
            lower_incomplete_gamma(0.0, 1.0)
        with pytest.raises(DomainError):
            lower_incomplete_gamma(1.0, -1.0)


class TestGammaQuantile:
    def test_exponential_median(self):
        assert gamma_quantile(0.5, 1.0, 1.0) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_zero(self):
        assert gamma_quantile(0.0, 3.0, 2.0) == 0.0

    @pytest.mark.parametrize("mod", [_pykernels, kernels])
    def test_kernel_broadcasts_scalar_shape(self, mod):
        p = np.array([0.1, 0.5, 0.9])
        got = mod.gamma_quantile(0.7, p, 1.0 - p)
        np.testing.assert_allclose(got, special.gammaincinv(0.7, p), rtol=1e-12)

    def test_shape_two_median(self):
        # frozen from bisection on the regularized incomplete gamma
        assert gamma_quantile(0.5, 2.0, 1.0) == pytest.approx(1.67834699001666, rel=1e-12)
        assert gamma_quantile(0.5, 2.0) == pytest.approx(special.gammaincinv(2.0, 0.5), rel=1e-12)

    def test_against_scipy(self):
        p = np.array([1e-10, 1e-4, 0.01, 0.3, 0.5, 0.77, 0.99, 1 - 1e-9])
        for a in (0.02, 0.5, 1.0, 3.3, 50.0):
            np.testing.assert_allclose(
                gamma_quantile(p, a, 2.0), 2.0 * special.gammaincinv(a, p), rtol=1e-9
            )

    @given(
        p=st.floats(0.0, 0.999999),
        a=st.floats(0.05, 100.0),
        s=st.floats(0.1, 10.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_inverts_cdf(self, p, a, s):
        q = gamma_quantile(p, a, s)
        P, _ = regularized_gamma(a, q / s)
        assert abs(P - p) <= 1e-9

    @pytest.mark.parametrize("bad", [-0.1, 1.0, 1.5])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            gamma_quantile(bad, 1.0)


class TestStdNormal:
    def test_examples(self):
        assert std_normal("cdf", 0.0) == 0.5
        assert std_normal("cdf", 1.959964) == pytest.approx(0.975, abs=1e-8)
        assert std_normal("quantile", 0.5) == 0.0

    def test_against_scipy(self):
        x = np.linspace(-37, 8, 400)  # below -37.5 the cdf is subnormal
        # deep-tail values carry the rounding of exp(-x^2/2), about 1e-13 relative
        np.testing.assert_allclose(std_normal("cdf", x), special.ndtr(x), rtol=5e-13, atol=1e-300)
        p = np.concatenate([np.geomspace(1e-300, 0.5, 200), 1 - np.geomspace(1e-15, 0.5, 100)])
        np.testing.assert_allclose(std_normal("quantile", p), special.ndtri(p), rtol=1e-12, atol=1e-15)

    @given(st.floats(-6.0, 6.0))
    @settings(max_examples=300, deadline=None)
    def test_round_trip(self, x):
        assert abs(std_normal("quantile", std_normal("cdf", x)) - x) <= 1e-8

    def test_monotone(self):
        x = np.linspace(-10, 10, 2001)
        assert np.all(np.diff(std_normal("cdf", x)) >= 0)

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 2.0])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            std_normal("quantile", bad)

    def test_bad_mode(self):
        with pytest.raises(DomainError):
            std_normal("pdf", 0.0)


class TestBessel:
    def test_half_integer_examples(self):
        assert bessel_k(0.5, 1.0) == pytest.approx(math.sqrt(math.pi / 2) * math.exp(-1), rel=1e-14)
        assert bessel_k(0.5, 1.0) == pytest.approx(0.4610685, abs=1e-7)
        assert bessel_k(1.5, 1.0) == pytest.approx(0.9221371, abs=1e-7)

    def test_order_one_by_quadrature(self):
        quad, _ = integrate.quad(lambda t: math.exp(-math.cosh(t)) * math.cosh(t), 0, 30, epsabs=1e-14)
        assert bessel_k(1.0, 1.0) == pytest.approx(quad, rel=1e-10)
        assert bessel_k(1.0, 1.0) == pytest.approx(0.6019072, abs=1e-7)

    @pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
    @pytest.mark.parametrize("x", [0.1, 1.0, 5.0, 20.0])
    def test_half_integer_closed_forms(self, nu, x):
        assert bessel_k(nu, x) == pytest.approx(half_integer_k(nu, x), rel=1e-10)

    def test_against_scipy_grid(self):
        nu = np.linspace(0, 10, 41)
        x = np.geomspace(1e-6, 50, 60)
        for v in nu:
            np.testing.assert_allclose(bessel_k(v, x), special.kv(v, x), rtol=1e-9)

    def test_near_crossover(self):
        x = np.array([1.999999, 2.0, 2.000001])
        for v in (0.0, 0.3, 1.7, 4.2):
            np.testing.assert_allclose(bessel_k(v, x), special.kv(v, x), rtol=1e-12)

    def test_underflow_flag(self):
        with pytest.warns(BesselUnderflowWarning):
            out = bessel_k(0.5, 1e4)
        assert out == 0.0

    def test_domain(self):
        with pytest.raises(DomainError):
            bessel_k(1.0, 0.0)
        with pytest.raises(DomainError):
            bessel_k(-1.0, 1.0)


class TestMatern:
    def test_examples(self):
        assert matern_cov(0.0, MaternParams(2.0, 1.3, 1.7)) == 1.7
        assert matern_cov(1.0, MaternParams(1.0, 0.5, 1.0)) == pytest.approx(math.exp(-1), rel=1e-13)
        assert matern_cov(1.0, MaternParams(1.0, 1.5, 1.0)) == pytest.approx(2 * math.exp(-1), rel=1e-13)

    def test_nonincreasing_and_bounded(self):
        rng = np.random.default_rng(0)
        h = np.linspace(0, 30, 100)
        for _ in range(20):
            par = MaternParams(rng.uniform(0.5, 10), rng.uniform(0.3, 4), rng.uniform(0.2, 3))
            c = matern_cov(h, par)
            assert np.all(np.diff(c) <= 1e-15)
            assert np.all(c > 0)
            assert np.all(c <= par.sigma2)

    def test_small_distance_continuity(self):
        par = MaternParams(3.0, 2.2, 1.0)
        assert matern_cov(1e-9, par) == pytest.approx(1.0, abs=1e-12)

    def test_invalid_params(self):
        with pytest.raises(DomainError):
            MaternParams(0.0, 1.0)
        with pytest.raises(DomainError):
            MaternParams(1.0, -1.0)
        with pytest.raises(DomainError):
            matern_cov(-1.0, MaternParams(1.0, 1.0))

    def test_corr_matrix(self):
        locs = np.array([[0, 0], [1, 0], [0, 2], [3, 3]], dtype=float)
        d = pairwise_distances(locs)
        C = matern_corr_matrix(d, 2.0, 1.2)
        ref = np.vectorize(lambda h: matern_cov(h, MaternParams(2.0, 1.2)))(d)
        np.testing.assert_allclose(C, ref, rtol=1e-14)
        np.testing.assert_array_equal(C, matern_corr_matrix(DistancePattern(d), 2.0, 1.2))
        assert np.all(np.diag(C) == 1.0)


def random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A.T @ A + n * np.eye(n)


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(4)), np.eye(4))

    def test_two_by_two(self):
        L = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
        np.testing.assert_allclose(L, [[2, 0], [1, math.sqrt(2)]], atol=1e-15)

    def test_indefinite_reports_pivot(self):
        with pytest.raises(CholeskyError) as exc:
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert exc.value.pivot == 2

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(1, 30))
            A = random_spd(rng, n)
            L = cholesky(A)
            assert np.all(np.triu(L, 1) == 0)
            assert np.all(np.diag(L) > 0)
            err = np.max(np.abs(L @ L.T - A).sum(axis=1)) / np.max(np.abs(A).sum(axis=1))
            assert err <= 1e-10

    def test_matches_numpy(self):
        A = random_spd(np.random.default_rng(2), 20)
        np.testing.assert_allclose(cholesky(A), np.linalg.cholesky(A), rtol=1e-10, atol=1e-12)

    def test_rejects_asymmetric(self):
        with pytest.raises(DomainError):
            cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))

    def test_rejects_nonsquare(self):
        with pytest.raises(DomainError):
            cholesky(np.ones((2, 3)))


class TestForwardSolve:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.5])
        np.testing.assert_array_equal(forward_solve(np.eye(3), b), b)

    def test_hand_example(self):
        r2 = math.sqrt(2)
        u = forward_solve(np.array([[2.0, 0.0], [1.0, r2]]), np.array([2.0, 1 + r2]))
        np.testing.assert_allclose(u, [1.0, 1.0], rtol=1e-15)

    def test_dim_mismatch(self):
        with pytest.raises(DomainError):
            forward_solve(np.eye(3), np.ones(2))

    def test_singular(self):
        with pytest.raises(SingularMatrixError):
            forward_solve(np.array([[1.0, 0.0], [1.0, 0.0]]), np.ones(2))

    def test_residual(self):
        rng = np.random.default_rng(3)
        L = cholesky(random_spd(rng, 40))
        b = rng.normal(size=(40, 5))
        u = forward_solve(L, b)
        assert np.max(np.abs(L @ u - b)) <= 1e-10 * np.max(np.abs(b))


class TestDeltaLaplace:
    def test_examples(self):
        unit = DeltaLaplaceParams(0.0, 1.0, 1.0)
        assert delta_laplace("pdf", 0.0, unit) == pytest.approx(0.5, rel=1e-15)
        par = DeltaLaplaceParams(1.3, 0.7, 1.8)
        assert delta_laplace("quantile", 0.5, par) == pytest.approx(1.3, abs=1e-15)
        assert delta_laplace("quantile", 0.975, unit) == pytest.approx(-math.log(0.05), rel=1e-12)

    def test_against_gennorm(self):
        y = np.linspace(-6, 6, 61)
        for mu, tau, d in [(0, 1, 1), (0.5, 2, 1.5), (-1, 0.6, 0.8), (2, 1.5, 3.0)]:
            par = DeltaLaplaceParams(mu, tau, d)
            ref = stats.gennorm(d, loc=mu, scale=tau)
            np.testing.assert_allclose(delta_laplace("pdf", y, par), ref.pdf(y), rtol=1e-12)
            np.testing.assert_allclose(delta_laplace("cdf", y, par), ref.cdf(y), rtol=1e-10, atol=1e-300)
            p = np.linspace(0.01, 0.99, 33)
            np.testing.assert_allclose(delta_laplace("quantile", p, par), ref.ppf(p), rtol=1e-9, atol=1e-12)

    @given(
        y=st.floats(-15, 15),
        mu=st.floats(-2, 2),
        tau=st.floats(0.2, 3),
        delta=st.floats(0.5, 3),
    )
    @settings(max_examples=300, deadline=None)
    def test_round_trip(self, y, mu, tau, delta):
        par = DeltaLaplaceParams(mu, tau, delta)
        p = delta_laplace("cdf", y, par)
        # beyond this the double p itself no longer pins y down to 1e-8
        if min(p, 1 - p) < 1e-6:
            return
        assert abs(delta_laplace("quantile", p, par) - y) <= 1e-8 * max(1.0, abs(y))

    def test_gauss_transform_tails(self):
        y = np.array([-30.0, -8.0, 0.0, 8.0, 30.0])
        out = gauss_to_delta_laplace(y, 0.0, 1.0, 1.0)
        assert np.all(np.isfinite(out))
        assert np.all(np.diff(out) > 0)
        mid = gauss_to_delta_laplace(np.array([-1.0, 0.5]), 0.0, 1.0, 1.0)
        ref = stats.laplace.ppf(stats.norm.cdf([-1.0, 0.5]))
        np.testing.assert_allclose(mid, ref, rtol=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            DeltaLaplaceParams(0.0, 0.0, 1.0)
        with pytest.raises(DomainError):
            delta_laplace("quantile", 1.0, DeltaLaplaceParams())


class TestRngStream:
    def test_determinism(self):
        a, b = rng_stream(42, 7), rng_stream(42, 7)
        np.testing.assert_array_equal(a.uniform01(1000), b.uniform01(1000))
        np.testing.assert_array_equal(a.std_normal(1000), b.std_normal(1000))

    def test_distinct_streams_differ(self):
        a, b = RngStream(42, 1), RngStream(42, 2)
        x, y = a.uniform01(1000), b.uniform01(1000)
        assert not np.array_equal(x, y)
        assert abs(np.corrcoef(x, y)[0, 1]) < 0.1

    def test_uniform_range(self):
        u = RngStream(0, 0).uniform01(100_000)
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_exponential_mean(self):
        e = RngStream(3, 9).exponential(1_000_000)
        assert 0.997 <= e.mean() <= 1.003

    def test_counter(self):
        s = RngStream(1, 1)
        s.uniform01(10)
        s.std_normal((2, 3))
        s.exponential()
        assert s.counter == 17

    def test_stream_ids(self):
        assert derive_stream_id("a", 1) == derive_stream_id("a", 1)
        assert derive_stream_id("a", 1) != derive_stream_id("a", 2)
        assert 0 <= derive_stream_id("x") < 2**64


@pytest.mark.skipif(BACKEND != "cython", reason="compiled kernels not built")
class TestBackendsAgree:
    def test_bessel(self):
        x = np.geomspace(1e-6, 50, 300)
        for nu in (0.0, 0.4, 1.0, 2.5, 7.3):
            np.testing.assert_allclose(kernels.bessel_k(nu, x), _pykernels.bessel_k(nu, x), rtol=1e-13)

    def test_gamma(self):
        a = np.repeat([0.1, 1.0, 4.5, 60.0], 5)
        x = np.tile([0.01, 0.5, 3.0, 20.0, 100.0], 4)
        for u, v in zip(kernels.gamma_pq(a, x), _pykernels.gamma_pq(a, x)):
            np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-300)
        p = np.tile([1e-6, 0.2, 0.5, 0.9, 0.999], 4)
        np.testing.assert_allclose(
            kernels.gamma_quantile(a, p, 1 - p), _pykernels.gamma_quantile(a, p, 1 - p), rtol=1e-12
        )

    def test_normal(self):
        x = np.linspace(-20, 8, 200)
        np.testing.assert_allclose(kernels.norm_cdf(x), _pykernels.norm_cdf(x), rtol=1e-14)
        p = np.linspace(1e-6, 1 - 1e-6, 200)
        np.testing.assert_allclose(kernels.norm_quantile(p), _pykernels.norm_quantile(p), rtol=1e-14)

    def test_linear_algebra(self):
        A = random_spd(np.random.default_rng(5), 25)
        L1, L2 = kernels.cholesky(A), _pykernels.cholesky(A)
        np.testing.assert_allclose(L1, L2, rtol=1e-13, atol=1e-14)
        b = np.arange(25.0)
        np.testing.assert_allclose(kernels.forward_solve(L1, b), _pykernels.forward_solve(L2, b), rtol=1e-12)

    def test_cholesky_error_pivot(self):
        for mod in (kernels, _pykernels):
            with pytest.raises(CholeskyError) as exc:
                mod.cholesky(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 2.0], [0.0, 2.0, 1.0]]))
            assert exc.value.pivot == 3

    def test_delta_laplace(self):
        y = np.linspace(-10, 10, 101)
        m, t, d = np.zeros(101), np.full(101, 1.3), np.full(101, 1.7)
        np.testing.assert_allclose(
            kernels.delta_laplace_cdf(y, m, t, d), _pykernels.delta_laplace_cdf(y, m, t, d), rtol=1e-13
        )
        np.testing.assert_allclose(
            kernels.gauss_to_delta_laplace(y, m, t, d),
            _pykernels.gauss_to_delta_laplace(y, m, t, d),
            rtol=1e-12,
        )

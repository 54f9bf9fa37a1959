import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, special
from scipy.stats import multivariate_normal

from nbe import models
from nbe import numerics as nm
from nbe._errors import DomainError
from nbe.likelihood import (
    MapEstimator,
    MapProblem,
    NelderMeadConfig,
    PairIndex,
    gp_loglik,
    gp_map_problem,
    map_estimate,
    nelder_mead,
    pairwise_loglik,
    schlather_bivariate_logdensity,
    schlather_exponent,
    schlather_pmap_problem,
)
from nbe.models import GPParams, ReplicateSet, SchlatherParams, SpatialDomain
from nbe.numerics import MaternParams, RngStream


def matern_oracle(h, rho, nu):
    h = np.asarray(h, dtype=float)
    x = h / rho
    with np.errstate(invalid="ignore"):
        c = 2 ** (1 - nu) / special.gamma(nu) * x**nu * special.kv(nu, x)
    return np.where(h == 0, 1.0, c)


def gp_oracle(theta, z, locs):
    d = np.sqrt(((locs[:, None, :] - locs[None, :, :]) ** 2).sum(-1))
    S = matern_oracle(d, theta.matern.rho, theta.matern.nu) + theta.sigma_eps**2 * np.eye(len(locs))
    return multivariate_normal(np.zeros(len(locs)), S).logpdf(z)


class TestGPLoglik:
    def test_scalar(self):
        dom = SpatialDomain(np.zeros((1, 2)))
        th = GPParams(0.0, MaternParams(1.0, 1.0))
        assert gp_loglik(th, np.zeros(1), dom) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
        assert gp_loglik(th, np.zeros(1), dom) == pytest.approx(-0.918939, abs=1e-6)

    def test_three_by_three_brute_force(self):
        locs = np.array([[0.0, 0.0], [1.0, 0.5], [2.0, 3.0]])
        th = GPParams(0.4, MaternParams(2.5, 1.5))
        z = np.array([0.3, -1.2, 0.8])
        d = np.sqrt(((locs[:, None] - locs[None]) ** 2).sum(-1))
        S = matern_oracle(d, 2.5, 1.5) + 0.16 * np.eye(3)
        # explicit cofactor inverse and determinant
        det = (S[0, 0] * (S[1, 1] * S[2, 2] - S[1, 2] * S[2, 1])
               - S[0, 1] * (S[1, 0] * S[2, 2] - S[1, 2] * S[2, 0])
               + S[0, 2] * (S[1, 0] * S[2, 1] - S[1, 1] * S[2, 0]))
        adj = np.array([[np.linalg.det(np.delete(np.delete(S, i, 0), j, 1)) * (-1) ** (i + j)
                         for i in range(3)] for j in range(3)])
        expect = -0.5 * math.log(det) - 0.5 * z @ (adj / det) @ z - 1.5 * math.log(2 * math.pi)
        got = gp_loglik(th, z, SpatialDomain(locs))
        assert got == pytest.approx(expect, rel=1e-10)

    def test_random_dense(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(1, 7))
            locs = rng.uniform(0, 5, (n, 2))
            th = GPParams(rng.uniform(0.1, 1), MaternParams(rng.uniform(0.5, 5), rng.uniform(0.5, 3)))
            z = rng.normal(size=n)
            assert gp_loglik(th, z, SpatialDomain(locs)) == pytest.approx(gp_oracle(th, z, locs), rel=1e-10)

    def test_sum_over_replicates(self):
        dom = SpatialDomain.grid(3)
        th = GPParams(0.5, MaternParams(3.0, 1.0))
        Z = np.random.default_rng(2).normal(size=(9, 6))
        total = gp_loglik(th, Z, dom)
        parts = sum(gp_loglik(th, Z[:, i], dom) for i in range(6))
        assert total == pytest.approx(parts, rel=1e-12)
        assert gp_loglik(th, ReplicateSet(Z, "gp"), dom) == total

    def test_pattern_matches_matrix(self):
        dom = SpatialDomain.grid(3)
        th = GPParams(0.5, MaternParams(3.0, 1.0))
        z = np.arange(9.0) / 9
        a = gp_loglik(th, z, dom.distances())
        b = gp_loglik(th, z, nm.DistancePattern(dom.distances()))
        assert a == pytest.approx(b, rel=1e-14)

    def test_wrong_size(self):
        with pytest.raises(DomainError):
            gp_loglik(GPParams(0.5, MaternParams(1, 1)), np.zeros(4), SpatialDomain.grid(3))


def exp_V_oracle(z1, z2, psi):
    s = math.sqrt(z1 * z1 - 2 * z1 * z2 * psi + z2 * z2)
    return 0.5 * (1 / z1 + 1 / z2) * (1 + s / (z1 + z2))


class TestSchlatherExponent:
    def test_complete_dependence(self):
        for z in (0.1, 1.0, 7.5):
            assert schlather_exponent(z, z, 1.0)[0] == pytest.approx(1 / z, rel=1e-15)

    def test_independent_gaussians(self):
        assert schlather_exponent(1.0, 1.0, 0.0)[0] == pytest.approx(1 + math.sqrt(2) / 2, rel=1e-14)
        assert schlather_exponent(1.0, 1.0, 0.0)[0] == pytest.approx(1.70711, abs=1e-5)

    @given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(-0.99, 1.0), st.floats(0.01, 100))
    @settings(max_examples=200, deadline=None)
    def test_homogeneity(self, z1, z2, psi, t):
        V = schlather_exponent(z1, z2, psi)[0]
        Vt = schlather_exponent(t * z1, t * z2, psi)[0]
        assert Vt == pytest.approx(V / t, rel=1e-12)
        assert V > 0 and 0 < math.exp(-V) < 1 or math.exp(-V) == 0.0

    def test_partials_by_finite_difference(self):
        z1, z2, psi, h = 1.3, 0.7, 0.4, 1e-5
        V, V1, V2, V12 = schlather_exponent(z1, z2, psi)
        assert V == pytest.approx(exp_V_oracle(z1, z2, psi), rel=1e-14)
        f = lambda a, b: exp_V_oracle(a, b, psi)
        assert V1 == pytest.approx((f(z1 + h, z2) - f(z1 - h, z2)) / (2 * h), rel=1e-7)
        assert V2 == pytest.approx((f(z1, z2 + h) - f(z1, z2 - h)) / (2 * h), rel=1e-7)
        h2 = 1e-4
        fd12 = (f(z1 + h2, z2 + h2) - f(z1 + h2, z2 - h2) - f(z1 - h2, z2 + h2) + f(z1 - h2, z2 - h2)) / (4 * h2 * h2)
        assert V12 == pytest.approx(fd12, rel=1e-5)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 0.5), (1.0, -1.0, 0.5), (1.0, 1.0, 1.5), (1.0, 1.0, -1.0)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            schlather_exponent(*args)


class TestSchlatherDensity:
    @staticmethod
    def cdf(z1, z2, psi):
        return math.exp(-exp_V_oracle(z1, z2, psi))

    def test_finite_difference_of_cdf(self):
        z1 = z2 = 1.0
        psi, h = 0.5, 1e-4
        F = lambda a, b: self.cdf(a, b, psi)
        fd = (F(z1 + h, z2 + h) - F(z1 + h, z2 - h) - F(z1 - h, z2 + h) + F(z1 - h, z2 - h)) / (4 * h * h)
        dens = math.exp(schlather_bivariate_logdensity(z1, z2, psi))
        assert dens == pytest.approx(fd, rel=1e-4)

    @given(st.floats(0.05, 50), st.floats(0.05, 50), st.floats(-0.99, 0.999))
    @settings(max_examples=200, deadline=None)
    def test_symmetry(self, z1, z2, psi):
        a = schlather_bivariate_logdensity(z1, z2, psi)
        b = schlather_bivariate_logdensity(z2, z1, psi)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)

    def test_rectangle_mass(self):
        # the mass of [0.01, 50]^2 is a CDF rectangle, about 0.97 at psi = 0.5
        psi, lo, hi = 0.5, 0.01, 50.0
        dens = lambda y, x: math.exp(schlather_bivariate_logdensity(math.exp(x), math.exp(y), psi) + x + y)
        mass, _ = integrate.dblquad(dens, math.log(lo), math.log(hi), math.log(lo), math.log(hi), epsabs=1e-10)
        F = lambda a, b: self.cdf(a, b, psi)
        expect = F(hi, hi) - F(lo, hi) - F(hi, lo) + F(lo, lo)
        assert mass == pytest.approx(expect, abs=1e-6)

    def test_total_mass(self):
        psi, lo, hi = 0.5, 1e-3, 1e5
        dens = lambda y, x: math.exp(schlather_bivariate_logdensity(math.exp(x), math.exp(y), psi) + x + y)
        mass, _ = integrate.dblquad(dens, math.log(lo), math.log(hi), math.log(lo), math.log(hi), epsabs=1e-10)
        assert mass == pytest.approx(1.0, abs=0.01)

    def test_psi_clamped_at_one(self):
        assert np.isfinite(schlather_bivariate_logdensity(1.0, 2.0, 1.0))

    def test_vectorised(self):
        out = schlather_bivariate_logdensity(np.array([1.0, 2.0]), np.array([0.5, 3.0]), 0.3)
        assert out.shape == (2,)
        assert out[1] == schlather_bivariate_logdensity(2.0, 3.0, 0.3)


class TestPairwiseLoglik:
    def setup_method(self):
        self.dom = SpatialDomain.grid(3)
        self.theta = SchlatherParams(MaternParams(3.0, 1.0))
        self.Z = np.exp(np.random.default_rng(4).gumbel(size=(9, 5)))

    def brute(self, Z, cutoff):
        d = self.dom.distances()
        tot = 0.0
        for r in range(Z.shape[1]):
            for i in range(9):
                for j in range(i + 1, 9):
                    if d[i, j] <= cutoff:
                        psi = matern_oracle(d[i, j], 3.0, 1.0)
                        tot += schlather_bivariate_logdensity(Z[i, r], Z[j, r], psi)
        return tot

    def test_full_cutoff(self):
        got = pairwise_loglik(self.theta, self.Z, self.dom, cutoff=100.0)
        assert got == pytest.approx(self.brute(self.Z, 100.0), rel=1e-10)

    def test_cutoff_subset(self):
        got = pairwise_loglik(self.theta, self.Z, self.dom, cutoff=1.5)
        assert got == pytest.approx(self.brute(self.Z, 1.5), rel=1e-10)
        assert PairIndex.build(self.dom, 1.5).i.size == 20

    def test_two_locations(self):
        dom = SpatialDomain(np.array([[0.0, 0.0], [1.0, 1.0]]))
        z = np.array([0.8, 2.0])
        psi = matern_oracle(math.sqrt(2), 3.0, 1.0)
        expect = schlather_bivariate_logdensity(0.8, 2.0, psi)
        assert pairwise_loglik(self.theta, z, dom) == pytest.approx(expect, rel=1e-12)

    def test_no_pairs(self):
        with pytest.raises(DomainError, match="no pairs"):
            pairwise_loglik(self.theta, self.Z, self.dom, cutoff=0.5)

    def test_replicate_order_exact(self):
        perm = np.random.default_rng(0).permutation(5)
        a = pairwise_loglik(self.theta, self.Z, self.dom)
        assert pairwise_loglik(self.theta, self.Z[:, perm], self.dom) == a

    def test_additive(self):
        a = pairwise_loglik(self.theta, self.Z[:, :2], self.dom)
        b = pairwise_loglik(self.theta, self.Z[:, 2:], self.dom)
        assert pairwise_loglik(self.theta, self.Z, self.dom) == pytest.approx(a + b, rel=1e-14)

    def test_log_gumbel_tag(self):
        rs = ReplicateSet(np.log(self.Z), "schlather", "log_gumbel")
        a = pairwise_loglik(self.theta, rs, self.dom)
        assert a == pytest.approx(pairwise_loglik(self.theta, self.Z, self.dom), rel=1e-13)


def rosenbrock(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


class TestNelderMead:
    def test_quadratic(self):
        x, f = nelder_mead(lambda x: (x[0] - 2) ** 2, [0.0])
        assert abs(x[0] - 2) < 1e-6

    def test_rosenbrock(self):
        calls = []
        x, f = nelder_mead(lambda x: calls.append(1) or rosenbrock(x), [-1.2, 1.0],
                           NelderMeadConfig(ftol=1e-12, max_iter=2000))
        assert f < 1e-6
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-2)

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=2), st.floats(0.1, 5))
    @settings(max_examples=50, deadline=None)
    def test_bounded(self, target, width):
        bounds = [(-width, width), (0.0, 2 * width)]
        obj = lambda x: float(np.sum((x - np.array(target)) ** 2))
        x0 = [0.0, width]
        x, f = nelder_mead(obj, x0, NelderMeadConfig(bounds=bounds))
        for v, (lo, hi) in zip(x, bounds):
            assert lo <= v <= hi
        assert f <= obj(np.array(x0))

    def test_never_worse_than_start(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            c = rng.normal(size=3)
            obj = lambda x: float(np.sum(np.abs(x - c)) + np.sin(5 * x).sum())
            x0 = rng.normal(size=3)
            _, f = nelder_mead(obj, x0, NelderMeadConfig(max_iter=50))
            assert f <= obj(x0)

    def test_nonfinite_start(self):
        with pytest.raises(DomainError):
            nelder_mead(lambda x: math.nan, [0.0])

    def test_config(self):
        with pytest.raises(DomainError):
            NelderMeadConfig(ftol=0)
        with pytest.raises(DomainError):
            NelderMeadConfig(bounds=[(1, 0)])


class TestMap:
    def setup_method(self):
        self.dom = SpatialDomain.grid(2)
        self.sig = 0.3
        par = GPParams(self.sig, MaternParams(1.2, 1.0))
        self.Z = models.simulate_gp(par, self.dom, 30, RngStream(8)).data

    def ll(self, theta, Z):
        return gp_loglik(GPParams(self.sig, MaternParams(float(theta[0]), 1.0)), Z, self.dom)

    def test_flat_prior_is_mle(self):
        prob = MapProblem(self.ll, lambda t: 0.0, [(0.1, 10.0)])
        x = map_estimate(prob, self.Z, [2.0])
        grid = np.linspace(0.1, 10.0, 2001)
        vals = [-self.ll([g], self.Z) for g in grid]
        k = int(np.argmin(vals))
        ref = optimize.minimize_scalar(lambda r: -self.ll([r], self.Z), bounds=(grid[k - 1], grid[k + 1]),
                                       method="bounded", options={"xatol": 1e-8}).x
        assert abs(x[0] - ref) < 1e-3

    def test_constant_prior_shift(self):
        a = map_estimate(MapProblem(self.ll, lambda t: 0.0, [(0.1, 10.0)]), self.Z, [2.0])
        b = map_estimate(MapProblem(self.ll, lambda t: 123.4, [(0.1, 10.0)]), self.Z, [2.0])
        assert abs(a[0] - b[0]) < 1e-4

    def test_init_outside_bounds(self):
        with pytest.raises(DomainError):
            map_estimate(MapProblem(self.ll, lambda t: 0.0, [(0.1, 10.0)]), self.Z, [20.0])

    def test_gp_problem_from_truth(self):
        mod = models.GaussianProcess(side=4)
        th = np.array([0.4, 5.0, 1.5])
        Z = mod.simulate(th, 40, RngStream(9))
        prob = gp_map_problem(mod)
        est = MapEstimator(prob)(Z, init=th)
        f = prob.objective(Z)
        assert f(est) <= f(th)
        for v, (lo, hi) in zip(est, mod.prior.bounds()):
            assert lo <= v <= hi
        assert abs(est[0] - 0.4) < 0.1

    def test_pmap_improves_objective(self):
        mod = models.Schlather(side=4)
        th = np.array([4.0, 1.0])
        Z = mod.simulate(th, 20, RngStream(10))
        prob = schlather_pmap_problem(mod)
        est = MapEstimator(prob, init=th)(Z)
        f = prob.objective(Z)
        assert f(est) <= f(th)
        assert math.isfinite(f(est))

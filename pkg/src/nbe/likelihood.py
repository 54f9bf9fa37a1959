"""Likelihood-based baselines.

Exact Gaussian-process log-likelihood, the bivariate density of Schlather's
max-stable model, the pairwise log-likelihood with a distance cutoff, a
bounded Nelder-Mead optimiser and the (pairwise) MAP estimator built on
them.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from ._errors import DomainError
from .models import GPParams, ReplicateSet, SchlatherParams, invert_transform

LOG_2PI = math.log(2.0 * math.pi)
PSI_MAX = 1.0 - 1e-12


# ---------------------------------------------------------------------------
# Gaussian process
# ---------------------------------------------------------------------------


def _dist(domain):
    if isinstance(domain, (np.ndarray, nm.DistancePattern)):
        return domain
    return domain.distances()


def gp_loglik(theta, z, domain):
    """Gaussian log-likelihood of one replicate (n-vector) or the sum over an n x m array.

    Computed as -(n/2) log 2 pi - sum log L_jj - u'u/2 with L u = z.
    """
    d = _dist(domain)
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    n = d.n if isinstance(d, nm.DistancePattern) else d.shape[0]
    if z.shape[0] != n:
        raise DomainError(f"data have {z.shape[0]} rows but the domain has {n} locations")
    S = nm.matern_corr_matrix(d, theta.matern.rho, theta.matern.nu) * theta.matern.sigma2
    S[np.diag_indices(n)] += theta.sigma_eps**2
    L = nm.cholesky(S, check=False)
    u = nm.forward_solve(L, z)
    m = 1 if z.ndim == 1 else z.shape[1]
    return float(-0.5 * n * m * LOG_2PI - m * np.sum(np.log(np.diag(L))) - 0.5 * np.sum(u * u))


# ---------------------------------------------------------------------------
# Schlather's model
# ---------------------------------------------------------------------------


def schlather_exponent(z1, z2, psi):
    """Exponent function V and its partial derivatives V1, V2, V12."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if not (np.all(z1 > 0) and np.all(z2 > 0)):
        raise DomainError("Schlather exponent needs z1, z2 > 0")
    if not (np.all(psi > -1) and np.all(psi <= 1)):
        raise DomainError("Schlather exponent needs psi in (-1, 1]")
    s = np.sqrt(np.maximum(z1 * z1 - 2.0 * z1 * z2 * psi + z2 * z2, 0.0))
    V = (1.0 / z1 + 1.0 / z2) * (1.0 - 0.5 * (1.0 - s / (z1 + z2)))
    with np.errstate(divide="ignore", invalid="ignore"):
        V1 = -0.5 / (z1 * z1) + 0.5 * (psi / z1 - z2 / (z1 * z1)) / s
        V2 = -0.5 / (z2 * z2) + 0.5 * (psi / z2 - z1 / (z2 * z2)) / s
        V12 = -0.5 * (1.0 - psi * psi) / s**3
    return V, V1, V2, V12


def schlather_bivariate_logdensity(z1, z2, psi):
    """log[(V1 V2 - V12) exp(-V)]; psi is clamped to at most 1 - 1e-12."""
    psi = np.minimum(np.asarray(psi, dtype=np.float64), PSI_MAX)
    V, V1, V2, V12 = schlather_exponent(z1, z2, psi)
    bracket = V1 * V2 - V12
    if not np.all(bracket > 0):
        raise DomainError("Schlather density bracket V1*V2 - V12 is not positive")
    out = np.log(bracket) - V
    return float(out) if out.ndim == 0 else out


@dataclass
class PairIndex:
    """Location pairs (j < j') no further apart than ``cutoff``."""

    i: np.ndarray
    j: np.ndarray
    h: np.ndarray

    @classmethod
    def build(cls, domain, cutoff=3.0):
        d = _dist(domain)
        ii, jj = np.triu_indices(d.shape[0], 1)
        keep = d[ii, jj] <= cutoff
        if not keep.any():
            raise DomainError(f"no pairs within cutoff distance {cutoff}")
        return cls(ii[keep], jj[keep], d[ii, jj][keep])


def pairwise_loglik(theta, rs, domain, cutoff=3.0, pairs=None):
    """Sum over replicates and qualifying pairs of the bivariate log-density.

    Data tagged ``log_gumbel`` are mapped back to the unit Fréchet scale.
    """
    if pairs is None:
        pairs = PairIndex.build(domain, cutoff)
    if isinstance(rs, ReplicateSet):
        Z = invert_transform(rs.transform, rs.data)
    else:
        Z = np.asarray(rs, dtype=np.float64)
        Z = Z[:, None] if Z.ndim == 1 else Z
    psi = nm.matern_cov(pairs.h, nm.MaternParams(theta.matern.rho, theta.matern.nu, 1.0))
    ld = schlather_bivariate_logdensity(Z[pairs.i], Z[pairs.j], psi[:, None])
    # exactly rounded sum: invariant to replicate order
    return math.fsum(np.ravel(ld))


# ---------------------------------------------------------------------------
# Nelder-Mead
# ---------------------------------------------------------------------------


@dataclass
class NelderMeadConfig:
    scale: object = 0.5  # initial simplex step (per coordinate, in the search space)
    ftol: float = 1e-8
    max_iter: int = 5000
    bounds: object = None  # sequence of (lo, hi) or None

    def __post_init__(self):
        if not self.ftol > 0 or int(self.max_iter) < 1:
            raise DomainError("Nelder-Mead tolerances must be positive")
        if self.bounds is not None:
            for lo, hi in self.bounds:
                if not lo < hi:
                    raise DomainError(f"bounds must be ordered, got ({lo}, {hi})")


class _Box:
    """Logit map between a box and R^p."""

    def __init__(self, bounds):
        b = np.asarray(bounds, dtype=np.float64)
        self.lo, self.hi = b[:, 0], b[:, 1]

    def to_x(self, y):
        return self.lo + (self.hi - self.lo) / (1.0 + np.exp(-y))

    def to_y(self, x):
        u = (np.asarray(x, dtype=np.float64) - self.lo) / (self.hi - self.lo)
        u = np.clip(u, 1e-9, 1.0 - 1e-9)
        return np.log(u) - np.log1p(-u)


def nelder_mead(objective, x0, cfg=None):
    """Minimise ``objective`` with the Nelder-Mead simplex method.

    Terminates when the spread of function values over the simplex drops
    below ``cfg.ftol`` or after ``cfg.max_iter`` iterations. Box bounds are
    handled by a coordinate-wise logit reparameterisation, so iterates are
    always strictly inside the box.
    """
    cfg = cfg or NelderMeadConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    box = _Box(cfg.bounds) if cfg.bounds is not None else None

    def f(y):
        v = objective(box.to_x(y) if box else y)
        return v if math.isfinite(v) else math.inf

    y0 = box.to_y(x0) if box else x0.copy()
    f0 = f(y0)
    if not math.isfinite(f0):
        raise DomainError("objective is not finite at the initial point")
    p = y0.size
    step = np.broadcast_to(np.asarray(cfg.scale, dtype=np.float64), (p,))
    simplex = np.vstack([y0] + [y0 + step[k] * np.eye(p)[k] for k in range(p)])
    fs = np.array([f0] + [f(v) for v in simplex[1:]])
    for _ in range(int(cfg.max_iter)):
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        if fs[-1] - fs[0] < cfg.ftol:
            break
        centroid = simplex[:-1].mean(axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = f(xr)
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = f(xe)
            if fe < fr:
                simplex[-1], fs[-1] = xe, fe
            else:
                simplex[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (simplex[-1] - centroid)
            fc = f(xc)
            if fc < min(fr, fs[-1]):
                simplex[-1], fs[-1] = xc, fc
            else:
                simplex[1:] = simplex[0] + 0.5 * (simplex[1:] - simplex[0])
                fs[1:] = [f(v) for v in simplex[1:]]
    best = int(np.argmin(fs))
    y = simplex[best]
    return (box.to_x(y) if box else y), float(fs[best])


# ---------------------------------------------------------------------------
# MAP
# ---------------------------------------------------------------------------


@dataclass
class MapProblem:
    """``loglik(theta, data)`` summed over replicates, ``logprior(theta)`` and bounds."""

    loglik: object
    logprior: object
    bounds: list

    def objective(self, data):
        def neg(theta):
            lp = self.logprior(theta)
            if not math.isfinite(lp):
                return math.inf
            try:
                return -(self.loglik(theta, data) + lp)
            except (DomainError, ValueError):
                return math.inf
        return neg


def map_estimate(problem, rs, init, cfg=None):
    """Maximise log-likelihood plus log prior by Nelder-Mead from ``init``."""
    cfg = cfg or NelderMeadConfig(bounds=problem.bounds)
    if cfg.bounds is None:
        cfg = NelderMeadConfig(cfg.scale, cfg.ftol, cfg.max_iter, problem.bounds)
    init = np.atleast_1d(np.asarray(init, dtype=np.float64))
    for v, (lo, hi) in zip(init, problem.bounds):
        if not lo <= v <= hi:
            raise DomainError(f"initial value {v} outside bounds ({lo}, {hi})")
    x, _ = nelder_mead(problem.objective(rs), init, cfg)
    return x


def gp_map_problem(model):
    """MAP problem for :class:`nbe.models.GaussianProcess` under its prior."""
    d = nm.DistancePattern(model.domain.distances())
    bounds = model.prior.bounds()

    def loglik(theta, rs):
        return gp_loglik(model.params(theta), getattr(rs, "data", rs), d)

    return MapProblem(loglik, model.prior.logpdf, bounds)


def schlather_pmap_problem(model, cutoff=3.0):
    """Pairwise MAP problem for :class:`nbe.models.Schlather`."""
    pairs = PairIndex.build(model.domain, cutoff)

    def loglik(theta, rs):
        if not isinstance(rs, ReplicateSet):
            rs = ReplicateSet(rs, model.model_id, model.transform)
        return pairwise_loglik(model.params(theta), rs, None, pairs=pairs)

    return MapProblem(loglik, model.prior.logpdf, model.prior.bounds())


class MapEstimator:
    """Callable wrapper: data set -> MAP estimate, started at ``init``.

    When ``init`` is None the start is the prior median; benchmarks call
    :meth:`estimate` with the true parameter instead.
    """

    def __init__(self, problem, init=None, cfg=None):
        self.problem = problem
        self.init = init
        self.cfg = cfg

    def estimate(self, data, init=None):
        start = init if init is not None else self.init
        if start is None:
            start = [0.5 * (lo + hi) for lo, hi in self.problem.bounds]
        return map_estimate(self.problem, data, start, self.cfg)

    __call__ = estimate

"""Statistical models: priors, simulators, data transforms and closed-form estimators.

Six models are registered:

========================  ==  =================================================
name                      id  parameters
========================  ==  =================================================
``uniform_theta``          1  theta (Z ~ Unif[0, theta], Pareto prior)
``normal_variance``        2  theta (Z ~ N(0, theta), inverse-gamma prior)
``linear_regression``      3  beta0, beta1 (Z = X beta + eps, N(0, I) prior)
``gp``                     4  sigma_eps, rho, nu  (or sigma_eps, rho when nu=1)
``schlather``              5  rho, nu
``cond_ext``               6  kappa, lambda, beta, rho, nu, mu, tau, delta1
========================  ==  =================================================

A data set is a :class:`ReplicateSet`: an ``n x m`` array whose columns are
the conditionally independent replicates.
"""

import io
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nm
from ._errors import CheckpointError, DomainError, SimulationError

MAGIC = b"NBES"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHIIB")

TRANSFORMS = {"none": 0, "log_gumbel": 1, "cube_root": 2}
_TRANSFORM_NAMES = {v: k for k, v in TRANSFORMS.items()}

MODEL_IDS = {
    "uniform_theta": 1,
    "normal_variance": 2,
    "linear_regression": 3,
    "gp": 4,
    "schlather": 5,
    "cond_ext": 6,
}
MODEL_NAMES = {v: k for k, v in MODEL_IDS.items()}

SQRT_2PI = math.sqrt(2.0 * math.pi)
# 0.975 quantile of the unit Laplace distribution, -log(0.05)
LAPLACE_975 = -math.log(0.05)


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass
class ReplicateSet:
    """``m`` replicates of an ``n``-dimensional observation, stored as an n x m array."""

    data: np.ndarray
    model_id: int = 0
    transform: str = "none"

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 1:
            d = d[None, :]
        if d.ndim != 2 or d.shape[1] < 1:
            raise DomainError(f"replicate data must be n x m with m >= 1, got shape {d.shape}")
        self.data = d
        if self.transform not in TRANSFORMS:
            raise DomainError(f"unknown transform {self.transform!r}")

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def m(self):
        return self.data.shape[1]

    def subset(self, idx):
        return replace(self, data=self.data[:, idx])

    def to_bytes(self):
        head = _HEADER.pack(MAGIC, FORMAT_VERSION, self.model_id, self.n, self.m,
                            TRANSFORMS[self.transform])
        body = np.asarray(self.data.T, dtype="<f8").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < _HEADER.size:
            raise CheckpointError("replicate file is truncated (no header)")
        magic, version, model_id, n, m, tcode = _HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise CheckpointError("not a replicate file (bad magic)")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported replicate format version {version}")
        if tcode not in _TRANSFORM_NAMES:
            raise CheckpointError(f"unknown transform code {tcode}")
        need = _HEADER.size + 8 * n * m
        if len(buf) != need:
            raise CheckpointError(f"replicate file has {len(buf)} bytes, expected {need}")
        arr = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(m, n).T
        return cls(arr.astype(np.float64), model_id, _TRANSFORM_NAMES[tcode])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class SpatialDomain:
    """Planar locations with an optional conditioning-site index ``s0``."""

    locations: np.ndarray
    s0: int = None

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=np.float64)
        if loc.ndim != 2 or loc.shape[1] != 2 or loc.shape[0] < 1:
            raise DomainError("locations must be an (n, 2) array with n >= 1")
        if not np.all(np.isfinite(loc)):
            raise DomainError("locations must be finite")
        self.locations = loc
        if self.s0 is not None and not 0 <= self.s0 < loc.shape[0]:
            raise DomainError(f"conditioning site {self.s0} out of range")

    @property
    def n(self):
        return self.locations.shape[0]

    @classmethod
    def grid(cls, side=8, spacing=1.0, with_s0=False):
        """``side x side`` cell centres of unit-spaced cells over [0, side*spacing]^2."""
        g = (np.arange(side) + 0.5) * spacing
        xx, yy = np.meshgrid(g, g, indexing="ij")
        loc = np.column_stack([xx.ravel(), yy.ravel()])
        s0 = None
        if with_s0:
            centre = np.full(2, side * spacing / 2.0)
            s0 = int(np.argmin(np.sum((loc - centre) ** 2, axis=1)))
        return cls(loc, s0)

    def distances(self):
        return nm.pairwise_distances(self.locations)

    def distances_to_s0(self):
        if self.s0 is None:
            raise DomainError("domain has no conditioning site")
        return np.sqrt(np.sum((self.locations - self.locations[self.s0]) ** 2, axis=1))


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Marginal:
    """One prior marginal: ``uniform(a, b)``, ``pareto(alpha, beta)``,
    ``inverse_gamma(a, b)`` or ``std_normal``."""

    kind: str
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind == "uniform":
            if not self.a < self.b:
                raise DomainError(f"uniform prior needs a < b, got ({self.a}, {self.b})")
        elif self.kind in ("pareto", "inverse_gamma"):
            if not (self.a > 0 and self.b > 0):
                raise DomainError(f"{self.kind} prior needs positive parameters")
        elif self.kind != "std_normal":
            raise DomainError(f"unknown prior kind {self.kind!r}")

    def sample(self, K, rng):
        if self.kind == "inverse_gamma":
            return self.b / rng.gamma(self.a, K)
        u = rng.uniform01(K)
        return self.ppf(u)

    def ppf(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        if self.kind == "pareto":
            return self.b * (1.0 - u) ** (-1.0 / self.a)
        if self.kind == "std_normal":
            return nm.norm_quantile(np.clip(u, 1e-300, None))
        # inverse gamma: 1/X with X ~ Gamma(a, rate b)
        return self.b / nm.gamma_quantile(1.0 - u, self.a, 1.0)

    def logpdf(self, x):
        x = float(x)
        if self.kind == "uniform":
            return -math.log(self.b - self.a) if self.a <= x <= self.b else -math.inf
        if self.kind == "pareto":
            if x < self.b:
                return -math.inf
            return math.log(self.a) + self.a * math.log(self.b) - (self.a + 1) * math.log(x)
        if self.kind == "std_normal":
            return -0.5 * x * x - 0.5 * math.log(2 * math.pi)
        if x <= 0:
            return -math.inf
        a, b = self.a, self.b
        return a * math.log(b) - math.lgamma(a) - (a + 1) * math.log(x) - b / x

    def median(self):
        return float(self.ppf(0.5))

    @property
    def bounds(self):
        """Support as (lo, hi); infinite ends where unbounded."""
        if self.kind == "uniform":
            return self.a, self.b
        if self.kind == "pareto":
            return self.b, math.inf
        if self.kind == "inverse_gamma":
            return 0.0, math.inf
        return -math.inf, math.inf


class Prior:
    """Independent product of :class:`Marginal` distributions."""

    def __init__(self, marginals):
        self.marginals = list(marginals)
        if not self.marginals:
            raise DomainError("prior needs at least one marginal")

    def __len__(self):
        return len(self.marginals)

    def __repr__(self):
        return f"Prior({self.marginals!r})"

    @property
    def p(self):
        return len(self.marginals)

    def sample(self, K, rng):
        """A p x K array of independent draws."""
        if K < 1:
            raise DomainError("K must be >= 1")
        return np.vstack([mg.sample(K, rng) for mg in self.marginals])

    def logpdf(self, theta):
        return sum(mg.logpdf(t) for mg, t in zip(self.marginals, theta))

    def median(self):
        return np.array([mg.median() for mg in self.marginals])

    def bounds(self):
        return [mg.bounds for mg in self.marginals]

    def scaling(self):
        """(shift, scale) mapping uniform marginals onto [0, 1]; identity otherwise."""
        shift = np.zeros(self.p)
        scale = np.ones(self.p)
        for k, mg in enumerate(self.marginals):
            if mg.kind == "uniform":
                shift[k] = mg.a
                scale[k] = mg.b - mg.a
        return shift, scale

    def to_dict(self):
        return [{"kind": mg.kind, "a": mg.a, "b": mg.b} for mg in self.marginals]

    @classmethod
    def from_dict(cls, spec):
        return cls(Marginal(d["kind"], d.get("a", 0.0), d.get("b", 1.0)) for d in spec)


def sample_prior(prior, K, rng):
    return prior.sample(K, rng)


# ---------------------------------------------------------------------------
# Parameter containers for the spatial models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GPParams:
    sigma_eps: float
    matern: nm.MaternParams

    def __post_init__(self):
        if not self.sigma_eps >= 0:
            raise DomainError("sigma_eps must be >= 0")
        if self.matern.sigma2 != 1.0:
            raise DomainError("GP marginal variance is fixed at 1")


@dataclass(frozen=True)
class SchlatherParams:
    matern: nm.MaternParams
    R: float = 3.5
    max_iter: int = 100_000

    def __post_init__(self):
        if not self.R > 0:
            raise DomainError("truncation R must be positive")


@dataclass(frozen=True)
class CondExtParams:
    kappa: float
    lam: float
    beta: float
    mu: float
    tau: float
    delta1: float
    matern: nm.MaternParams
    u: float = LAPLACE_975

    def __post_init__(self):
        for name in ("kappa", "lam", "beta", "tau", "delta1"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if not (math.isfinite(self.mu) and math.isfinite(self.u)):
            raise DomainError("mu and u must be finite")


# ---------------------------------------------------------------------------
# Simulators
# ---------------------------------------------------------------------------


def _unique_locations(domain):
    """Distinct locations and the map from every location to its representative."""
    uniq, inverse = np.unique(domain.locations, axis=0, return_inverse=True)
    return uniq, np.asarray(inverse).reshape(-1)


def simulate_gp(theta, domain, m, rng, *, L=None):
    """Mean-zero Matérn GP plus white noise; returns an n x m ReplicateSet.

    ``L`` may carry a precomputed Cholesky factor of the Matérn matrix.
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    if L is None:
        C = nm.matern_corr_matrix(domain.distances(), theta.matern.rho, theta.matern.nu)
        L = nm.cholesky(C, check=False)
    W = rng.std_normal((domain.n, m))
    eps = rng.std_normal((domain.n, m))
    Z = L @ W + theta.sigma_eps * eps
    return ReplicateSet(Z, MODEL_IDS["gp"])


def simulate_schlather(theta, domain, m, rng, *, L=None):
    """Schlather's max-stable model with a truncated spectral representation.

    Replicates are generated jointly: each pass of the loop draws one
    Gaussian field for every replicate whose stopping rule
    ``R * zeta > min(z)`` is still unmet. Fields are scaled by sqrt(2 pi)
    so that E[max(0, Y)] = 1. Coincident locations share one simulated
    value.
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    uniq, inverse = _unique_locations(domain)
    nu_ = uniq.shape[0]
    if L is None:
        C = nm.matern_corr_matrix(nm.pairwise_distances(uniq), theta.matern.rho, theta.matern.nu)
        L = nm.cholesky(C, check=False)
    L = SQRT_2PI * L
    z = np.zeros((nu_, m))
    gamma = rng.exponential(m)  # 1/zeta
    active = np.arange(m)
    it = 0
    while active.size:
        it += 1
        if it > theta.max_iter:
            raise SimulationError(
                f"Schlather simulation exceeded {theta.max_iter} spectral functions "
                f"for replicate {int(active[0])}"
            )
        Y = L @ rng.std_normal((nu_, active.size))
        zeta = 1.0 / gamma[active]
        np.maximum(z[:, active], zeta * Y, out=Y)
        z[:, active] = Y
        gamma[active] += rng.exponential(active.size)
        keep = theta.R / gamma[active] > z[:, active].min(axis=0)
        active = active[keep]
    return ReplicateSet(z[inverse], MODEL_IDS["schlather"])


def cond_ext_a(h, z, kappa, lam):
    return z * np.exp(-((h / lam) ** kappa))


def cond_ext_b(h, z, kappa, lam, beta):
    return 1.0 + cond_ext_a(h, z, kappa, lam) ** beta


def cond_ext_delta(h, delta1):
    return 1.0 + np.exp(-((h / delta1) ** 2))


def simulate_cond_ext(theta, domain, m, rng, *, L=None):
    """Spatial conditional extremes model given an exceedance at ``domain.s0``."""
    if domain.s0 is None:
        raise DomainError("conditional extremes simulation needs a conditioning site")
    if m < 1:
        raise DomainError("m must be >= 1")
    s0 = domain.s0
    h = domain.distances_to_s0()
    others = np.arange(domain.n) != s0
    mp = theta.matern
    if L is None:
        C = nm.matern_corr_matrix(domain.distances(), mp.rho, mp.nu)
        L = nm.cholesky(C, check=False)
    delta = cond_ext_delta(h[others], theta.delta1)
    c0 = nm.matern_cov(h[others], nm.MaternParams(mp.rho, mp.nu, 1.0))
    sigma0 = np.sqrt(np.maximum(2.0 - 2.0 * c0, 0.0))

    z0 = theta.u + rng.exponential(m)
    yt = L @ rng.std_normal((domain.n, m))
    y01 = (yt[others] - yt[s0]) / sigma0[:, None]
    k = y01.size
    y = nm.gauss_to_delta_laplace(
        y01.reshape(-1),
        np.full(k, theta.mu),
        np.full(k, theta.tau),
        np.repeat(delta, m),
    ).reshape(y01.shape)
    a = cond_ext_a(h[others][:, None], z0[None, :], theta.kappa, theta.lam)
    b = 1.0 + a ** theta.beta
    Z = np.empty((domain.n, m))
    Z[others] = a + b * y
    Z[s0] = z0
    return ReplicateSet(Z, MODEL_IDS["cond_ext"])


def linear_design(n=100):
    x = np.linspace(-1.0, 1.0, n)
    return np.column_stack([np.ones(n), x])


def simulate_toy(model_id, theta, config, m, rng):
    """Replicates from one of the analytic models.

    ``config`` is a dict; ``linear_regression`` reads ``n`` (default 100)
    and ``sigma`` (default 0.05) from it.
    """
    if isinstance(model_id, int):
        model_id = MODEL_NAMES.get(model_id, model_id)
    if m < 1:
        raise DomainError("m must be >= 1")
    config = config or {}
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    if model_id == "uniform_theta":
        if not theta[0] > 0:
            raise DomainError("uniform_theta needs theta > 0")
        Z = theta[0] * rng.uniform01((1, m))
    elif model_id == "normal_variance":
        if not theta[0] > 0:
            raise DomainError("normal_variance needs theta > 0")
        Z = math.sqrt(theta[0]) * rng.std_normal((1, m))
    elif model_id == "linear_regression":
        n = int(config.get("n", 100))
        sigma = float(config.get("sigma", 0.05))
        X = linear_design(n)
        if theta.shape != (2,):
            raise DomainError("linear_regression needs theta = (beta0, beta1)")
        Z = (X @ theta)[:, None] + sigma * rng.std_normal((n, m))
    else:
        raise DomainError(f"not an analytic model: {model_id!r}")
    return ReplicateSet(Z, MODEL_IDS[model_id])


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def apply_transform(kind, data):
    data = np.asarray(data, dtype=np.float64)
    if kind == "none":
        return data
    if kind == "log_gumbel":
        if not np.all(data > 0):
            raise DomainError("log_gumbel transform needs strictly positive data")
        return np.log(data)
    if kind == "cube_root":
        return np.cbrt(data)
    raise DomainError(f"unknown transform {kind!r}")


def invert_transform(kind, data):
    data = np.asarray(data, dtype=np.float64)
    if kind == "none":
        return data
    if kind == "log_gumbel":
        return np.exp(data)
    if kind == "cube_root":
        return data ** 3
    raise DomainError(f"unknown transform {kind!r}")


def transform(kind, rs):
    """Apply ``log_gumbel`` or ``cube_root`` to a raw ReplicateSet."""
    if rs.transform != "none":
        raise DomainError(f"data already carry the {rs.transform!r} transform")
    return ReplicateSet(apply_transform(kind, rs.data), rs.model_id, kind)


# ---------------------------------------------------------------------------
# Closed-form estimators
# ---------------------------------------------------------------------------


def closed_form_bayes(model_id, rs, prior, config=None):
    """Posterior median under the conjugate prior of an analytic model."""
    if isinstance(model_id, int):
        model_id = MODEL_NAMES.get(model_id, model_id)
    Z = rs.data if isinstance(rs, ReplicateSet) else np.asarray(rs, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    m = Z.shape[1]
    kinds = [mg.kind for mg in prior.marginals]
    if model_id == "uniform_theta":
        if kinds != ["pareto"]:
            raise DomainError("uniform_theta needs a Pareto prior")
        alpha, beta = prior.marginals[0].a, prior.marginals[0].b
        return np.array([2.0 ** (1.0 / (alpha + m)) * max(Z.max(), beta)])
    if model_id == "normal_variance":
        if kinds != ["inverse_gamma"]:
            raise DomainError("normal_variance needs an inverse-gamma prior")
        a, b = prior.marginals[0].a, prior.marginals[0].b
        A = a + 0.5 * m
        B = b + 0.5 * float(np.sum(Z * Z))
        return np.array([B / nm.gamma_quantile(0.5, A, 1.0)])
    if model_id == "linear_regression":
        if kinds != ["std_normal", "std_normal"]:
            raise DomainError("linear_regression needs a N(0, I) prior")
        sigma = float((config or {}).get("sigma", 0.05))
        X = linear_design(Z.shape[0])
        prec = m * (X.T @ X) / sigma**2 + np.eye(2)
        rhs = X.T @ Z.sum(axis=1) / sigma**2
        return np.linalg.solve(prec, rhs)
    raise DomainError(f"no closed-form Bayes estimator for {model_id!r}")


def uniform_single_rep_bayes(z, alpha=4.0, beta=1.0):
    """Single-replicate Bayes estimator for uniform_theta: 2^(1/(alpha+1)) max(z, beta)."""
    return 2.0 ** (1.0 / (alpha + 1.0)) * np.maximum(z, beta)


def one_at_a_time(single_rep_estimator, rs):
    """Average a single-replicate estimator over the replicates."""
    Z = rs.data if isinstance(rs, ReplicateSet) else np.atleast_2d(rs)
    ests = [np.atleast_1d(single_rep_estimator(Z[:, i])) for i in range(Z.shape[1])]
    return np.mean(ests, axis=0)


def oaat_uniform_expectation(theta, alpha=4.0, beta=1.0):
    """E of the one-at-a-time uniform_theta estimator for theta >= beta.

    E[max(Z, beta)] = theta/2 + beta^2/(2 theta) for Z ~ U(0, theta), and
    the estimator is 2^(1/(alpha+1)) times that, whatever m is.
    """
    return 2.0 ** (1.0 / (alpha + 1.0)) * (theta / 2.0 + beta * beta / (2.0 * theta))


# ---------------------------------------------------------------------------
# Model registry
# ---------------------------------------------------------------------------


class Model:
    """A model bundles its prior, data dimension, transform and simulator.

    Subclasses implement :meth:`simulate_raw`, which returns an ``n x m``
    array for a parameter vector.
    """

    name = ""
    param_names = ()
    transform = "none"

    def __init__(self, prior=None):
        self.prior = prior if prior is not None else self.default_prior()

    @property
    def model_id(self):
        return MODEL_IDS[self.name]

    @property
    def p(self):
        return len(self.param_names)

    def default_prior(self):
        raise NotImplementedError

    def config(self):
        return {}

    def simulate_raw(self, theta, m, rng):
        raise NotImplementedError

    def simulate(self, theta, m, rng):
        """A transformed ReplicateSet of ``m`` replicates at ``theta``."""
        raw = self.simulate_raw(theta, m, rng)
        return ReplicateSet(apply_transform(self.transform, raw), self.model_id, self.transform)

    def simulate_sets(self, theta, ms, rng):
        """Several independent transformed data sets at one theta, sizes ``ms``."""
        ms = [int(k) for k in ms]
        total = self.simulate(theta, sum(ms), rng).data
        cuts = np.cumsum(ms)[:-1]
        return np.split(total, cuts, axis=1)

    def simulate_batch(self, thetas, ms, rng):
        """Data sets for several parameter vectors.

        ``thetas`` is p x B and ``ms[b]`` lists the sample sizes wanted at
        column b. Returns a list (over b) of lists of n x m arrays.
        """
        return [self.simulate_sets(thetas[:, b], ms[b], rng) for b in range(thetas.shape[1])]

    def bayes_estimator(self):
        """Closed-form Bayes estimator as ``f(data) -> theta_hat`` when one exists."""
        return None


class _ScalarToy(Model):
    """Scalar-observation models whose draws are theta-scaled standard variates."""

    n = 1

    def _unit(self, size, rng):
        raise NotImplementedError

    def _scale(self, theta):
        raise NotImplementedError

    def simulate_raw(self, theta, m, rng):
        if m < 1:
            raise DomainError("m must be >= 1")
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if not theta[0] > 0:
            raise DomainError(f"{self.name} needs theta > 0")
        return self._scale(theta[0]) * self._unit((1, m), rng)

    def simulate_batch(self, thetas, ms, rng):
        thetas = np.asarray(thetas, dtype=np.float64)
        if not np.all(thetas[0] > 0):
            raise DomainError(f"{self.name} needs theta > 0")
        sizes = [int(k) for row in ms for k in row]
        per_theta = [sum(int(k) for k in row) for row in ms]
        u = self._unit(sum(sizes), rng)
        z = u * np.repeat(self._scale(thetas[0]), per_theta)
        pieces = np.split(z[None, :], np.cumsum(sizes)[:-1], axis=1)
        out, pos = [], 0
        for row in ms:
            out.append(pieces[pos:pos + len(row)])
            pos += len(row)
        return out


class UniformTheta(_ScalarToy):
    name = "uniform_theta"
    param_names = ("theta",)

    def default_prior(self):
        return Prior([Marginal("pareto", 4.0, 1.0)])

    def _unit(self, size, rng):
        return rng.uniform01(size)

    def _scale(self, theta):
        return theta

    def bayes_estimator(self):
        return lambda Z: closed_form_bayes("uniform_theta", Z, self.prior)


class NormalVariance(_ScalarToy):
    name = "normal_variance"
    param_names = ("theta",)

    def default_prior(self):
        return Prior([Marginal("inverse_gamma", 2.0, 2.0)])

    def _unit(self, size, rng):
        return rng.std_normal(size)

    def _scale(self, theta):
        return np.sqrt(theta)

    def bayes_estimator(self):
        return lambda Z: closed_form_bayes("normal_variance", Z, self.prior)


class LinearRegression(Model):
    name = "linear_regression"
    param_names = ("beta0", "beta1")

    def __init__(self, prior=None, n=100, sigma=0.05):
        self.n = int(n)
        self.sigma = float(sigma)
        super().__init__(prior)

    def default_prior(self):
        return Prior([Marginal("std_normal"), Marginal("std_normal")])

    def config(self):
        return {"n": self.n, "sigma": self.sigma}

    def simulate_raw(self, theta, m, rng):
        return simulate_toy("linear_regression", theta, self.config(), m, rng).data

    def bayes_estimator(self):
        cfg = self.config()
        return lambda Z: closed_form_bayes("linear_regression", Z, self.prior, cfg)


class _SpatialModel(Model):
    def __init__(self, prior=None, domain=None, side=8):
        self.side = int(side)
        self.domain = domain if domain is not None else self.default_domain()
        self._dist = self.domain.distances()
        self._pattern = nm.DistancePattern(self._dist)
        super().__init__(prior)

    def default_domain(self):
        return SpatialDomain.grid(self.side)

    @property
    def n(self):
        return self.domain.n

    def config(self):
        return {"side": self.side}

    def _chol(self, rho, nu, dist=None):
        C = nm.matern_corr_matrix(self._pattern if dist is None else dist, rho, nu)
        return nm.cholesky(C, check=False)


class GaussianProcess(_SpatialModel):
    """Matérn GP with noise; ``known_smoothness`` fixes nu = 1."""

    name = "gp"

    def __init__(self, prior=None, domain=None, side=8, known_smoothness=False):
        self.known_smoothness = bool(known_smoothness)
        super().__init__(prior, domain, side)

    @property
    def param_names(self):
        return ("sigma_eps", "rho") if self.known_smoothness else ("sigma_eps", "rho", "nu")

    def default_prior(self):
        marg = [Marginal("uniform", 0.1, 1.0), Marginal("uniform", 2.0, 10.0)]
        if not self.known_smoothness:
            marg.append(Marginal("uniform", 0.5, 3.0))
        return Prior(marg)

    def config(self):
        return {"side": self.side, "known_smoothness": self.known_smoothness}

    def params(self, theta):
        nu = 1.0 if self.known_smoothness else theta[2]
        return GPParams(float(theta[0]), nm.MaternParams(float(theta[1]), float(nu)))

    def simulate_raw(self, theta, m, rng):
        par = self.params(theta)
        L = self._chol(par.matern.rho, par.matern.nu)
        return simulate_gp(par, self.domain, m, rng, L=L).data


class Schlather(_SpatialModel):
    name = "schlather"
    param_names = ("rho", "nu")
    transform = "log_gumbel"

    def __init__(self, prior=None, domain=None, side=8, R=3.5):
        self.R = float(R)
        super().__init__(prior, domain, side)
        uniq, _ = _unique_locations(self.domain)
        self._udist = nm.DistancePattern(nm.pairwise_distances(uniq))

    def default_prior(self):
        return Prior([Marginal("uniform", 2.0, 10.0), Marginal("uniform", 0.5, 3.0)])

    def config(self):
        return {"side": self.side, "R": self.R}

    def params(self, theta):
        return SchlatherParams(nm.MaternParams(float(theta[0]), float(theta[1])), self.R)

    def simulate_raw(self, theta, m, rng):
        par = self.params(theta)
        L = self._chol(par.matern.rho, par.matern.nu, self._udist)
        return simulate_schlather(par, self.domain, m, rng, L=L).data


class ConditionalExtremes(_SpatialModel):
    name = "cond_ext"
    param_names = ("kappa", "lambda", "beta", "rho", "nu", "mu", "tau", "delta1")
    transform = "cube_root"

    def __init__(self, prior=None, domain=None, side=8, u=LAPLACE_975):
        self.u = float(u)
        super().__init__(prior, domain, side)

    def default_domain(self):
        return SpatialDomain.grid(self.side, with_s0=True)

    def default_prior(self):
        return Prior([
            Marginal("uniform", 1.0, 2.0),
            Marginal("uniform", 2.0, 5.0),
            Marginal("uniform", 0.05, 1.0),
            Marginal("uniform", 2.0, 10.0),
            Marginal("uniform", 0.5, 3.0),
            Marginal("uniform", -0.5, 0.5),
            Marginal("uniform", 0.3, 0.9),
            Marginal("uniform", 1.3, 3.0),
        ])

    def config(self):
        return {"side": self.side, "u": self.u}

    def params(self, theta):
        k, lam, beta, rho, nu, mu, tau, d1 = (float(t) for t in theta)
        return CondExtParams(k, lam, beta, mu, tau, d1, nm.MaternParams(rho, nu), self.u)

    def simulate_raw(self, theta, m, rng):
        par = self.params(theta)
        L = self._chol(par.matern.rho, par.matern.nu)
        return simulate_cond_ext(par, self.domain, m, rng, L=L).data


_REGISTRY = {
    "uniform_theta": UniformTheta,
    "normal_variance": NormalVariance,
    "linear_regression": LinearRegression,
    "gp": GaussianProcess,
    "schlather": Schlather,
    "cond_ext": ConditionalExtremes,
}


def get_model(name, prior=None, **config):
    """Instantiate a registered model by name."""
    if name not in _REGISTRY:
        raise DomainError(f"unknown model {name!r}; choose from {sorted(_REGISTRY)}")
    if prior is not None and not isinstance(prior, Prior):
        prior = Prior.from_dict(prior)
    return _REGISTRY[name](prior=prior, **config)

"""Special functions, distributions, dense linear algebra and seeded RNG streams.

All routines work in float64. Scalar inputs give scalar (Python float)
outputs; array inputs give arrays of the broadcast shape. The heavy lifting
is delegated to the kernel backend selected in :mod:`nbe._backend`.
"""

import hashlib
import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from ._errors import CholeskyError, DomainError, SingularMatrixError

__all__ = [
    "DistancePattern",
    "MaternParams",
    "DeltaLaplaceParams",
    "RngStream",
    "BesselUnderflowWarning",
    "log_gamma",
    "lower_incomplete_gamma",
    "regularized_gamma",
    "gamma_quantile",
    "std_normal",
    "norm_cdf",
    "norm_quantile",
    "bessel_k",
    "matern_cov",
    "matern_corr_matrix",
    "pairwise_distances",
    "cholesky",
    "forward_solve",
    "delta_laplace",
    "gauss_to_delta_laplace",
    "rng_stream",
    "derive_stream_id",
    "CholeskyError",
    "SingularMatrixError",
    "DomainError",
]


class BesselUnderflowWarning(RuntimeWarning):
    """K_nu(x) underflowed to zero."""


def _flat(*args):
    """Broadcast to a common shape and return contiguous 1-D copies."""
    arrs = np.broadcast_arrays(*[np.asarray(a, dtype=np.float64) for a in args])
    shape = arrs[0].shape
    return shape, [np.ascontiguousarray(a.reshape(-1)) for a in arrs]


def _out(shape, values):
    if shape == ():
        return float(values[0])
    return values.reshape(shape)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaternParams:
    """Matérn covariance parameters: range ``rho``, smoothness ``nu``, variance ``sigma2``."""

    rho: float
    nu: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise DomainError(f"Matérn range must be positive, got {self.rho}")
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise DomainError(f"Matérn smoothness must be positive, got {self.nu}")
        if not (self.sigma2 >= 0 and math.isfinite(self.sigma2)):
            raise DomainError(f"Matérn variance must be nonnegative, got {self.sigma2}")


@dataclass(frozen=True)
class DeltaLaplaceParams:
    """Location ``mu``, scale ``tau`` and shape ``delta`` of the delta-Laplace law."""

    mu: float = 0.0
    tau: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise DomainError("delta-Laplace location must be finite")
        if not self.tau > 0:
            raise DomainError(f"delta-Laplace scale must be positive, got {self.tau}")
        if not self.delta > 0:
            raise DomainError(f"delta-Laplace shape must be positive, got {self.delta}")


# ---------------------------------------------------------------------------
# Gamma family
# ---------------------------------------------------------------------------

_lgamma = np.frompyfunc(math.lgamma, 1, 1)


def log_gamma(x):
    """ln Gamma(x) for x > 0."""
    shape, (xv,) = _flat(x)
    if not np.all(xv > 0):
        raise DomainError("log_gamma requires x > 0")
    return _out(shape, _lgamma(xv).astype(np.float64))


def regularized_gamma(a, x):
    """Regularised incomplete gamma pair (P(a, x), Q(a, x))."""
    shape, (av, xv) = _flat(a, x)
    if not (np.all(av > 0) and np.all(xv >= 0)):
        raise DomainError("regularized_gamma requires a > 0 and x >= 0")
    P, Q = kernels.gamma_pq(av, xv)
    return _out(shape, P), _out(shape, Q)


def lower_incomplete_gamma(a, x):
    """Unnormalised lower incomplete gamma: integral of t^(a-1) e^(-t) over [0, x]."""
    shape, (av, xv) = _flat(a, x)
    if not (np.all(av > 0) and np.all(xv >= 0)):
        raise DomainError("lower_incomplete_gamma requires a > 0 and x >= 0")
    P, _ = kernels.gamma_pq(av, xv)
    # product formed in logs: Gamma(a) alone overflows for a > 171
    with np.errstate(divide="ignore", over="ignore"):
        out = np.where(P > 0, np.exp(np.log(P) + _lgamma(av).astype(np.float64)), 0.0)
    return _out(shape, out)


def gamma_quantile(p, shape, scale=1.0, *, upper=None):
    """Quantile of the Gamma(shape, scale) distribution.

    Parameters
    ----------
    p : float or array
        Lower-tail probability in [0, 1).
    shape, scale : float or array
        Positive shape and scale.
    upper : float or array, optional
        The upper-tail probability ``1 - p`` if it is known more precisely
        than ``p`` itself.
    """
    if upper is None:
        shp, (pv, av, sv) = _flat(p, shape, scale)
        qv = 1.0 - pv
    else:
        shp, (pv, av, sv, qv) = _flat(p, shape, scale, upper)
    if not (np.all(pv >= 0) and np.all(pv < 1)):
        raise DomainError("gamma_quantile requires 0 <= p < 1")
    if not (np.all(av > 0) and np.all(sv > 0)):
        raise DomainError("gamma_quantile requires positive shape and scale")
    return _out(shp, sv * kernels.gamma_quantile(av, pv, qv))


# ---------------------------------------------------------------------------
# Standard normal
# ---------------------------------------------------------------------------


def norm_cdf(x):
    shape, (xv,) = _flat(x)
    return _out(shape, kernels.norm_cdf(xv))


def norm_quantile(p):
    shape, (pv,) = _flat(p)
    if not (np.all(pv > 0) and np.all(pv < 1)):
        raise DomainError("normal quantile requires 0 < p < 1")
    return _out(shape, kernels.norm_quantile(pv))


def std_normal(mode, x_or_p):
    """Standard normal ``cdf`` or ``quantile``."""
    if mode == "cdf":
        return norm_cdf(x_or_p)
    if mode == "quantile":
        return norm_quantile(x_or_p)
    raise DomainError(f"unknown std_normal mode {mode!r}")


# ---------------------------------------------------------------------------
# Bessel K and Matérn
# ---------------------------------------------------------------------------


def bessel_k(nu, x):
    """Modified Bessel function of the second kind K_nu(x), nu >= 0, x > 0.

    Values that underflow come back as 0.0 with a
    :class:`BesselUnderflowWarning`.
    """
    nu = float(nu)
    if not nu >= 0:
        raise DomainError(f"bessel_k requires nu >= 0, got {nu}")
    shape, (xv,) = _flat(x)
    if not np.all(xv > 0):
        raise DomainError("bessel_k requires x > 0")
    out = kernels.bessel_k(nu, xv)
    if np.any(out == 0.0) or not np.all(np.isfinite(out)):
        warnings.warn("bessel_k underflowed/overflowed", BesselUnderflowWarning, stacklevel=2)
        out = np.where(np.isfinite(out), out, np.where(np.isnan(out), 0.0, out))
    return _out(shape, out)


def matern_cov(h, params):
    """Isotropic Matérn covariance at distance(s) ``h``; equals sigma2 at h = 0."""
    shape, (hv,) = _flat(h)
    if not np.all(hv >= 0):
        raise DomainError("matern_cov requires h >= 0")
    out = np.full(hv.shape, params.sigma2)
    pos = hv > 0
    if pos.any():
        r = hv[pos] / params.rho
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BesselUnderflowWarning)
            k = kernels.bessel_k(params.nu, r)
        logc = (1.0 - params.nu) * math.log(2.0) - math.lgamma(params.nu)
        with np.errstate(under="ignore", invalid="ignore"):
            val = np.exp(logc + params.nu * np.log(r)) * k
        # K underflows long after the covariance is negligible
        out[pos] = params.sigma2 * np.where(np.isfinite(val), val, 0.0)
    return _out(shape, np.minimum(out, params.sigma2))


def pairwise_distances(locations):
    """Euclidean distance matrix of an (n, 2) coordinate array."""
    s = np.asarray(locations, dtype=np.float64)
    diff = s[:, None, :] - s[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


class DistancePattern:
    """Upper-triangle index and unique distances of a fixed distance matrix.

    Gridded domains repeat a handful of distances many times, so the
    covariance is evaluated once per distinct value.
    """

    def __init__(self, dist):
        d = np.asarray(dist, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DomainError("distance matrix must be square")
        self.n = d.shape[0]
        self.iu = np.triu_indices(self.n, 1)
        self.uniq, self.inv = np.unique(d[self.iu], return_inverse=True)

    def corr(self, rho, nu):
        c = matern_cov(self.uniq, MaternParams(rho, nu, 1.0))[self.inv]
        C = np.eye(self.n)
        C[self.iu] = c
        C.T[self.iu] = c
        return C


def matern_corr_matrix(dist, rho, nu):
    """Matérn correlation matrix (sigma2 = 1) from a distance matrix or a :class:`DistancePattern`."""
    pat = dist if isinstance(dist, DistancePattern) else DistancePattern(dist)
    return pat.corr(rho, nu)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def cholesky(A, *, check=True):
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises :class:`CholeskyError` carrying the 1-based pivot index when the
    matrix is not positive definite.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise DomainError(f"cholesky requires a nonempty square matrix, got shape {A.shape}")
    if check:
        if not np.all(np.isfinite(A)):
            raise DomainError("cholesky input has non-finite entries")
        scale = max(np.max(np.abs(A)), 1.0)
        if np.max(np.abs(A - A.T)) > 1e-12 * scale:
            raise DomainError("cholesky input is not symmetric")
    return kernels.cholesky(np.ascontiguousarray(A))


def forward_solve(L, b):
    """Solve L u = b for lower-triangular L; ``b`` may be a vector or a matrix."""
    L = np.asarray(L, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DomainError("forward_solve requires a square matrix")
    if b.ndim not in (1, 2) or b.shape[0] != L.shape[0]:
        raise DomainError(f"dimension mismatch: L is {L.shape}, b is {b.shape}")
    return kernels.forward_solve(np.ascontiguousarray(L), np.ascontiguousarray(b))


# ---------------------------------------------------------------------------
# Delta-Laplace
# ---------------------------------------------------------------------------


def delta_laplace(mode, arg, params):
    """Delta-Laplace ``pdf``, ``cdf`` or ``quantile``.

    The quantile is mu + sign(p - 1/2) tau G^(1/delta) with G the
    Gamma(1/delta, 1) quantile at 2|p - 1/2|.
    """
    mu, tau, delta = params.mu, params.tau, params.delta
    if mode == "pdf":
        shape, (yv,) = _flat(arg)
        logc = math.log(delta) - math.log(2.0 * tau) - math.lgamma(1.0 / delta)
        return _out(shape, np.exp(logc - (np.abs(yv - mu) / tau) ** delta))
    if mode == "cdf":
        shape, (yv, m, t, d) = _flat(arg, mu, tau, delta)
        return _out(shape, kernels.delta_laplace_cdf(yv, m, t, d))
    if mode == "quantile":
        shape, (pv, m, t, d) = _flat(arg, mu, tau, delta)
        if not (np.all(pv > 0) and np.all(pv < 1)):
            raise DomainError("delta_laplace quantile requires 0 < p < 1")
        return _out(shape, kernels.delta_laplace_quantile(pv, m, t, d))
    raise DomainError(f"unknown delta_laplace mode {mode!r}")


def gauss_to_delta_laplace(y, mu, tau, delta):
    """Map standard normal values to delta-Laplace ones, Q_S(Phi(y)), tail-accurately."""
    shape, (yv, m, t, d) = _flat(y, mu, tau, delta)
    return _out(shape, kernels.gauss_to_delta_laplace(yv, m, t, d))


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def derive_stream_id(*parts):
    """Hash an arbitrary tuple of ints/strings to a 64-bit stream id."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator, so streams with distinct
    ids are independent and cheap to create. ``counter`` records how many
    variates have been drawn.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = 0
        bitgen = np.random.Philox(key=[self.seed, self.stream_id])
        self.generator = np.random.Generator(bitgen)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def spawn(self, *parts):
        """A child stream whose id is derived from this stream's id and ``parts``."""
        return RngStream(self.seed, derive_stream_id(self.stream_id, *parts))

    def _count(self, size):
        self.counter += int(np.prod(size)) if size is not None else 1

    def uniform01(self, size=None):
        self._count(size)
        return self.generator.random(size)

    def std_normal(self, size=None):
        self._count(size)
        return self.generator.standard_normal(size)

    def exponential(self, size=None):
        self._count(size)
        return self.generator.standard_exponential(size)

    def gamma(self, shape, size=None):
        self._count(size)
        return self.generator.standard_gamma(shape, size)

    def integers(self, low, high, size=None):
        """Integers uniform on [low, high)."""
        self._count(size)
        return self.generator.integers(low, high, size=size)

    def permutation(self, n):
        self._count(n)
        return self.generator.permutation(n)


def rng_stream(seed, stream_id=0):
    return RngStream(seed, stream_id)

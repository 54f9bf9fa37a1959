"""Pure-Python kernels (numpy-vectorised).

This module is the fallback for the compiled ``_kernels`` extension and
defines the backend contract: every function takes 1-D contiguous float64
arrays of equal length (``nu`` and matrices excepted) and returns float64
arrays. The algorithms mirror the compiled versions step for step, so
results agree to rounding.
"""

import math

import numpy as np

from ._errors import CholeskyError, SingularMatrixError

EPS = 1e-16
FPMIN = 1e-300
MAXIT = 10000

# Taylor coefficients of 1/Gamma(z) (Abramowitz & Stegun 6.1.34), c[k-1] for z**k.
_RGAMMA_COEF = (
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001,
)

_lgamma = np.frompyfunc(math.lgamma, 1, 1)
_erf = np.frompyfunc(math.erf, 1, 1)
_erfc = np.frompyfunc(math.erfc, 1, 1)


def _vlgamma(a):
    return _lgamma(a).astype(np.float64)


def temme_gammas(mu):
    """Return (gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu)) for |mu| <= 1/2."""
    # gam1 = -sum_{k even} c_k mu^(k-2), gam2 = sum_{k odd} c_k mu^(k-1)
    m2 = mu * mu
    g1 = 0.0
    for c in reversed(_RGAMMA_COEF[1::2]):
        g1 = g1 * m2 + c
    gam2 = 0.0
    for c in reversed(_RGAMMA_COEF[0::2]):
        gam2 = gam2 * m2 + c
    gam1 = -g1
    gampl = gam2 - mu * gam1
    gammi = gam2 + mu * gam1
    return gam1, gam2, gampl, gammi


# ---------------------------------------------------------------------------
# Bessel K
# ---------------------------------------------------------------------------

BESSEL_CROSSOVER = 2.0


def bessel_k(nu, x):
    """K_nu(x) for scalar ``nu >= 0`` and an array of ``x > 0``.

    Temme's series for x < 2, Steed's continued fraction (CF2) for x >= 2,
    both at the fractional order mu = nu - round(nu), then forward
    recurrence up to nu.
    """
    x = np.asarray(x, dtype=np.float64)
    nl = int(nu + 0.5)
    xmu = nu - nl
    xmu2 = xmu * xmu
    rkmu = np.empty_like(x)
    rk1 = np.empty_like(x)

    small = x < BESSEL_CROSSOVER
    if small.any():
        xs = x[small]
        x2 = 0.5 * xs
        pimu = math.pi * xmu
        fact = 1.0 if abs(pimu) < EPS else pimu / math.sin(pimu)
        d = -np.log(x2)
        e = xmu * d
        with np.errstate(invalid="ignore", divide="ignore"):
            fact2 = np.where(np.abs(e) < EPS, 1.0, np.sinh(e) / e)
        gam1, gam2, gampl, gammi = temme_gammas(xmu)
        ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
        total = ff.copy()
        ee = np.exp(e)
        p = 0.5 * ee / gampl
        q = 0.5 / (ee * gammi)
        c = np.ones_like(xs)
        dd = x2 * x2
        total1 = p.copy()
        active = np.ones(xs.shape, dtype=bool)
        for i in range(1, MAXIT):
            ff = (i * ff + p + q) / (i * i - xmu2)
            c = c * dd / i
            p = p / (i - xmu)
            q = q / (i + xmu)
            delta = c * ff
            total = np.where(active, total + delta, total)
            total1 = np.where(active, total1 + c * (p - i * ff), total1)
            active &= ~(np.abs(delta) < np.abs(total) * EPS)
            if not active.any():
                break
        rkmu[small] = total
        rk1[small] = total1 * 2.0 / xs

    large = ~small
    if large.any():
        xl = x[large]
        b = 2.0 * (1.0 + xl)
        d = 1.0 / b
        h = d.copy()
        delh = d.copy()
        q1 = np.zeros_like(xl)
        q2 = np.ones_like(xl)
        a1 = 0.25 - xmu2
        q = np.full_like(xl, a1)
        c = a1
        a = -a1
        s = 1.0 + q * delh
        active = np.ones(xl.shape, dtype=bool)
        for i in range(2, MAXIT):
            a -= 2 * (i - 1)
            c = -a * c / i
            qnew = (q1 - b * q2) / a
            q1, q2 = q2, qnew
            q = q + c * qnew
            b = b + 2.0
            d = 1.0 / (b + a * d)
            delh = (b * d - 1.0) * delh
            h = np.where(active, h + delh, h)
            dels = q * delh
            s = np.where(active, s + dels, s)
            active &= ~(np.abs(dels / s) < EPS)
            if not active.any():
                break
        h = a1 * h
        with np.errstate(under="ignore"):
            km = np.sqrt(math.pi / (2.0 * xl)) * np.exp(-xl) / s
        rkmu[large] = km
        rk1[large] = km * (xmu + xl + 0.5 - h) / xl

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, nl + 1):
            rktemp = (xmu + i) * (2.0 / x) * rk1 + rkmu
            rkmu = rk1
            rk1 = rktemp
    return rkmu


# ---------------------------------------------------------------------------
# Incomplete gamma and its inverse
# ---------------------------------------------------------------------------


def gamma_pq(a, x):
    """Regularised lower/upper incomplete gamma (P, Q) elementwise."""
    a, x = (np.array(v) for v in np.broadcast_arrays(np.asarray(a, dtype=np.float64),
                                                      np.asarray(x, dtype=np.float64)))
    P = np.zeros_like(x)
    Q = np.ones_like(x)
    pos = x > 0
    if not pos.any():
        return P, Q
    lg = np.zeros_like(x)
    lg[pos] = _vlgamma(a[pos])

    ser = pos & (x < a + 1.0)
    if ser.any():
        aa = a[ser]
        xx = x[ser]
        ap = aa.copy()
        s = 1.0 / aa
        d = s.copy()
        active = np.ones(aa.shape, dtype=bool)
        for _ in range(MAXIT):
            ap = ap + 1.0
            d = d * xx / ap
            s = np.where(active, s + d, s)
            active &= ~(np.abs(d) < np.abs(s) * EPS)
            if not active.any():
                break
        pv = s * np.exp(aa * np.log(xx) - xx - lg[ser])
        P[ser] = pv
        Q[ser] = 1.0 - pv

    cf = pos & ~ser
    if cf.any():
        aa = a[cf]
        xx = x[cf]
        b = xx + 1.0 - aa
        c = np.full_like(xx, 1.0 / FPMIN)
        d = 1.0 / b
        h = d.copy()
        active = np.ones(aa.shape, dtype=bool)
        for i in range(1, MAXIT):
            an = -i * (i - aa)
            b = b + 2.0
            d = an * d + b
            d = np.where(np.abs(d) < FPMIN, FPMIN, d)
            c = b + an / c
            c = np.where(np.abs(c) < FPMIN, FPMIN, c)
            d = 1.0 / d
            de = d * c
            h = np.where(active, h * de, h)
            active &= ~(np.abs(de - 1.0) < EPS)
            if not active.any():
                break
        with np.errstate(under="ignore"):
            qv = np.exp(aa * np.log(xx) - xx - lg[cf]) * h
        Q[cf] = qv
        P[cf] = 1.0 - qv
    return P, Q


LOG_SERIES_EXACT = math.log(1e-17)


HALLEY_STOP = 1e-9  # a cubic step this small leaves ~1e-27 relative error


def gamma_quantile(a, p, q):
    """Inverse of the regularised lower incomplete gamma (unit scale).

    ``q`` must equal ``1 - p`` but is passed separately so that upper-tail
    probabilities keep their relative precision. Safeguarded Halley on a
    shrinking bisection bracket.
    """
    a, p, q = (np.array(v) for v in np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (a, p, q))))
    out = np.zeros(p.shape)
    out[q <= 0.0] = np.inf
    work = (p > 0.0) & (q > 0.0)
    if not work.any():
        return out
    a = a[work]
    p = p[work]
    q = q[work]
    upper = p > 0.5
    lga = _vlgamma(a)
    lga1 = _vlgamma(a + 1.0)

    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        logxs = (np.log(p) + lga1) / a
        xs = np.exp(logxs)
        z = norm_quantile(p)
        t = 1.0 / (9.0 * a)
        xw = a * (1.0 - t + z * np.sqrt(t)) ** 3
    xs = np.where(np.isfinite(xs) & (xs > 0), xs, 1.0)
    xw = np.where(np.isfinite(xw) & (xw > 0), xw, xs)

    def resid(xv):
        P, Q = gamma_pq(a, xv)
        return np.where(upper, q - Q, P - p)

    fs = resid(xs)
    fw = resid(xw)
    pick = np.abs(fw) < np.abs(fs)
    x = np.where(pick, xw, xs)
    f = np.where(pick, fw, fs)

    lo = np.zeros_like(x)
    hi = np.full_like(x, np.inf)
    active = np.ones(x.shape, dtype=bool)
    for it in range(200):
        if it:
            f = resid(x)
        hi = np.where(active & (f > 0), np.minimum(hi, x), hi)
        lo = np.where(active & (f < 0), np.maximum(lo, x), lo)
        exact = f == 0
        with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
            dens = np.exp((a - 1.0) * np.log(x) - x - lga)
            u = f / dens
            # Halley: P'' / P' = (a - 1) / x - 1
            den = 1.0 - 0.5 * u * ((a - 1.0) / x - 1.0)
            xn = np.where(np.isfinite(den) & (den > 0.5), x - u / den, x - u)
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        finite_hi = np.isfinite(hi)
        with np.errstate(invalid="ignore"):
            bis = np.where(
                finite_hi & (lo > 0),
                np.sqrt(lo * hi),
                np.where(finite_hi, 0.25 * hi, 4.0 * x),
            )
        xn = np.where(bad, bis, xn)
        xn = np.where(exact, x, xn)
        done = exact | (~bad & (np.abs(xn - x) <= HALLEY_STOP * x)) | (
            finite_hi & (hi - lo <= 1e-15 * hi)
        )
        x = np.where(active, xn, x)
        active &= ~done
        if not active.any():
            break
    # small-x series P ~ x^a / Gamma(a + 1): exact in double once x < 1e-17
    tiny = logxs < LOG_SERIES_EXACT
    with np.errstate(under="ignore"):
        x = np.where(tiny, np.exp(logxs), x)
    out[work] = x
    return out


# ---------------------------------------------------------------------------
# Standard normal
# ---------------------------------------------------------------------------

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_PLOW = 0.02425
SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)


def norm_cdf(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * _erfc(-x / SQRT2).astype(np.float64)


def norm_quantile(p):
    """Acklam's rational approximation followed by two Halley steps."""
    p = np.asarray(p, dtype=np.float64)
    x = np.empty_like(p)
    lo = p < _PLOW
    hi = p > 1.0 - _PLOW
    mid = ~(lo | hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        if lo.any():
            t = np.sqrt(-2.0 * np.log(p[lo]))
            x[lo] = (((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]) / (
                (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0)
        if hi.any():
            t = np.sqrt(-2.0 * np.log1p(-p[hi]))
            x[hi] = -(((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]) / (
                (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0)
        if mid.any():
            t = p[mid] - 0.5
            r = t * t
            x[mid] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * t / (
                ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        ok = np.isfinite(x)
        for _ in range(2):
            xo = np.where(ok, x, 0.0)
            e = np.where(xo < 0, norm_cdf(xo) - p, (1.0 - p) - 0.5 * _erfc(xo / SQRT2).astype(np.float64))
            u = e * SQRT2PI * np.exp(0.5 * xo * xo)
            x = np.where(ok, xo - u / (1.0 + 0.5 * xo * u), x)
    return x


# ---------------------------------------------------------------------------
# Delta-Laplace
# ---------------------------------------------------------------------------


def delta_laplace_cdf(y, mu, tau, delta):
    y = np.asarray(y, dtype=np.float64)
    s = np.abs(y - mu) / tau
    with np.errstate(under="ignore"):
        _, Q = gamma_pq(1.0 / delta, s**delta)
    return np.where(y >= mu, 1.0 - 0.5 * Q, 0.5 * Q)


def delta_laplace_quantile(p, mu, tau, delta):
    p = np.asarray(p, dtype=np.float64)
    pp = 2.0 * np.abs(p - 0.5)
    qq = 2.0 * np.minimum(p, 1.0 - p)
    g = gamma_quantile(1.0 / delta, pp, qq)
    return mu + np.sign(p - 0.5) * tau * g ** (1.0 / delta)


def gauss_to_delta_laplace(y, mu, tau, delta):
    """Q_S(Phi(y)) without forming Phi(y), so both tails keep precision."""
    y = np.asarray(y, dtype=np.float64)
    ay = np.abs(y) / SQRT2
    pp = _erf(ay).astype(np.float64)
    qq = _erfc(ay).astype(np.float64)
    g = gamma_quantile(1.0 / delta, pp, qq)
    return mu + np.sign(y) * tau * g ** (1.0 / delta)


# ---------------------------------------------------------------------------
# Dense linear algebra
# ---------------------------------------------------------------------------


def cholesky(A):
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        row = L[j, :j]
        dj = A[j, j] - row @ row
        if not dj > 0.0:
            raise CholeskyError(j + 1, dj)
        ljj = math.sqrt(dj)
        L[j, j] = ljj
        if j + 1 < n:
            L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ row) / ljj
    return L


def forward_solve(L, B):
    L = np.asarray(L, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    n = L.shape[0]
    U = np.empty_like(B)
    for i in range(n):
        lii = L[i, i]
        if lii == 0.0:
            raise SingularMatrixError(f"zero diagonal entry at row {i + 1}")
        U[i] = (B[i] - L[i, :i] @ U[:i]) / lii
    return U

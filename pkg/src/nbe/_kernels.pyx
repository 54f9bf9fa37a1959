# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same contract as ``nbe._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport (
    sqrt, exp, log, fabs, sinh, cosh, sin, lgamma, erf, erfc, log1p, pow, isfinite, INFINITY,
)

from ._errors import CholeskyError, SingularMatrixError

cnp.import_array()

cdef double EPS = 1e-16
cdef double FPMIN = 1e-300
cdef int MAXIT = 10000
cdef double PI = 3.141592653589793
cdef double SQRT2 = 1.4142135623730951
cdef double SQRT2PI = 2.5066282746310002

cdef double[26] RGAMMA_COEF
RGAMMA_COEF[:] = [
    1.0, 0.5772156649015329, -0.6558780715202538, -0.0420026350340952,
    0.1665386113822915, -0.0421977345555443, -0.0096219715278770,
    0.0072189432466630, -0.0011651675918591, -0.0002152416741149,
    0.0001280502823882, -0.0000201348547807, -0.0000012504934821,
    0.0000011330272320, -0.0000002056338417, 0.0000000061160950,
    0.0000000050020075, -0.0000000011812746, 0.0000000001043427,
    0.0000000000077823, -0.0000000000036968, 0.0000000000005100,
    -0.0000000000000206, -0.0000000000000054, 0.0000000000000014,
    0.0000000000000001,
]

BESSEL_CROSSOVER = 2.0


cdef void _temme_gammas(double mu, double* gam1, double* gam2,
                        double* gampl, double* gammi) noexcept nogil:
    cdef double m2 = mu * mu
    cdef double g1 = 0.0, g2 = 0.0
    cdef int k
    for k in range(25, 0, -2):
        g1 = g1 * m2 + RGAMMA_COEF[k]
    for k in range(24, -1, -2):
        g2 = g2 * m2 + RGAMMA_COEF[k]
    gam1[0] = -g1
    gam2[0] = g2
    gampl[0] = g2 + mu * g1
    gammi[0] = g2 - mu * g1


cdef double _bessel_k(double nu, double x) noexcept nogil:
    cdef int nl = <int>(nu + 0.5)
    cdef double xmu = nu - nl
    cdef double xmu2 = xmu * xmu
    cdef double rkmu, rk1, rktemp
    cdef double x2, pimu, fact, d, e, fact2, gam1, gam2, gampl, gammi
    cdef double ff, total, total1, ee, p, q, c, dd, delta
    cdef double b, h, delh, q1, q2, a1, qq, a, s, qnew, dels
    cdef int i
    if x < 2.0:
        x2 = 0.5 * x
        pimu = PI * xmu
        fact = 1.0 if fabs(pimu) < EPS else pimu / sin(pimu)
        d = -log(x2)
        e = xmu * d
        fact2 = 1.0 if fabs(e) < EPS else sinh(e) / e
        _temme_gammas(xmu, &gam1, &gam2, &gampl, &gammi)
        ff = fact * (gam1 * cosh(e) + gam2 * fact2 * d)
        total = ff
        ee = exp(e)
        p = 0.5 * ee / gampl
        q = 0.5 / (ee * gammi)
        c = 1.0
        dd = x2 * x2
        total1 = p
        for i in range(1, MAXIT):
            ff = (i * ff + p + q) / (i * i - xmu2)
            c = c * dd / i
            p = p / (i - xmu)
            q = q / (i + xmu)
            delta = c * ff
            total = total + delta
            total1 = total1 + c * (p - i * ff)
            if fabs(delta) < fabs(total) * EPS:
                break
        rkmu = total
        rk1 = total1 * 2.0 / x
    else:
        b = 2.0 * (1.0 + x)
        d = 1.0 / b
        h = d
        delh = d
        q1 = 0.0
        q2 = 1.0
        a1 = 0.25 - xmu2
        qq = a1
        c = a1
        a = -a1
        s = 1.0 + qq * delh
        for i in range(2, MAXIT):
            a -= 2 * (i - 1)
            c = -a * c / i
            qnew = (q1 - b * q2) / a
            q1 = q2
            q2 = qnew
            qq = qq + c * qnew
            b = b + 2.0
            d = 1.0 / (b + a * d)
            delh = (b * d - 1.0) * delh
            h = h + delh
            dels = qq * delh
            s = s + dels
            if fabs(dels / s) < EPS:
                break
        h = a1 * h
        rkmu = sqrt(PI / (2.0 * x)) * exp(-x) / s
        rk1 = rkmu * (xmu + x + 0.5 - h) / x
    for i in range(1, nl + 1):
        rktemp = (xmu + i) * (2.0 / x) * rk1 + rkmu
        rkmu = rk1
        rk1 = rktemp
    return rkmu



def _bcast(*args):
    """Broadcast to a common shape; return it and flat contiguous copies."""
    arrs = np.broadcast_arrays(*[np.asarray(v, dtype=np.float64) for v in args])
    return arrs[0].shape, [np.ascontiguousarray(v.reshape(-1)) for v in arrs]


def bessel_k(double nu, x):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _bessel_k(nu, xv[i])
    return out


cdef void _gamma_pq(double a, double x, double* P, double* Q) noexcept nogil:
    cdef double lnpre, ap, s, d, b, c, h, an, de
    cdef int i
    if x <= 0.0:
        P[0] = 0.0
        Q[0] = 1.0
        return
    lnpre = a * log(x) - x - lgamma(a)
    if x < a + 1.0:
        ap = a
        s = 1.0 / a
        d = s
        for i in range(MAXIT):
            ap = ap + 1.0
            d = d * x / ap
            s = s + d
            if fabs(d) < fabs(s) * EPS:
                break
        P[0] = s * exp(lnpre)
        Q[0] = 1.0 - P[0]
    else:
        b = x + 1.0 - a
        c = 1.0 / FPMIN
        d = 1.0 / b
        h = d
        for i in range(1, MAXIT):
            an = -i * (i - a)
            b = b + 2.0
            d = an * d + b
            if fabs(d) < FPMIN:
                d = FPMIN
            c = b + an / c
            if fabs(c) < FPMIN:
                c = FPMIN
            d = 1.0 / d
            de = d * c
            h = h * de
            if fabs(de - 1.0) < EPS:
                break
        Q[0] = exp(lnpre) * h
        P[0] = 1.0 - Q[0]


def gamma_pq(a, x):
    shape, (a, x,) = _bcast(a, x)
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], i
    P = np.empty(n, dtype=np.float64)
    Q = np.empty(n, dtype=np.float64)
    cdef double[::1] pv = P
    cdef double[::1] qv = Q
    with nogil:
        for i in range(n):
            _gamma_pq(av[i], xv[i], &pv[i], &qv[i])
    return P.reshape(shape), Q.reshape(shape)


cdef double _norm_cdf(double x) noexcept nogil:
    return 0.5 * erfc(-x / SQRT2)


cdef double _norm_quantile(double p) noexcept nogil:
    cdef double t, r, x, e, u
    cdef int k
    if p <= 0.0:
        return -INFINITY
    if p >= 1.0:
        return INFINITY
    if p < 0.02425:
        t = sqrt(-2.0 * log(p))
        x = (((((-7.784894002430293e-03 * t - 3.223964580411365e-01) * t - 2.400758277161838e00) * t
               - 2.549732539343734e00) * t + 4.374664141464968e00) * t + 2.938163982698783e00) / (
            (((7.784695709041462e-03 * t + 3.224671290700398e-01) * t + 2.445134137142996e00) * t
             + 3.754408661907416e00) * t + 1.0)
    elif p > 1.0 - 0.02425:
        t = sqrt(-2.0 * log1p(-p))
        x = -(((((-7.784894002430293e-03 * t - 3.223964580411365e-01) * t - 2.400758277161838e00) * t
                - 2.549732539343734e00) * t + 4.374664141464968e00) * t + 2.938163982698783e00) / (
            (((7.784695709041462e-03 * t + 3.224671290700398e-01) * t + 2.445134137142996e00) * t
             + 3.754408661907416e00) * t + 1.0)
    else:
        t = p - 0.5
        r = t * t
        x = (((((-3.969683028665376e01 * r + 2.209460984245205e02) * r - 2.759285104469687e02) * r
               + 1.383577518672690e02) * r - 3.066479806614716e01) * r + 2.506628277459239e00) * t / (
            ((((-5.447609879822406e01 * r + 1.615858368580409e02) * r - 1.556989798598866e02) * r
              + 6.680131188771972e01) * r - 1.328068155288572e01) * r + 1.0)
    for k in range(2):
        if x < 0:
            e = _norm_cdf(x) - p
        else:
            e = (1.0 - p) - 0.5 * erfc(x / SQRT2)
        u = e * SQRT2PI * exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


def norm_cdf(x):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _norm_cdf(xv[i])
    return out


def norm_quantile(p):
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _norm_quantile(pv[i])
    return out


cdef inline double _resid(double a, double x, double p, double q, bint upper) noexcept nogil:
    cdef double P, Q
    _gamma_pq(a, x, &P, &Q)
    if upper:
        return q - Q
    return P - p


cdef double HALLEY_STOP = 1e-9  # a cubic step this small leaves ~1e-27 relative error


cdef double LOG_SERIES_EXACT = -39.14394658089878  # log(1e-17)


cdef double _gamma_quantile(double a, double p, double q) noexcept nogil:
    cdef double lga, lga1, xs, xw, z, t, x, fs, fw, lo, hi, f, dens, xn, u, den
    cdef bint upper, bad
    cdef int it
    if q <= 0.0:
        return INFINITY
    if p <= 0.0:
        return 0.0
    upper = p > 0.5
    lga = lgamma(a)
    lga1 = lgamma(a + 1.0)
    xs = (log(p) + lga1) / a
    # small-x series P ~ x^a / Gamma(a + 1): exact in double once x < 1e-17
    if xs < LOG_SERIES_EXACT:
        return exp(xs)
    xs = exp(xs)
    if not (isfinite(xs) and xs > 0):
        xs = 1.0
    z = _norm_quantile(p)
    t = 1.0 / (9.0 * a)
    xw = a * pow(1.0 - t + z * sqrt(t), 3)
    if not (isfinite(xw) and xw > 0):
        xw = xs
    fs = _resid(a, xs, p, q, upper)
    fw = _resid(a, xw, p, q, upper)
    if fabs(fw) < fabs(fs):
        x = xw
        f = fw
    else:
        x = xs
        f = fs
    lo = 0.0
    hi = INFINITY
    for it in range(200):
        if f == 0.0:
            return x
        if f > 0:
            if x < hi:
                hi = x
        else:
            if x > lo:
                lo = x
        dens = exp((a - 1.0) * log(x) - x - lga)
        u = f / dens
        # Halley: P'' / P' = (a - 1) / x - 1
        den = 1.0 - 0.5 * u * ((a - 1.0) / x - 1.0)
        if isfinite(den) and den > 0.5:
            xn = x - u / den
        else:
            xn = x - u
        bad = (not isfinite(xn)) or xn <= lo or xn >= hi
        if bad:
            if isfinite(hi) and lo > 0:
                xn = sqrt(lo * hi)
            elif isfinite(hi):
                xn = 0.25 * hi
            else:
                xn = 4.0 * x
        if (not bad and fabs(xn - x) <= HALLEY_STOP * x) or (isfinite(hi) and hi - lo <= 1e-15 * hi):
            return xn
        x = xn
        f = _resid(a, x, p, q, upper)
    return x


def gamma_quantile(a, p, q):
    shape, (a, p, q,) = _bcast(a, p, q)
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _gamma_quantile(av[i], pv[i], qv[i])
    return out.reshape(shape)


cdef inline double _sign(double v) noexcept nogil:
    if v > 0:
        return 1.0
    if v < 0:
        return -1.0
    return 0.0


def delta_laplace_cdf(y, mu, tau, delta):
    shape, (y, mu, tau, delta,) = _bcast(y, mu, tau, delta)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] tv = np.ascontiguousarray(tau, dtype=np.float64)
    cdef double[::1] dv = np.ascontiguousarray(delta, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], i
    cdef double s, P, Q
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            s = fabs(yv[i] - mv[i]) / tv[i]
            _gamma_pq(1.0 / dv[i], pow(s, dv[i]), &P, &Q)
            if yv[i] >= mv[i]:
                ov[i] = 1.0 - 0.5 * Q
            else:
                ov[i] = 0.5 * Q
    return out.reshape(shape)


def delta_laplace_quantile(p, mu, tau, delta):
    shape, (p, mu, tau, delta,) = _bcast(p, mu, tau, delta)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] tv = np.ascontiguousarray(tau, dtype=np.float64)
    cdef double[::1] dv = np.ascontiguousarray(delta, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0], i
    cdef double pp, qq, g
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            pp = 2.0 * fabs(pv[i] - 0.5)
            qq = 2.0 * (pv[i] if pv[i] < 1.0 - pv[i] else 1.0 - pv[i])
            g = _gamma_quantile(1.0 / dv[i], pp, qq)
            ov[i] = mv[i] + _sign(pv[i] - 0.5) * tv[i] * pow(g, 1.0 / dv[i])
    return out.reshape(shape)


def gauss_to_delta_laplace(y, mu, tau, delta):
    shape, (y, mu, tau, delta,) = _bcast(y, mu, tau, delta)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] tv = np.ascontiguousarray(tau, dtype=np.float64)
    cdef double[::1] dv = np.ascontiguousarray(delta, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], i
    cdef double ay, g
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        for i in range(n):
            ay = fabs(yv[i]) / SQRT2
            g = _gamma_quantile(1.0 / dv[i], erf(ay), erfc(ay))
            ov[i] = mv[i] + _sign(yv[i]) * tv[i] * pow(g, 1.0 / dv[i])
    return out.reshape(shape)


def cholesky(A):
    cdef double[:, ::1] av = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], i, j, k
    L = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] lv = L
    cdef double s, ljj
    cdef Py_ssize_t bad = -1
    with nogil:
        for j in range(n):
            s = av[j, j]
            for k in range(j):
                s = s - lv[j, k] * lv[j, k]
            if not s > 0.0:
                bad = j
                break
            ljj = sqrt(s)
            lv[j, j] = ljj
            for i in range(j + 1, n):
                s = av[i, j]
                for k in range(j):
                    s = s - lv[i, k] * lv[j, k]
                lv[i, j] = s / ljj
    if bad >= 0:
        s = av[bad, bad]
        for k in range(bad):
            s = s - lv[bad, k] * lv[bad, k]
        raise CholeskyError(bad + 1, s)
    return L


def forward_solve(L, B):
    cdef double[:, ::1] lv = np.ascontiguousarray(L, dtype=np.float64)
    Bc = np.ascontiguousarray(B, dtype=np.float64)
    if Bc.ndim == 1:
        return forward_solve(L, Bc[:, None])[:, 0]
    cdef double[:, ::1] bv = Bc
    cdef Py_ssize_t n = lv.shape[0], k = bv.shape[1], i, j, c
    U = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] uv = U
    cdef double lii
    for i in range(n):
        lii = lv[i, i]
        if lii == 0.0:
            raise SingularMatrixError(f"zero diagonal entry at row {i + 1}")
        for c in range(k):
            uv[i, c] = bv[i, c]
        for j in range(i):
            for c in range(k):
                uv[i, c] -= lv[i, j] * uv[j, c]
        for c in range(k):
            uv[i, c] /= lii
    return U

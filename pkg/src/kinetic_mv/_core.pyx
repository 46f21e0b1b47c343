# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Must stay bit-compatible with ``_pycore``.

Build with -ffp-contract=off: a fused multiply-add would change rounding
and break equality with the numpy fallback.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport frexp, sqrt, fabs, isfinite
from libc.stdint cimport uint32_t, uint64_t, int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "compiled"

DEF NPARTIALS = 128

cdef double TWO_M53 = 2.0 ** -53
cdef double SQRT_HALF = 0.70710678118654752440
cdef double LN2_HI = 6.93147180369123816490e-01
cdef double LN2_LO = 1.90821492927058770002e-10
cdef double BLOWUP_LIMIT = 1e8

cdef double[11] LOG_SERIES
cdef double[8] PA, PB, PC, PD, PE, PF

cdef int _j
for _j in range(11):
    LOG_SERIES[_j] = 1.0 / (2 * (_j + 1) + 1)

PA[:] = [3.3871328727963666080e0, 1.3314166789178437745e+2,
         1.9715909503065514427e+3, 1.3731693765509461125e+4,
         4.5921953931549871457e+4, 6.7265770927008700853e+4,
         3.3430575583588128105e+4, 2.5090809287301226727e+3]
PB[:] = [1.0, 4.2313330701600911252e+1, 6.8718700749205790830e+2,
         5.3941960214247511077e+3, 2.1213794301586595867e+4,
         3.9307895800092710610e+4, 2.8729085735721942674e+4,
         5.2264952788528545610e+3]
PC[:] = [1.42343711074968357734e0, 4.63033784615654529590e0,
         5.76949722146069140550e0, 3.64784832476320460504e0,
         1.27045825245236838258e0, 2.41780725177450611770e-1,
         2.27238449892691845833e-2, 7.74545014278341407640e-4]
PD[:] = [1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
         6.89767334985100004550e-1, 1.48103976427480074590e-1,
         1.51986665636164571966e-2, 5.47593808499534494600e-4,
         1.05075007164441684324e-9]
PE[:] = [6.65790464350110377720e0, 5.46378491116411436990e0,
         1.78482653991729133580e0, 2.96560571828504891230e-1,
         2.65321895265761230930e-2, 1.24266094738807843860e-3,
         2.71155556874348757815e-5, 2.01033439929228813265e-7]
PF[:] = [1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
         1.48753612908506148525e-2, 7.86869131145613259100e-4,
         1.84631831751005468180e-5, 1.42151175831644588870e-7,
         2.04426310338993978564e-15]


cdef inline void _philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t c0 = c[0], c1 = c[1], c2 = c[2], c3 = c[3]
    cdef int r
    for r in range(10):
        p0 = <uint64_t>0xD2511F53 * c0
        p1 = <uint64_t>0xCD9E8D57 * c2
        c0 = <uint32_t>(p1 >> 32) ^ c1 ^ k0
        c1 = <uint32_t>p1
        c2 = <uint32_t>(p0 >> 32) ^ c3 ^ k1
        c3 = <uint32_t>p0
        k0 = k0 + <uint32_t>0x9E3779B9
        k1 = k1 + <uint32_t>0xBB67AE85
    c[0] = c0
    c[1] = c1
    c[2] = c2
    c[3] = c3


cdef inline double _unit(uint32_t hi, uint32_t lo) noexcept nogil:
    cdef uint64_t bits = ((<uint64_t>hi << 32) | lo) >> 11
    return (<double>bits + 0.5) * TWO_M53


cdef inline double _poly(double* c, double r) noexcept nogil:
    cdef double acc = c[7] * r + c[6]
    cdef int i
    for i in range(5, -1, -1):
        acc = acc * r + c[i]
    return acc


cdef inline double _ln(double x) noexcept nogil:
    cdef int ei
    cdef double m = frexp(x, &ei)
    cdef double e, f, s, z, acc, t, logm
    cdef int i
    if m < SQRT_HALF:
        m = m * 2.0
        ei = ei - 1
    e = <double>ei
    f = m - 1.0
    s = f / (2.0 + f)
    z = s * s
    acc = LOG_SERIES[10] * z
    for i in range(9, -1, -1):
        acc = (acc + LOG_SERIES[i]) * z
    t = 2.0 * s
    logm = t + t * acc
    return e * LN2_HI + (logm + e * LN2_LO)


cdef inline double _ppf(double p) noexcept nogil:
    cdef double q = p - 0.5
    cdef double r, val
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(PA, r) / _poly(PB, r)
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = sqrt(-_ln(r))
    if r <= 5.0:
        r = r - 1.6
        val = _poly(PC, r) / _poly(PD, r)
    else:
        r = r - 5.0
        val = _poly(PE, r) / _poly(PF, r)
    if q < 0.0:
        val = -val
    return val


cdef inline void _block(uint64_t seed, int64_t pid, uint32_t tag, uint64_t step,
                        double* u) noexcept nogil:
    cdef uint32_t c[4]
    c[0] = <uint32_t>(<uint64_t>pid)
    c[1] = tag
    c[2] = <uint32_t>step
    c[3] = <uint32_t>(step >> 32)
    _philox(c, <uint32_t>seed, <uint32_t>(seed >> 32))
    u[0] = _unit(c[0], c[1])
    u[1] = _unit(c[2], c[3])


cdef inline double _first_normal(uint64_t seed, int64_t pid, uint64_t step) noexcept nogil:
    cdef double u[2]
    _block(seed, pid, 0, step, u)
    return _ppf(u[0])


def philox4x32(c0, c1, c2, c3, k0, k1):
    cdef uint64_t[::1] a0 = np.ascontiguousarray(c0, dtype=np.uint64).ravel()
    cdef uint64_t[::1] a1 = np.ascontiguousarray(c1, dtype=np.uint64).ravel()
    cdef uint64_t[::1] a2 = np.ascontiguousarray(c2, dtype=np.uint64).ravel()
    cdef uint64_t[::1] a3 = np.ascontiguousarray(c3, dtype=np.uint64).ravel()
    cdef Py_ssize_t n = a0.shape[0], i
    cdef uint32_t c[4]
    out = np.empty((4, n), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    for i in range(n):
        c[0] = <uint32_t>a0[i]
        c[1] = <uint32_t>a1[i]
        c[2] = <uint32_t>a2[i]
        c[3] = <uint32_t>a3[i]
        _philox(c, <uint32_t>k0, <uint32_t>k1)
        o[0, i] = c[0]
        o[1, i] = c[1]
        o[2, i] = c[2]
        o[3, i] = c[3]
    return out[0], out[1], out[2], out[3]


def ln(x):
    cdef double[::1] a = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty(a.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        o[i] = _ln(a[i])
    return out.reshape(np.shape(x))


def norm_ppf(p):
    cdef double[::1] a = np.ascontiguousarray(p, dtype=np.float64).ravel()
    out = np.empty(a.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        o[i] = _ppf(a[i])
    return out.reshape(np.shape(p))


def uniforms(seed, ids, step, Py_ssize_t count, domain):
    cdef int64_t[::1] pid = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t n = pid.shape[0], i, b
    cdef uint64_t s = <uint64_t>int(seed), st = <uint64_t>int(step)
    cdef uint32_t dom = <uint32_t>(int(domain) << 24)
    cdef double u[2]
    out = np.empty((n, count))
    cdef double[:, ::1] o = out
    for i in range(n):
        for b in range((count + 1) // 2):
            _block(s, pid[i], dom | <uint32_t>b, st, u)
            o[i, 2 * b] = u[0]
            if 2 * b + 1 < count:
                o[i, 2 * b + 1] = u[1]
    return out


def normals(seed, ids, step, Py_ssize_t count, domain):
    cdef int64_t[::1] pid = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t n = pid.shape[0], i, b
    cdef uint64_t s = <uint64_t>int(seed), st = <uint64_t>int(step)
    cdef uint32_t dom = <uint32_t>(int(domain) << 24)
    cdef double u[2]
    out = np.empty((n, count))
    cdef double[:, ::1] o = out
    for i in range(n):
        for b in range((count + 1) // 2):
            _block(s, pid[i], dom | <uint32_t>b, st, u)
            o[i, 2 * b] = _ppf(u[0])
            if 2 * b + 1 < count:
                o[i, 2 * b + 1] = _ppf(u[1])
    return out


# Correctly rounded summation (Shewchuk partials, same final rounding as math.fsum).

cdef inline int _grow(double* p, int n, double x) noexcept nogil:
    cdef int i = 0, j
    cdef double y, hi, lo, bv
    for j in range(n):
        y = p[j]
        # branch-free two-sum: hi + lo == x + y exactly
        hi = x + y
        bv = hi - x
        lo = (x - (hi - bv)) + (y - bv)
        if lo != 0.0:
            p[i] = lo
            i += 1
        x = hi
    if x != 0.0:
        p[i] = x
        i += 1
    return i


cdef inline int _safe_grow(double* p, int n, double x) noexcept nogil:
    # -1 once a partial stops being finite (overflow or non-finite input);
    # callers then fall back to the naive sum
    if not isfinite(x):
        return -1
    n = _grow(p, n, x)
    if n > 0 and not isfinite(p[n - 1]):
        return -1
    return n


cdef inline double _round_partials(double* p, int n) noexcept nogil:
    cdef double hi = 0.0, lo = 0.0, x, y, yr
    if n > 0:
        n -= 1
        hi = p[n]
        while n > 0:
            x = hi
            n -= 1
            y = p[n]
            hi = x + y
            yr = hi - x
            lo = y - yr
            if lo != 0.0:
                break
        if n > 0 and ((lo < 0.0 and p[n - 1] < 0.0) or (lo > 0.0 and p[n - 1] > 0.0)):
            y = lo * 2.0
            x = hi + y
            yr = x - hi
            if y == yr:
                hi = x
    return hi


cdef double _fsum(const double* a, Py_ssize_t n, Py_ssize_t stride) noexcept nogil:
    cdef double p[NPARTIALS]
    cdef int np_ = 0
    cdef Py_ssize_t i
    cdef double naive = 0.0
    for i in range(n):
        naive += a[i * stride]
    if not isfinite(naive):
        return naive
    for i in range(n):
        np_ = _safe_grow(p, np_, a[i * stride])
        if np_ < 0:
            return naive
    return _round_partials(p, np_)


def exact_sum(values):
    cdef double[::1] a = np.ascontiguousarray(values, dtype=np.float64).ravel()
    return _fsum(&a[0], a.shape[0], 1) if a.shape[0] else 0.0


def exact_mean_columns(a):
    cdef double[:, ::1] v = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], d = v.shape[1], j
    out = np.empty(d)
    for j in range(d):
        out[j] = _fsum(&v[0, j], n, d) / n
    return out


cdef double _moment_sum(const double* x, const double* y, Py_ssize_t n, int k, int l) noexcept nogil:
    cdef double p[NPARTIALS]
    cdef int np_ = 0, j
    cdef Py_ssize_t i
    cdef double px, py, naive = 0.0
    for i in range(n):
        px = 1.0
        py = 1.0
        for j in range(k):
            px = px * x[i]
        for j in range(l):
            py = py * y[i]
        naive += px * py
        if np_ >= 0:
            np_ = _safe_grow(p, np_, px * py)
    if np_ < 0 or not isfinite(naive):
        return naive
    return _round_partials(p, np_)


def moment_table(x, y, int order, int nthreads=1):
    """m[k, l] = mean(x^k y^l) for k + l <= order, each entry correctly rounded."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0]
    cdef int idx, k, l, nacc = (order + 1) * (order + 2) // 2
    ks = np.empty(nacc, dtype=np.int32)
    ls = np.empty(nacc, dtype=np.int32)
    idx = 0
    for k in range(order + 1):
        for l in range(order + 1 - k):
            ks[idx] = k
            ls[idx] = l
            idx += 1
    cdef int[::1] kv = ks, lv = ls
    vals = np.empty(nacc)
    cdef double[::1] v = vals
    if n == 0:
        raise ValueError("moment table of an empty sample")
    for idx in prange(nacc, nogil=True, num_threads=max(nthreads, 1), schedule="dynamic"):
        v[idx] = _moment_sum(&xv[0], &yv[0], n, kv[idx], lv[idx]) / n
    out = np.zeros((order + 1, order + 1))
    out[ks, ls] = vals
    return out


def fhn_em_step(double[::1] x, double[::1] y, ids, theta, double noise_scale,
                double dt, seed, step, int nthreads=1):
    """Fused Euler-Maruyama step for the FhN particle system (in place)."""
    cdef int64_t[::1] pid = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], i
    cdef double current = theta[0], abar = theta[1], bbar = theta[2]
    cdef double cbar = theta[3], lam = theta[4]
    cdef uint64_t s = <uint64_t>int(seed), st = <uint64_t>int(step)
    cdef double xbar = _fsum(&x[0], n, 1) / n
    cdef double xi, b1, force, b2, xn, yn, xo, yo
    cdef int bad = 0
    for i in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        xi = _first_normal(s, pid[i], st)
        xo = x[i]
        yo = y[i]
        b1 = xo - xo * xo * xo / 3.0 - yo + current
        force = -lam * (xo - xbar)
        b2 = cbar * xo + abar - bbar * yo
        xn = xo + (b1 + force) * dt + noise_scale * xi
        yn = yo + b2 * dt
        x[i] = xn
        y[i] = yn
        if not (isfinite(xn) and isfinite(yn)) or fabs(xn) > BLOWUP_LIMIT or fabs(yn) > BLOWUP_LIMIT:
            bad += 1
    return bad

"""Pure numpy implementation of the numerical kernels.

This module mirrors ``_core.pyx`` operation by operation. Every floating
point expression is written with the same association order as the
compiled version, and all sums go through correctly rounded summation, so
both backends return bit-identical arrays.
"""

import math

import numpy as np

MASK32 = np.uint64(0xFFFFFFFF)
PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
PHILOX_ROUNDS = 10

TWO_M53 = 2.0 ** -53
SQRT_HALF = 0.70710678118654752440
LN2_HI = 6.93147180369123816490e-01
LN2_LO = 1.90821492927058770002e-10

# 1/(2j+1), j = 1..11, for log(m) = 2s(1 + z/3 + z^2/5 + ...)
LOG_SERIES = tuple(1.0 / (2 * j + 1) for j in range(1, 12))

# Wichura AS241 (PPND16)
PPND_A = (3.3871328727963666080e0, 1.3314166789178437745e+2,
          1.9715909503065514427e+3, 1.3731693765509461125e+4,
          4.5921953931549871457e+4, 6.7265770927008700853e+4,
          3.3430575583588128105e+4, 2.5090809287301226727e+3)
PPND_B = (1.0, 4.2313330701600911252e+1, 6.8718700749205790830e+2,
          5.3941960214247511077e+3, 2.1213794301586595867e+4,
          3.9307895800092710610e+4, 2.8729085735721942674e+4,
          5.2264952788528545610e+3)
PPND_C = (1.42343711074968357734e0, 4.63033784615654529590e0,
          5.76949722146069140550e0, 3.64784832476320460504e0,
          1.27045825245236838258e0, 2.41780725177450611770e-1,
          2.27238449892691845833e-2, 7.74545014278341407640e-4)
PPND_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
          6.89767334985100004550e-1, 1.48103976427480074590e-1,
          1.51986665636164571966e-2, 5.47593808499534494600e-4,
          1.05075007164441684324e-9)
PPND_E = (6.65790464350110377720e0, 5.46378491116411436990e0,
          1.78482653991729133580e0, 2.96560571828504891230e-1,
          2.65321895265761230930e-2, 1.24266094738807843860e-3,
          2.71155556874348757815e-5, 2.01033439929228813265e-7)
PPND_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
          1.48753612908506148525e-2, 7.86869131145613259100e-4,
          1.84631831751005468180e-5, 1.42151175831644588870e-7,
          2.04426310338993978564e-15)

BLOWUP_LIMIT = 1e8

BACKEND = "python"


def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 on uint64 arrays holding 32-bit words."""
    c0 = np.asarray(c0, dtype=np.uint64)
    c1 = np.asarray(c1, dtype=np.uint64)
    c2 = np.asarray(c2, dtype=np.uint64)
    c3 = np.asarray(c3, dtype=np.uint64)
    k0 = int(k0)
    k1 = int(k1)
    for _ in range(PHILOX_ROUNDS):
        p0 = c0 * PHILOX_M0
        p1 = c2 * PHILOX_M1
        uk0 = np.uint64(k0)
        uk1 = np.uint64(k1)
        c0, c1, c2, c3 = ((p1 >> np.uint64(32)) ^ c1 ^ uk0, p1 & MASK32,
                          (p0 >> np.uint64(32)) ^ c3 ^ uk1, p0 & MASK32)
        k0 = (k0 + PHILOX_W0) & 0xFFFFFFFF
        k1 = (k1 + PHILOX_W1) & 0xFFFFFFFF
    return c0, c1, c2, c3


def _words_to_unit(hi, lo):
    bits = ((hi << np.uint64(32)) | lo) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * TWO_M53


def _poly(coefs, r):
    acc = coefs[7] * r + coefs[6]
    for c in coefs[5::-1]:
        acc = acc * r + c
    return acc


def ln(x):
    """Natural log from frexp and an atanh series (basic IEEE ops only)."""
    m, e = np.frexp(np.asarray(x, dtype=np.float64))
    small = m < SQRT_HALF
    m = np.where(small, m * 2.0, m)
    e = np.where(small, e - 1, e).astype(np.float64)
    f = m - 1.0
    s = f / (2.0 + f)
    z = s * s
    acc = LOG_SERIES[10] * z
    for c in LOG_SERIES[9::-1]:
        acc = (acc + c) * z
    t = 2.0 * s
    logm = t + t * acc
    return e * LN2_HI + (logm + e * LN2_LO)


def norm_ppf(p):
    """Standard normal quantile for p in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    r = 0.180625 - q * q
    central = q * _poly(PPND_A, r) / _poly(PPND_B, r)
    rt = np.where(q < 0.0, p, 1.0 - p)
    rt = np.sqrt(-ln(rt))
    r1 = rt - 1.6
    mid = _poly(PPND_C, r1) / _poly(PPND_D, r1)
    r2 = rt - 5.0
    far = _poly(PPND_E, r2) / _poly(PPND_F, r2)
    tail = np.where(rt <= 5.0, mid, far)
    tail = np.where(q < 0.0, -tail, tail)
    return np.where(np.abs(q) <= 0.425, central, tail)


def _counters(ids, domain, block, step):
    ids = np.asarray(ids, dtype=np.int64).astype(np.uint64)
    c0 = ids & MASK32
    c1 = np.full_like(ids, (int(domain) << 24) | int(block))
    c2 = np.full_like(ids, int(step) & 0xFFFFFFFF)
    c3 = np.full_like(ids, (int(step) >> 32) & 0xFFFFFFFF)
    return c0, c1, c2, c3


def uniforms(seed, ids, step, count, domain):
    """Uniforms in (0, 1), shape (len(ids), count), one stream per id."""
    seed = int(seed)
    k0, k1 = seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF
    n = len(ids)
    out = np.empty((n, count), dtype=np.float64)
    for block in range((count + 1) // 2):
        w0, w1, w2, w3 = philox4x32(*_counters(ids, domain, block, step), k0, k1)
        out[:, 2 * block] = _words_to_unit(w0, w1)
        if 2 * block + 1 < count:
            out[:, 2 * block + 1] = _words_to_unit(w2, w3)
    return out


def normals(seed, ids, step, count, domain):
    """Standard normals, shape (len(ids), count), one stream per id."""
    return norm_ppf(uniforms(seed, ids, step, count, domain))


def exact_sum(values):
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    # left-to-right naive sum first, as in the compiled core: a non-finite
    # result (inf, nan, overflow) is returned as is
    with np.errstate(all="ignore"):
        naive = float(np.add.accumulate(a)[-1])
    if not math.isfinite(naive):
        return naive
    try:
        return math.fsum(a.tolist())
    except OverflowError:
        return naive


def exact_mean_columns(a):
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    return np.array([exact_sum(a[:, j]) / n for j in range(a.shape[1])])


def moment_table(x, y, order, nthreads=1):
    """Correctly rounded m[k, l] = mean(x^k y^l) for k + l <= order."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("moment table of an empty sample")
    with np.errstate(over="ignore", invalid="ignore"):
        return _moment_table(x, y, order, n)


def _moment_table(x, y, order, n):
    px = [np.ones_like(x)]
    py = [np.ones_like(y)]
    for _ in range(order):
        px.append(px[-1] * x)
        py.append(py[-1] * y)
    out = np.zeros((order + 1, order + 1))
    for k in range(order + 1):
        for l in range(order + 1 - k):
            out[k, l] = exact_sum(px[k] * py[l]) / n
    return out


def fhn_em_step(x, y, ids, theta, noise_scale, dt, seed, step, nthreads=1):
    """One fused Euler-Maruyama step of the FhN particle system, in place.

    ``theta`` is (I, a_bar, b_bar, c_bar, lambda). Returns the number of
    particles whose new state is non-finite or beyond the blow-up limit.
    """
    current, abar, bbar, cbar, lam = theta
    xbar = exact_sum(x) / x.shape[0]
    xi = normals(seed, ids, step, 1, 0)[:, 0]
    b1 = x - x * x * x / 3.0 - y + current
    force = -lam * (x - xbar)
    b2 = cbar * x + abar - bbar * y
    xn = x + (b1 + force) * dt + noise_scale * xi
    yn = y + b2 * dt
    x[:] = xn
    y[:] = yn
    bad = ~(np.isfinite(xn) & np.isfinite(yn)) | (np.abs(xn) > BLOWUP_LIMIT) | (np.abs(yn) > BLOWUP_LIMIT)
    return int(np.count_nonzero(bad))

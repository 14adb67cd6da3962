# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numerical kernels for the acceptance gate.

Function-for-function twin of `_kernels_py`; selected automatically at
import by `ilws_forge.stats.backend` when built.  Keep both backends in
lockstep: the test suite runs the full oracle comparison against each.
"""

from libc.math cimport INFINITY, asin, erfc, exp, fabs, lgamma, log, log1p, sqrt
from libc.stdlib cimport free, malloc

BACKEND_NAME = "compiled"

DEF SQRT2 = 1.4142135623730951


# ---------------------------------------------------------------------------
# Normal distribution
# ---------------------------------------------------------------------------


cdef double _norm_sf(double z) nogil:
    return 0.5 * erfc(z / SQRT2)


def norm_sf(double z):
    """Upper tail P(Z >= z) of the standard normal."""
    return _norm_sf(z)


cdef double[8] P0 = [
    3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3]
cdef double[8] Q0 = [
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
    2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
    5.2264952788528545610e3]
cdef double[8] P1 = [
    1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
    3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4]
cdef double[8] Q1 = [
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
    1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9]
cdef double[8] P2 = [
    6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
    2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7]
cdef double[8] Q2 = [
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
    7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15]


cdef double _ratpoly(double r, double* num, double* den) nogil:
    cdef double n = 0.0
    cdef double d = 0.0
    cdef int i
    for i in range(7, -1, -1):
        n = n * r + num[i]
        d = d * r + den[i]
    return n / d


cdef double _ndtri(double p) nogil:
    cdef double q, r, val
    if p <= 0.0:
        return -INFINITY
    if p >= 1.0:
        return INFINITY
    q = p - 0.5
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _ratpoly(r, P0, Q0)
    r = p if q < 0 else 1.0 - p
    r = sqrt(-log(r))
    if r <= 5.0:
        val = _ratpoly(r - 1.6, P1, Q1)
    else:
        val = _ratpoly(r - 5.0, P2, Q2)
    return -val if q < 0 else val


def ndtri(double p):
    """Inverse standard normal CDF (PPND16)."""
    return _ndtri(p)


# ---------------------------------------------------------------------------
# Student t survival function
# ---------------------------------------------------------------------------


cdef double _betacf(double a, double b, double x) nogil:
    cdef double tiny = 1e-300
    cdef double qab = a + b
    cdef double qap = a + 1.0
    cdef double qam = a - 1.0
    cdef double c = 1.0
    cdef double d = 1.0 - qab * x / qap
    cdef double h, aa, delta
    cdef int m, m2
    if fabs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if fabs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if fabs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if fabs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if fabs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < 3e-16:
            break
    return h


cdef double _betainc_reg(double a, double b, double x) nogil:
    cdef double ln_front, front
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log1p(-x)
    front = exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def betainc_reg(double a, double b, double x):
    """Regularized incomplete beta I_x(a, b)."""
    return _betainc_reg(a, b, x)


cdef double _t_sf(double t, double df) nogil:
    cdef double x, half_tail
    if t == INFINITY:
        return 0.0
    if t == -INFINITY:
        return 1.0
    x = df / (df + t * t)
    half_tail = 0.5 * _betainc_reg(0.5 * df, 0.5, x)
    return half_tail if t >= 0 else 1.0 - half_tail


def t_sf(double t, double df):
    """Upper tail P(T_df >= t)."""
    return _t_sf(t, df)


# ---------------------------------------------------------------------------
# Welch's t-test
# ---------------------------------------------------------------------------


cdef void _mean_var(double* xs, int n, double* mean, double* var) nogil:
    cdef double m = 0.0
    cdef double acc = 0.0
    cdef double d
    cdef int i
    for i in range(n):
        m += xs[i]
    m /= n
    if n >= 2:
        for i in range(n):
            d = xs[i] - m
            acc += d * d
        acc /= (n - 1)
    mean[0] = m
    var[0] = acc


cdef double* _to_cdoubles(seq, int* out_n) except NULL:
    cdef int n = len(seq)
    cdef double* buf = <double*> malloc(n * sizeof(double))
    cdef int i
    if buf == NULL:
        raise MemoryError()
    for i in range(n):
        buf[i] = <double> seq[i]
    out_n[0] = n
    return buf


def welch_t(prev, new):
    """Returns (t, df, p) for H1: mean(new) > mean(prev); degenerate rule on two constants."""
    cdef int n1 = 0, n2 = 0
    cdef double* a = _to_cdoubles(prev, &n1)
    cdef double* b = NULL
    cdef double m1 = 0, v1 = 0, m2 = 0, v2 = 0, se1, se2, se, t, df, diff
    try:
        b = _to_cdoubles(new, &n2)
        _mean_var(a, n1, &m1, &v1)
        _mean_var(b, n2, &m2, &v2)
    finally:
        free(a)
        if b != NULL:
            free(b)
    if v1 == 0.0 and v2 == 0.0:
        diff = m2 - m1
        df = <double>(n1 + n2 - 2)
        if diff > 0:
            return INFINITY, df, 0.0
        if diff < 0:
            return -INFINITY, df, 1.0
        return 0.0, df, 1.0
    se1 = v1 / n1
    se2 = v2 / n2
    se = se1 + se2
    t = (m2 - m1) / sqrt(se)
    df = se * se / (se1 * se1 / (n1 - 1) + se2 * se2 / (n2 - 1))
    return t, df, _t_sf(t, df)


# ---------------------------------------------------------------------------
# Shapiro-Wilk (Royston 1995)
# ---------------------------------------------------------------------------

cdef double[6] SW_C1 = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056]
cdef double[6] SW_C2 = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633]
cdef double[4] SW_C3 = [0.5440, -0.39978, 0.025054, -6.714e-4]
cdef double[4] SW_C4 = [1.3822, -0.77857, 0.062767, -0.0020322]
cdef double[4] SW_C5 = [-1.5861, -0.31082, -0.083751, 0.0038915]
cdef double[3] SW_C6 = [-0.4803, -0.082676, 0.0030302]

DEF PI6 = 1.90985931710274403
DEF STQR = 1.04719755119659775
DEF SQRT_HALF = 0.7071067811865476


cdef double _poly(double* coefs, int n, double x) nogil:
    cdef double acc = 0.0
    cdef int i
    for i in range(n - 1, -1, -1):
        acc = acc * x + coefs[i]
    return acc


def shapiro_wilk(values):
    """Returns (W, p).  Caller guarantees 3 <= n <= 5000 and non-constant input."""
    cdef list y_list = sorted(values)
    cdef int n = len(y_list)
    cdef double* y = NULL
    cdef double* m = NULL
    cdef double* a = NULL
    cdef int i, dummy
    cdef double ssm = 0.0, rsn, a_n, a_n1, phi, sphi
    cdef double mean_y = 0.0, ssq = 0.0, sa = 0.0, w, d
    cdef double one_minus, gamma, yy, mu, sigma, p
    y = _to_cdoubles(y_list, &dummy)
    m = <double*> malloc(n * sizeof(double))
    a = <double*> malloc(n * sizeof(double))
    if m == NULL or a == NULL:
        free(y)
        if m != NULL:
            free(m)
        if a != NULL:
            free(a)
        raise MemoryError()
    try:
        if n == 3:
            a[0] = -SQRT_HALF
            a[1] = 0.0
            a[2] = SQRT_HALF
        else:
            for i in range(n):
                m[i] = _ndtri((i + 1 - 0.375) / (n + 0.25))
                ssm += m[i] * m[i]
            rsn = 1.0 / sqrt(<double> n)
            a_n = _poly(SW_C1, 6, rsn) + m[n - 1] / sqrt(ssm)
            if n > 5:
                a_n1 = _poly(SW_C2, 6, rsn) + m[n - 2] / sqrt(ssm)
                phi = (ssm - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2]) / (
                    1.0 - 2.0 * a_n * a_n - 2.0 * a_n1 * a_n1)
                sphi = sqrt(phi)
                for i in range(n):
                    a[i] = m[i] / sphi
                a[n - 2] = a_n1
                a[1] = -a_n1
            else:
                phi = (ssm - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * a_n * a_n)
                sphi = sqrt(phi)
                for i in range(n):
                    a[i] = m[i] / sphi
            a[n - 1] = a_n
            a[0] = -a_n
        for i in range(n):
            mean_y += y[i]
        mean_y /= n
        for i in range(n):
            d = y[i] - mean_y
            ssq += d * d
            sa += a[i] * y[i]
        w = sa * sa / ssq
        if w > 1.0:
            w = 1.0
    finally:
        free(y)
        free(m)
        free(a)
    if n == 3:
        p = PI6 * (asin(sqrt(w)) - STQR)
        if p < 0.0:
            p = 0.0
        elif p > 1.0:
            p = 1.0
        return w, p
    one_minus = 1.0 - w
    if one_minus <= 0.0:
        return w, 1.0
    if n <= 11:
        gamma = _poly([-2.273, 0.459], 2, <double> n)
        yy = log(one_minus)
        if yy >= gamma:
            return w, 1e-99
        yy = -log(gamma - yy)
        mu = _poly(SW_C3, 4, <double> n)
        sigma = exp(_poly(SW_C4, 4, <double> n))
    else:
        yy = log(one_minus)
        mu = _poly(SW_C5, 4, log(<double> n))
        sigma = exp(_poly(SW_C6, 3, log(<double> n)))
    return w, _norm_sf((yy - mu) / sigma)


# ---------------------------------------------------------------------------
# Mann-Whitney U
# ---------------------------------------------------------------------------

EXACT_LIMIT = 20
DEF _EXACT_LIMIT_C = 20


def mann_whitney(prev, new):
    """Returns (U, p, used_exact); exact enumeration tail when n1+n2 <= EXACT_LIMIT."""
    cdef int n1 = len(prev)
    cdef int n2 = len(new)
    cdef int n = n1 + n2
    # Python-level sort of (value, is_new) pairs; ties share midranks so the
    # relative order of equal values is irrelevant.
    pooled = sorted([(float(v), 0) for v in prev] + [(float(v), 1) for v in new])
    cdef long long* sranks = <long long*> malloc(n * sizeof(long long))
    cdef int i = 0, j, kk
    cdef long long r_new = 0
    cdef double u, mu, sigma2, z
    cdef double tie_sum = 0.0
    cdef long long t
    if sranks == NULL:
        raise MemoryError()
    try:
        while i < n:
            j = i
            while j + 1 < n and pooled[j + 1][0] == pooled[i][0]:
                j += 1
            for kk in range(i, j + 1):
                sranks[kk] = (i + j) + 2  # midrank scaled by 2
            t = j - i + 1
            tie_sum += <double>(t * t * t - t)
            i = j + 1
        for i in range(n):
            if pooled[i][1]:
                r_new += sranks[i]
        u = r_new / 2.0 - n2 * (n2 + 1) / 2.0
        if n <= _EXACT_LIMIT_C:
            return u, _exact_tail(sranks, n, n2, r_new), True
        mu = n1 * n2 / 2.0
        sigma2 = n1 * n2 / 12.0 * ((n + 1) - tie_sum / (<double> n * (n - 1)))
        if sigma2 <= 0.0:
            return u, 1.0, False
        z = (u - mu - 0.5) / sqrt(sigma2)
        return u, _norm_sf(z), False
    finally:
        free(sranks)


cdef double _exact_tail(long long* sranks, int n, int n_new, long long observed):
    """P(rank-sum(new) >= observed) over all C(n, n_new) pooled assignments."""
    cdef long long max_sum = 0
    cdef int i, j
    cdef long long s, r
    cdef long long total = 0, count = 0
    # max_sum: sum of the n_new largest scaled ranks; ranks are sorted ascending
    for i in range(n - n_new, n):
        max_sum += sranks[i]
    cdef long long width = max_sum + 1
    cdef long long* ways = <long long*> malloc((n_new + 1) * width * sizeof(long long))
    if ways == NULL:
        raise MemoryError()
    try:
        for i in range((n_new + 1) * width):
            ways[i] = 0
        ways[0] = 1
        for i in range(n):
            r = sranks[i]
            j = n_new if i + 1 >= n_new else i + 1
            while j >= 1:
                for s in range(max_sum - r, -1, -1):
                    if ways[(j - 1) * width + s]:
                        ways[j * width + s + r] += ways[(j - 1) * width + s]
                j -= 1
        for s in range(width):
            total += ways[n_new * width + s]
            if s >= observed:
                count += ways[n_new * width + s]
        return (<double> count) / (<double> total)
    finally:
        free(ways)

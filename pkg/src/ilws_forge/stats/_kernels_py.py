"""Pure-Python numerical kernels for the acceptance gate.

This module mirrors the compiled backend (`_ckernels`) function-for-function;
`ilws_forge.stats.backend` picks whichever is importable.  Everything here is
deterministic and uses no global state.

Numerics:
* inverse normal CDF: Wichura's PPND16 rational approximations
* Student-t survival function: regularized incomplete beta via the
  standard continued fraction
* Shapiro-Wilk: Royston's 1995 approximation (coefficient corrections to
  the Blom scores plus the small/large-sample p-value transforms)
* Mann-Whitney exact tail: dynamic program over the pooled midranks
  (scaled by 2 so all rank sums are integers), counting the assignments
  with a rank sum at least the observed one
"""

from __future__ import annotations

import math

BACKEND_NAME = "python"

_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Normal distribution
# ---------------------------------------------------------------------------


def norm_sf(z: float) -> float:
    """Upper tail P(Z >= z) of the standard normal."""
    return 0.5 * math.erfc(z / _SQRT2)


_P0 = (
    3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3,
)
_Q0 = (
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
    2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_P1 = (
    1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
    3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4,
)
_Q1 = (
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
    1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_P2 = (
    6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
    2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7,
)
_Q2 = (
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
    7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _ratpoly(r: float, num: tuple, den: tuple) -> float:
    n = 0.0
    d = 0.0
    for c in reversed(num):
        n = n * r + c
    for c in reversed(den):
        d = d * r + c
    return n / d


def ndtri(p: float) -> float:
    """Inverse standard normal CDF (PPND16, ~16 significant digits)."""
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _ratpoly(r, _P0, _Q0)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        val = _ratpoly(r - 1.6, _P1, _Q1)
    else:
        val = _ratpoly(r - 5.0, _P2, _Q2)
    return -val if q < 0 else val


# ---------------------------------------------------------------------------
# Student t survival function
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (Lentz's algorithm)."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Upper tail P(T_df >= t)."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    x = df / (df + t * t)
    half_tail = 0.5 * betainc_reg(0.5 * df, 0.5, x)
    return half_tail if t >= 0 else 1.0 - half_tail


# ---------------------------------------------------------------------------
# Welch's t-test (one-sided, H1: mean(new) > mean(prev))
# ---------------------------------------------------------------------------


def _mean_var(xs) -> tuple:
    n = len(xs)
    m = sum(xs) / n
    if n < 2:
        return m, 0.0
    return m, sum((x - m) ** 2 for x in xs) / (n - 1)


def welch_t(prev, new) -> tuple:
    """Returns (t, df, p) for H1: mean(new) > mean(prev).

    Zero-variance degenerate rule: when both windows are constant the
    direction of the mean difference decides (p = 0 for strict improvement,
    else p = 1) and the statistic is +/-inf (0 when equal).
    """
    n1, n2 = len(prev), len(new)
    m1, v1 = _mean_var(prev)
    m2, v2 = _mean_var(new)
    if v1 == 0.0 and v2 == 0.0:
        diff = m2 - m1
        df = float(n1 + n2 - 2)
        if diff > 0:
            return math.inf, df, 0.0
        if diff < 0:
            return -math.inf, df, 1.0
        return 0.0, df, 1.0
    se1 = v1 / n1
    se2 = v2 / n2
    se = se1 + se2
    t = (m2 - m1) / math.sqrt(se)
    df = se * se / (se1 * se1 / (n1 - 1) + se2 * se2 / (n2 - 1))
    return t, df, t_sf(t, df)


# ---------------------------------------------------------------------------
# Shapiro-Wilk (Royston 1995)
# ---------------------------------------------------------------------------

_SW_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_SW_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_SW_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_SW_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_SW_C6 = (-0.4803, -0.082676, 0.0030302)
_SW_G = (-2.273, 0.459)

_PI6 = 1.90985931710274403  # 6/pi
_STQR = 1.04719755119659775  # asin(sqrt(3/4))


def _poly(coefs, x: float) -> float:
    acc = 0.0
    for c in reversed(coefs):
        acc = acc * x + c
    return acc


def shapiro_wilk(values) -> tuple:
    """Returns (W, p).  Caller guarantees 3 <= n <= 5000 and non-constant input."""
    n = len(values)
    y = sorted(values)
    if n == 3:
        a = [-math.sqrt(0.5), 0.0, math.sqrt(0.5)]
    else:
        m = [ndtri((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)]
        ssm = sum(mi * mi for mi in m)
        rsn = 1.0 / math.sqrt(n)
        a_n = _poly(_SW_C1, rsn) + m[-1] / math.sqrt(ssm)
        if n > 5:
            a_n1 = _poly(_SW_C2, rsn) + m[-2] / math.sqrt(ssm)
            phi = (ssm - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / (1.0 - 2.0 * a_n ** 2 - 2.0 * a_n1 ** 2)
            a = [mi / math.sqrt(phi) for mi in m]
            a[-2], a[1] = a_n1, -a_n1
        else:
            phi = (ssm - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n ** 2)
            a = [mi / math.sqrt(phi) for mi in m]
        a[-1], a[0] = a_n, -a_n
    mean_y = sum(y) / n
    ssq = sum((yi - mean_y) ** 2 for yi in y)
    sa = sum(ai * yi for ai, yi in zip(a, y))
    w = sa * sa / ssq
    if w > 1.0:
        w = 1.0
    # p-value transforms
    if n == 3:
        p = _PI6 * (math.asin(math.sqrt(w)) - _STQR)
        return w, min(max(p, 0.0), 1.0)
    one_minus = 1.0 - w
    if one_minus <= 0.0:
        return w, 1.0
    if n <= 11:
        gamma = _poly(_SW_G, float(n))
        yy = math.log(one_minus)
        if yy >= gamma:
            return w, 1e-99
        yy = -math.log(gamma - yy)
        mu = _poly(_SW_C3, float(n))
        sigma = math.exp(_poly(_SW_C4, float(n)))
    else:
        yy = math.log(one_minus)
        ln_n = math.log(float(n))
        mu = _poly(_SW_C5, ln_n)
        sigma = math.exp(_poly(_SW_C6, ln_n))
    return w, norm_sf((yy - mu) / sigma)


# ---------------------------------------------------------------------------
# Mann-Whitney U (one-sided, H1: new stochastically greater than prev)
# ---------------------------------------------------------------------------

EXACT_LIMIT = 20  # combined sample size at or below which the exact tail is used


def _midranks_scaled(pooled_sorted) -> list:
    """Midranks of a sorted pool, scaled by 2 so ties yield integers."""
    n = len(pooled_sorted)
    ranks = [0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and pooled_sorted[j + 1] == pooled_sorted[i]:
            j += 1
        # midrank of positions i..j (1-based) is (i+j)/2 + 1; scaled by 2
        scaled = (i + j) + 2
        for k in range(i, j + 1):
            ranks[k] = scaled
        i = j + 1
    return ranks


def _rank_sum_scaled(prev, new) -> tuple:
    """Scaled (x2) midrank sum of `new` within the pool, plus scaled ranks."""
    pooled = sorted((v, 1) for v in new)
    pooled += sorted((v, 0) for v in prev)
    pooled.sort(key=lambda t: t[0])
    scaled = _midranks_scaled([v for v, _ in pooled])
    r_new = sum(r for r, (_, is_new) in zip(scaled, pooled) if is_new)
    return r_new, scaled


def _exact_tail(scaled_ranks, n_new: int, observed_scaled: int) -> float:
    """P(rank-sum(new) >= observed) over all equally likely pooled assignments."""
    max_sum = sum(sorted(scaled_ranks)[-n_new:])
    # ways[j][s]: number of ways to pick j ranks with scaled sum s
    ways = [[0] * (max_sum + 1) for _ in range(n_new + 1)]
    ways[0][0] = 1
    for r in scaled_ranks:
        for j in range(min(n_new, len(scaled_ranks)), 0, -1):
            row_prev = ways[j - 1]
            row = ways[j]
            for s in range(max_sum - r, -1, -1):
                c = row_prev[s]
                if c:
                    row[s + r] += c
    total = sum(ways[n_new])
    count = sum(ways[n_new][max(observed_scaled, 0):])
    return count / total


def mann_whitney(prev, new) -> tuple:
    """Returns (U, p, used_exact) with U the statistic of the `new` sample.

    Exact tail by enumeration when the combined size is at most EXACT_LIMIT;
    otherwise the normal approximation with midrank tie correction and a
    0.5 continuity correction.
    """
    n1, n2 = len(prev), len(new)
    r_new_scaled, scaled_ranks = _rank_sum_scaled(prev, new)
    u = r_new_scaled / 2.0 - n2 * (n2 + 1) / 2.0
    if n1 + n2 <= EXACT_LIMIT:
        return u, _exact_tail(scaled_ranks, n2, r_new_scaled), True
    n = n1 + n2
    mu = n1 * n2 / 2.0
    # tie correction over the pooled multiset
    tie_sum = 0
    i = 0
    while i < n:
        j = i
        while j + 1 < n and scaled_ranks[j + 1] == scaled_ranks[i]:
            j += 1
        t = j - i + 1
        tie_sum += t * t * t - t
        i = j + 1
    sigma2 = n1 * n2 / 12.0 * ((n + 1) - tie_sum / (n * (n - 1)))
    if sigma2 <= 0.0:
        return u, 1.0, False  # fully tied pool: no evidence of improvement
    z = (u - mu - 0.5) / math.sqrt(sigma2)
    return u, norm_sf(z), False

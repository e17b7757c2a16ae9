"""Independent reference computations shared by the test modules."""

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.stats import norm

from robglasso.cov_plugins import QN_CONSTANT


def qn_oracle(a, eps):
    """Qn at (1 - eps) N(0, 1) + eps Delta(a) by root finding on the distance cdf."""
    def h(t):
        return ((1 - eps) ** 2 * (2 * norm.cdf(t / np.sqrt(2)) - 1)
                + 2 * eps * (1 - eps) * (norm.cdf(a + t) - norm.cdf(a - t)) + eps ** 2 - 0.25)
    return QN_CONSTANT * brentq(h, 1e-9, 10, xtol=1e-15, rtol=1e-15)


def qn_if(x):
    d = 1 / QN_CONSTANT
    return QN_CONSTANT * 2 * (0.25 - (norm.cdf(x + d) - norm.cdf(x - d))) \
        / (np.sqrt(2) * norm.pdf(d / np.sqrt(2)))


def _phi2(u, v, r):
    s = 1 - r * r
    return np.exp(-(u * u - 2 * r * u * v + v * v) / (2 * s)) / (2 * np.pi * np.sqrt(s))


def _expect(f, r, a, b):
    """E f(U, V) under the standard bivariate normal, split at the atom."""
    ua = sorted({-10.0, 10.0, a if abs(a) < 10 else 0.0})
    vb = sorted({-10.0, 10.0, b if abs(b) < 10 else 0.0})
    tot = 0.0
    for u0, u1 in zip(ua, ua[1:]):
        for v0, v1 in zip(vb, vb[1:]):
            tot += integrate.dblquad(lambda v, u: f(u, v) * _phi2(u, v, r), u0, u1, v0, v1,
                                     epsabs=1e-12, epsrel=1e-10)[0]
    return tot


def _grade(u, a, e):
    return (1 - e) * norm.cdf(u) + e * (1.0 * (u > a) + 0.5 * (u == a))


def raw_oracle(kind, r, a, b, e):
    """Mixture value of the raw correlation functional by 2-d quadrature."""
    if kind == "spearman":
        c = _expect(lambda u, v: _grade(u, a, e) * _grade(v, b, e), r, a, b)
        return 12 * ((1 - e) * c + e * _grade(a, a, e) * _grade(b, b, e)) - 3
    if kind == "kendall":
        k = _expect(lambda u, v: np.sign((u - a) * (v - b)), r, a, b)
        return (1 - e) ** 2 * 2 / np.pi * np.arcsin(r) + 2 * e * (1 - e) * k
    if kind == "gaussrank":
        def score(u, at):
            return norm.ppf(np.clip(_grade(u, at, e), 1e-300, 1 - 1e-16))
        c = _expect(lambda u, v: score(u, a) * score(v, b), r, a, b)
        return (1 - e) * c + e * score(a, a) * score(b, b)

    def med(at):
        f = lambda m: (1 - e) * norm.cdf(m) + e * (m >= at) - 0.5  # noqa: E731
        if f(at) >= 0 > (1 - e) * norm.cdf(at) - 0.5:
            return at
        return brentq(f, -10, 10, xtol=1e-14)
    mj, mk = med(a), med(b)
    q = _expect(lambda u, v: np.sign((u - mj) * (v - mk)), r, mj, mk)
    return (1 - e) * q + e * np.sign((a - mj) * (b - mk))

"""Scatter functionals and finite-sample estimators that can feed the glasso.

Functional side: the Qn scale, four rank/sign correlation functionals with
their Fisher-consistency transforms, and the pairwise covariance
``S(F_j) S(F_k) R(F_jk)``. All of them accept contaminated mixtures
``(1 - eps) F + eps * Delta(z)``; mixture expectations are expanded into
clean and atom terms and evaluated with bivariate normal orthant
probabilities or piecewise Gauss-Legendre quadrature. Internally every
functional is computed as "clean value + increment" with the increment
formed without cancellation, so very small ``eps`` stay accurate.

Finite-sample side: the matching sample estimators, nearest-PSD repair and
FastMCD.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import ndtr, ndtri
from scipy.stats import chi2, rankdata

from .errors import DomainError, NumericalError
from .model import Bivariate, ContaminationPoint, GaussianModel, Marginal, \
    gauss_legendre_pieces, std_bivariate_cdf

__all__ = [
    "PluginKind",
    "CorrelationValue",
    "MCDOptions",
    "MCDResult",
    "QN_CONSTANT",
    "qn_scale_functional",
    "correlation_functional",
    "fisher_transform",
    "pairwise_cov",
    "classical_cov",
    "plugin_cov",
    "plugin_cov_delta",
    "qn_scale",
    "sample_correlation",
    "finite_sample_estimate",
    "psd_repair",
    "fast_mcd",
]


class PluginKind(enum.Enum):
    CLASSICAL = "classical"
    GAUSS_RANK = "gaussrank"
    SPEARMAN = "spearman"
    KENDALL = "kendall"
    QUADRANT = "quadrant"
    FAST_MCD = "fastmcd"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        for kind in cls:
            if kind.value == key or kind.name.lower().replace("_", "") == key:
                return kind
        raise DomainError(f"unknown plug-in kind {value!r}")

    @property
    def pairwise(self):
        return self in (PluginKind.GAUSS_RANK, PluginKind.SPEARMAN,
                        PluginKind.KENDALL, PluginKind.QUADRANT)

    @property
    def functional(self):
        return self is not PluginKind.FAST_MCD


PAIRWISE_KINDS = (PluginKind.GAUSS_RANK, PluginKind.SPEARMAN,
                  PluginKind.KENDALL, PluginKind.QUADRANT)

QN_CONSTANT = 1.0 / (math.sqrt(2.0) * ndtri(5.0 / 8.0))
# H^{-1}(1/4) at N(0, 1), with H the cdf of |X1 - X2|
_QN_D = 1.0 / QN_CONSTANT
_L = 10.0  # integration half-width in standard units
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class CorrelationValue:
    raw: float
    transformed: float
    kind: PluginKind


def _phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def _ndtr_diff(x, h):
    """Phi(x + h) - Phi(x) without cancellation for small ``h``."""
    x, h = np.broadcast_arrays(np.asarray(x, float), np.asarray(h, float))
    m = x + h / 2
    m2 = m * m
    h2 = h * h
    taylor = h * _phi(m) * (1 + h2 * (m2 - 1) / 24 + h2 * h2 * (m2 * m2 - 6 * m2 + 3) / 1920)
    # tails: difference of upper-tail probabilities is exact there
    direct = np.where(m > 0, ndtr(-x) - ndtr(-(x + h)), ndtr(x + h) - ndtr(x))
    return np.where(np.abs(h) < 1e-3, taylor, direct)


# ---------------------------------------------------------------------------
# Qn scale functional


def _qn_root_delta(a, eps):
    """Shift of H_eps^{-1}(1/4) from its N(0, 1) value for atoms ``a``.

    Works in standard units: the marginal is (1 - eps) N(0, 1) + eps Delta(a).
    """
    a, eps = np.broadcast_arrays(np.asarray(a, float), np.asarray(eps, float))
    a = a.astype(float).copy()
    eps = eps.astype(float).copy()
    if np.any(eps * eps >= 0.25):
        raise NumericalError("Qn quantile not bracketed: contamination mass too large")
    d = _QN_D
    w0 = (1 - eps) ** 2
    w1 = 2 * eps * (1 - eps)
    const = -eps * (2 - eps) / 4 + eps * eps

    def g_atom(t):
        # P(|a - X| <= t) for X ~ N(0, 1)
        return np.where(a > 0, ndtr(t - a) - ndtr(-t - a), ndtr(a + t) - ndtr(a - t))

    def f(delta):
        t = d + delta
        return (w0 * 2 * _ndtr_diff(d / _SQRT2, delta / _SQRT2) + const + w1 * g_atom(t))

    def fprime(delta):
        t = d + delta
        return w0 * _SQRT2 * _phi(t / _SQRT2) + w1 * (_phi(a + t) + _phi(a - t))

    lo = np.full(a.shape, -d)
    y = np.minimum(0.25 / w0, 1.0 - 1e-16)
    hi = _SQRT2 * ndtri((1 + y) / 2) - d + 1e-12
    delta = np.zeros(a.shape)
    done = np.zeros(a.shape, dtype=bool)
    last = np.full(a.shape, np.inf)
    for _ in range(100):
        fv = f(delta)
        lo = np.where(fv < 0, delta, lo)
        hi = np.where(fv > 0, delta, hi)
        new = delta - fv / fprime(delta)
        bad = ~((new >= lo) & (new <= hi)) | ~np.isfinite(new)
        new = np.where(bad, (lo + hi) / 2, new)
        step = np.abs(new - delta)
        # a tiny step that stops shrinking means rounding-level cycling
        stalled = (step <= 1e-13 * (1 + np.abs(delta))) & (step >= last)
        conv = (step <= 1e-17 + 4e-16 * np.abs(delta)) | (fv == 0) | stalled
        last = step
        # converged rows stay frozen so later sweeps cannot bisect them away
        delta = np.where(done | (fv == 0), delta, new)
        done |= conv
        if np.all(done):
            break
    else:  # pragma: no cover - Newton with bisection fallback converges
        raise NumericalError("Qn root solve did not converge")
    return delta


def qn_scale_functional(marginal):
    """Qn functional ``c * H^{-1}(1/4)`` of a (possibly contaminated) normal marginal.

    Parameters
    ----------
    marginal : Marginal
        ``(1 - eps) N(0, sigma^2) + eps * Delta(atom)``.

    Returns
    -------
    float
        Equals ``sigma`` at the uncontaminated normal.
    """
    if not isinstance(marginal, Marginal):
        raise DomainError("qn_scale_functional expects a Marginal handle")
    if marginal.eps == 0.0:
        return float(marginal.sigma)
    delta = _qn_root_delta(marginal.atom / marginal.sigma, marginal.eps)
    return float(marginal.sigma * QN_CONSTANT * (_QN_D + delta))


def _qn_scale_delta(sigma, atom, eps):
    """S(F_eps) - S(F) for marginals of scale ``sigma`` (vectorised)."""
    return sigma * QN_CONSTANT * _qn_root_delta(atom / sigma, eps)


# ---------------------------------------------------------------------------
# correlation functionals, in standard units


def _clean_raw(kind, rho):
    rho = np.asarray(rho, float)
    if kind is PluginKind.SPEARMAN:
        return 6 / np.pi * np.arcsin(rho / 2)
    if kind in (PluginKind.KENDALL, PluginKind.QUADRANT):
        return 2 / np.pi * np.arcsin(rho)
    if kind is PluginKind.GAUSS_RANK:
        return rho
    raise DomainError(f"{kind.value} is not a pairwise correlation kind")


def _orthant_concordance(x, y, rho):
    """E sign((U - x)(V - y)) for standard bivariate normal (U, V)."""
    return 2 * (std_bivariate_cdf(x, y, rho) + std_bivariate_cdf(-x, -y, rho)) - 1


def _spearman_delta(rho, a, b, eps):
    r2 = rho / _SQRT2
    p0 = std_bivariate_cdf(0.0, 0.0, rho / 2)
    p1 = std_bivariate_cdf(0.0, -b, r2)
    p2 = std_bivariate_cdf(-a, 0.0, r2)
    p3 = std_bivariate_cdf(-a, -b, rho)
    # mid-distribution values at the atom (tie convention of average ranks)
    ga = (1 - eps) * ndtr(a) + eps / 2
    gb = (1 - eps) * ndtr(b) + eps / 2
    return 12 * eps * (-p0 * (3 - 3 * eps + eps * eps) + (1 - eps) ** 2 * (p1 + p2)
                       + eps * (1 - eps) * p3 + ga * gb)


def _kendall_delta(rho, a, b, eps):
    tau = 2 / np.pi * np.arcsin(rho)
    kappa = _orthant_concordance(a, b, rho)
    return eps * (-(2 - eps) * tau + 2 * (1 - eps) * kappa)


def _mixture_median(a, eps):
    """Median of (1 - eps) N(0, 1) + eps Delta(a) (right-continuous inverse)."""
    m1 = ndtri(0.5 + 0.5 * eps / (1 - eps))
    return np.where(a > m1, m1, np.where(a < -m1, -m1, a))


def _quadrant_delta(rho, a, b, eps):
    mj = _mixture_median(a, eps)
    mk = _mixture_median(b, eps)
    q0 = 2 / np.pi * np.arcsin(rho)
    q = _orthant_concordance(mj, mk, rho)
    return (1 - eps) * (q - q0) - eps * q0 + eps * np.sign((a - mj) * (b - mk))


def _gr_shift(u, a, eps):
    """psi(u) - u with psi = Phi^{-1} o G, G the mixture mid-distribution cdf."""
    above = u > a
    dp = np.where(above, eps * ndtr(-u), -eps * ndtr(u))
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        # far tails overflow here but take the direct branch below
        t = dp / _phi(u)
        taylor = t + u * t * t / 2 + (1 + 2 * u * u) * t ** 3 / 6
    lower = np.where(above, (1 - eps) * ndtr(u) + eps, (1 - eps) * ndtr(u))
    upper = np.where(above, (1 - eps) * ndtr(-u), eps + (1 - eps) * ndtr(-u))
    lower = np.maximum(lower, 1e-300)
    upper = np.maximum(upper, 1e-300)
    direct = np.where(lower < 0.5, ndtri(lower), -ndtri(upper)) - u
    small = np.abs(t) * (1 + np.abs(u)) < 1e-3
    return np.where(small, taylor, direct)


def _gr_breaks(a, eps, extra=()):
    # between an atom beyond +-L and the window edge the grade shift is of
    # order eps, not eps * phi, so the window always reaches past the atom
    us = -ndtri(np.minimum(eps, 0.5))  # saturation level Phi^{-1}(1 - eps)
    lo = np.minimum(-_L, a - 1)
    hi = np.maximum(_L, a + 1)
    cols = [lo, a, us, -us, *extra, hi]
    return np.sort(np.clip(np.stack(cols, axis=-1), lo[..., None], hi[..., None]), axis=-1)


def _gr_first_moment(a, eps, order=64):
    """E[U (psi(U) - U)] for U ~ N(0, 1)."""
    a = np.asarray(a, float)
    eps = np.broadcast_to(np.asarray(eps, float), a.shape)

    def f(u):
        return u * _gr_shift(u, a[..., None, None], eps[..., None, None]) * _phi(u)

    return gauss_legendre_pieces(f, _gr_breaks(a, eps), order)


def _gr_cross(rho, a, b, eps, order=16, chunk=512):
    """E[(psi_j(U) - U)(psi_k(V) - V)] for standard normals with correlation rho."""
    a, b, eps, rho = np.broadcast_arrays(*(np.asarray(v, float) for v in (a, b, eps, rho)))
    out = np.empty(a.shape)
    af, bf, ef, rf, of = a.ravel(), b.ravel(), eps.ravel(), rho.ravel(), out.reshape(-1)
    for start in range(0, af.size, chunk):
        sl = slice(start, start + chunk)
        aa, bb, ee, rr = af[sl], bf[sl], ef[sl], rf[sl]
        s = np.sqrt(np.maximum(1 - rr * rr, 0.0))
        degenerate = s < 1e-8
        s_safe = np.where(degenerate, 1.0, s)
        vs = -ndtri(np.minimum(ee, 0.5))
        outer = _gr_breaks(aa, ee)

        def g(u):
            # u: (n, m, order); inner conditional expectation over W
            shp = u.shape
            uu = u[..., None]
            rr_ = rr[:, None, None, None]
            ss_ = s_safe[:, None, None, None]
            watom = (bb[:, None, None] - rr[:, None, None] * u) / s_safe[:, None, None]
            lo = np.minimum(-_L, watom - 1)
            hi = np.maximum(_L, watom + 1)
            wb = np.stack([lo, watom,
                           (vs[:, None, None] - rr[:, None, None] * u) / s_safe[:, None, None],
                           (-vs[:, None, None] - rr[:, None, None] * u) / s_safe[:, None, None],
                           hi], axis=-1)
            wb = np.sort(np.clip(wb, lo[..., None], hi[..., None]), axis=-1)

            def inner(w):
                v = rr_[..., None] * uu[..., None] + ss_[..., None] * w
                return _gr_shift(v, bb[:, None, None, None, None],
                                 ee[:, None, None, None, None]) * _phi(w)

            m = gauss_legendre_pieces(inner, wb, order)
            return _gr_shift(u, aa[:, None, None], ee[:, None, None]) * m * _phi(u)

        res = gauss_legendre_pieces(g, outer, order)
        if np.any(degenerate):
            idx = np.flatnonzero(degenerate)
            sgn = np.sign(rr[idx])

            def h(u):
                return (_gr_shift(u, aa[idx, None, None], ee[idx, None, None])
                        * _gr_shift(sgn[:, None, None] * u, bb[idx, None, None],
                                    ee[idx, None, None]) * _phi(u))

            res[idx] = gauss_legendre_pieces(
                h, _gr_breaks(aa[idx], ee[idx], extra=(sgn * bb[idx],)), 64)
        of[sl] = res
    return out


def _gaussrank_delta(rho, a, b, eps, cross=True):
    ij = _gr_first_moment(a, eps)
    ik = _gr_first_moment(b, eps)
    c = _gr_cross(rho, a, b, eps) if cross else 0.0
    # mid-distribution value at the atom
    psi_a = a + _gr_atom_shift(a, eps)
    psi_b = b + _gr_atom_shift(b, eps)
    return (1 - eps) * (rho * ij + rho * ik + c) - eps * rho + eps * psi_a * psi_b


def _gr_atom_shift(a, eps):
    # Phi^{-1}((1 - eps) Phi(a) + eps / 2) - a
    dp = eps * (0.5 - ndtr(a))
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        # far tails overflow here but take the direct branch below
        t = dp / _phi(a)
        taylor = t + a * t * t / 2 + (1 + 2 * a * a) * t ** 3 / 6
    lower = (1 - eps) * ndtr(a) + eps / 2
    upper = (1 - eps) * ndtr(-a) + eps / 2
    direct = np.where(lower < 0.5, ndtri(lower), -ndtri(upper)) - a
    return np.where(np.abs(t) * (1 + np.abs(a)) < 1e-3, taylor, direct)


_DELTA = {
    PluginKind.SPEARMAN: _spearman_delta,
    PluginKind.KENDALL: _kendall_delta,
    PluginKind.QUADRANT: _quadrant_delta,
    PluginKind.GAUSS_RANK: _gaussrank_delta,
}


def _raw_delta(kind, rho, a, b, eps):
    """R(F_eps) - R(F) in standard units, vectorised over a, b, eps."""
    a, b, eps = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float),
                                    np.asarray(eps, float))
    out = np.zeros(a.shape)
    live = eps > 0
    if np.any(live):
        out[live] = _DELTA[kind](rho, a[live], b[live], eps[live])
    return out


_TRANSFORM_SCALE = {
    PluginKind.SPEARMAN: (2.0, np.pi / 6),
    PluginKind.KENDALL: (1.0, np.pi / 2),
    PluginKind.QUADRANT: (1.0, np.pi / 2),
}


def fisher_transform(kind, r):
    """Map a raw correlation to its Fisher-consistent version at the normal.

    Spearman: ``2 sin(pi r / 6)``; Kendall and Quadrant: ``sin(pi r / 2)``;
    Gaussian rank: identity.
    """
    kind = PluginKind.parse(kind)
    r = np.asarray(r, float)
    if np.any(np.abs(r) > 1 + 1e-12):
        raise DomainError("correlation outside [-1, 1]")
    if kind is PluginKind.GAUSS_RANK:
        out = r
    elif kind in _TRANSFORM_SCALE:
        amp, w = _TRANSFORM_SCALE[kind]
        out = amp * np.sin(w * r)
    else:
        raise DomainError(f"no correlation transform for {kind.value}")
    return float(out) if out.ndim == 0 else out


def _transform_delta(kind, r0, dr):
    """fisher_transform(r0 + dr) - fisher_transform(r0) without cancellation."""
    if kind is PluginKind.GAUSS_RANK:
        return dr
    amp, w = _TRANSFORM_SCALE[kind]
    return 2 * amp * np.cos(w * (r0 + dr / 2)) * np.sin(w * dr / 2)


def correlation_functional(kind, bivariate):
    """Raw and transformed correlation functional of a bivariate distribution.

    Parameters
    ----------
    kind : PluginKind or str
        One of the four pairwise kinds.
    bivariate : Bivariate
        Bivariate normal, or its contaminated mixture.
    """
    kind = PluginKind.parse(kind)
    if not kind.pairwise:
        raise DomainError(f"{kind.value} has no correlation functional")
    if not isinstance(bivariate, Bivariate):
        raise DomainError("correlation_functional expects a Bivariate handle")
    rho = bivariate.rho
    r0 = float(_clean_raw(kind, rho))
    if bivariate.eps > 0:
        a = bivariate.atom[0] / bivariate.sigma[0]
        b = bivariate.atom[1] / bivariate.sigma[1]
        dr = float(_raw_delta(kind, rho, a, b, bivariate.eps))
    else:
        dr = 0.0
    raw = r0 + dr
    t0 = fisher_transform(kind, r0)
    transformed = t0 + float(_transform_delta(kind, r0, dr))
    return CorrelationValue(raw, transformed, kind)


# ---------------------------------------------------------------------------
# covariance functionals


def classical_cov(model, point=None):
    """Covariance functional, at the model or at its contaminated mixture."""
    sigma = model.sigma.copy()
    if point is None or point.eps is None:
        return sigma
    return sigma + classical_cov_delta(model, point.z[None, :], point.eps)[0]


def classical_cov_delta(model, zs, eps):
    zs = np.asarray(zs, float)
    eps = np.broadcast_to(np.asarray(eps, float), zs.shape[:1])[:, None, None]
    zz = zs[:, :, None] * zs[:, None, :]
    return eps * ((1 - eps) * zz - model.sigma)


def _pairwise_delta(kind, model, zs, eps, cross=True):
    """Increment of the pairwise covariance functional for each row of ``zs``."""
    zs = np.atleast_2d(np.asarray(zs, float))
    n, p = zs.shape
    if p != model.p:
        raise DomainError("contamination point has the wrong dimension")
    eps = np.broadcast_to(np.asarray(eps, float), (n,))
    scales = model.scales
    corr = model.corr
    ds = np.empty((n, p))
    for j in range(p):
        ds[:, j] = _qn_scale_delta(scales[j], zs[:, j], eps)
    out = np.empty((n, p, p))
    for j in range(p):
        out[:, j, j] = ds[:, j] * (2 * scales[j] + ds[:, j])
    for j in range(p):
        for k in range(j + 1, p):
            rho = corr[j, k]
            a = zs[:, j] / scales[j]
            b = zs[:, k] / scales[k]
            key = np.stack([a, b, eps], axis=1)
            uniq, inv = np.unique(key, axis=0, return_inverse=True)
            inv = inv.ravel()
            if kind is PluginKind.GAUSS_RANK:
                dr_u = _gaussrank_delta(rho, uniq[:, 0], uniq[:, 1], uniq[:, 2], cross=cross)
            else:
                dr_u = _raw_delta(kind, rho, uniq[:, 0], uniq[:, 1], uniq[:, 2])
            dr = dr_u[inv]
            r0 = float(_clean_raw(kind, rho))
            t0 = float(fisher_transform(kind, r0))
            dt = _transform_delta(kind, r0, dr)
            sj, sk = scales[j], scales[k]
            dsj, dsk = ds[:, j], ds[:, k]
            # (sj + dsj)(sk + dsk)(t0 + dt) - sj sk t0
            val = (dsj * sk * t0 + sj * dsk * t0 + sj * sk * dt
                   + dsj * dsk * t0 + dsj * sk * dt + sj * dsk * dt + dsj * dsk * dt)
            out[:, j, k] = val
            out[:, k, j] = val
    return out


def _clean_pairwise(kind, model):
    scales = model.scales
    p = model.p
    out = np.empty((p, p))
    for j in range(p):
        out[j, j] = scales[j] ** 2
        for k in range(j + 1, p):
            r0 = _clean_raw(kind, model.corr[j, k])
            out[j, k] = out[k, j] = scales[j] * scales[k] * fisher_transform(kind, r0)
    return out


def pairwise_cov(kind, model, point=None):
    """Pairwise covariance functional ``S(F_j) S(F_k) R~(F_jk)``.

    Parameters
    ----------
    kind : PluginKind or str
        Gaussian rank, Spearman, Kendall or Quadrant.
    model : GaussianModel
    point : ContaminationPoint, optional
        With ``point.eps`` set, evaluates at ``(1 - eps) F + eps Delta(z)``.
    """
    kind = PluginKind.parse(kind)
    if not kind.pairwise:
        raise DomainError(f"{kind.value} is not a pairwise kind")
    base = _clean_pairwise(kind, model)
    if point is None or point.eps is None:
        return base
    return base + _pairwise_delta(kind, model, point.z[None, :], point.eps)[0]


def plugin_cov(kind, model, point=None):
    """Scatter functional of any functional kind, optionally contaminated."""
    kind = PluginKind.parse(kind)
    if kind is PluginKind.CLASSICAL:
        return classical_cov(model, point)
    if kind is PluginKind.FAST_MCD:
        raise DomainError("FastMCD has no functional version here")
    return pairwise_cov(kind, model, point)


def plugin_cov_delta(kind, model, zs, eps):
    """Increments ``T(F_{eps, z}) - T(F)`` for each row of ``zs``, shape (n, p, p)."""
    kind = PluginKind.parse(kind)
    if kind is PluginKind.CLASSICAL:
        return classical_cov_delta(model, np.atleast_2d(zs), eps)
    if kind is PluginKind.FAST_MCD:
        raise DomainError("FastMCD has no functional version here")
    return _pairwise_delta(kind, model, zs, eps)


def clean_plugin_cov(kind, model):
    kind = PluginKind.parse(kind)
    if kind is PluginKind.CLASSICAL:
        return model.sigma.copy()
    return _clean_pairwise(kind, model)


# ---------------------------------------------------------------------------
# finite-sample estimators

# small-sample factors for Qn (Croux and Rousseeuw), n <= 9
_QN_SMALL = {2: 0.399, 3: 0.994, 4: 0.512, 5: 0.844, 6: 0.611, 7: 0.857, 8: 0.669, 9: 0.872}


def qn_scale(x):
    """Finite-sample Qn scale of a 1-d sample.

    The k-th order statistic of the pairwise distances with
    ``k = C(h, 2)``, ``h = n // 2 + 1``, times the asymptotic constant; the
    small-sample correction factor is applied only for ``n < 100``.
    """
    x = np.asarray(x, float).ravel()
    n = x.size
    if n < 2:
        raise DomainError("Qn needs at least two observations")
    h = n // 2 + 1
    k = h * (h - 1) // 2
    dist = pdist(x[:, None])
    kth = np.partition(dist, k - 1)[k - 1]
    q = QN_CONSTANT * kth
    if n < 100:
        if n in _QN_SMALL:
            dn = _QN_SMALL[n]
        elif n % 2:
            dn = n / (n + 1.4)
        else:
            dn = n / (n + 3.8)
        q *= dn
    return float(q)


def _ranks(x):
    return rankdata(x, method="average", axis=0)


def _kendall_pair(x, y, chunk=2048):
    n = x.size
    total = 0.0
    for start in range(0, n, chunk):
        xi = x[start:start + chunk, None]
        yi = y[start:start + chunk, None]
        s = np.sign((xi - x[None, :]) * (yi - y[None, :]))
        total += s.sum()
    # every unordered pair is counted twice, the diagonal contributes zero
    return total / (n * (n - 1))


def sample_correlation(kind, data):
    """Raw (untransformed) pairwise correlation matrix of ``data``."""
    kind = PluginKind.parse(kind)
    data = np.asarray(data, float)
    n, p = data.shape
    if kind is PluginKind.SPEARMAN:
        r = np.corrcoef(_ranks(data), rowvar=False)
    elif kind is PluginKind.GAUSS_RANK:
        scores = ndtri(_ranks(data) / (n + 1))
        denom = np.sum(ndtri(np.arange(1, n + 1) / (n + 1)) ** 2)
        r = scores.T @ scores / denom
    elif kind is PluginKind.QUADRANT:
        s = np.sign(data - np.median(data, axis=0))
        r = s.T @ s / n
    elif kind is PluginKind.KENDALL:
        r = np.eye(p)
        for j in range(p):
            for k in range(j + 1, p):
                r[j, k] = r[k, j] = _kendall_pair(data[:, j], data[:, k])
    else:
        raise DomainError(f"{kind.value} is not a pairwise kind")
    r = np.clip((r + r.T) / 2, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return r


def psd_repair(m, floor=1e-8):
    """Frobenius-nearest matrix with eigenvalues at least ``floor``.

    Matrices already satisfying the bound are returned unchanged.
    """
    m = np.asarray(m, float)
    m = (m + m.T) / 2
    w, v = np.linalg.eigh(m)
    if w[0] >= floor:
        return m
    out = (v * np.maximum(w, floor)) @ v.T
    return (out + out.T) / 2


def _assemble(scales, rt):
    return np.outer(scales, scales) * rt


@dataclass(frozen=True)
class MCDOptions:
    """FastMCD settings.

    ``chi2_quantile`` sets the reweighting cutoff on squared robust distances.
    """

    subset_fraction: float = 0.75
    reweight: bool = False
    n_starts: int = 500
    seed: int = 0
    chi2_quantile: float = 0.975

    def __post_init__(self):
        if not (0.5 < self.subset_fraction < 1.0):
            raise DomainError("subset fraction must lie in (0.5, 1)")
        if self.n_starts < 1:
            raise DomainError("n_starts must be >= 1")


@dataclass(frozen=True, eq=False)
class MCDResult:
    location: np.ndarray
    covariance: np.ndarray
    raw_covariance: np.ndarray
    subset: np.ndarray
    log_det: float
    n_starts: int


def _c_steps(x, idx, h, max_steps=200):
    """Concentration steps from the subset ``idx`` until the determinant stalls."""
    prev = np.inf
    for _ in range(max_steps):
        sub = x[idx]
        mu = sub.mean(axis=0)
        cov = np.cov(sub, rowvar=False, bias=True)
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            return idx, mu, cov, -np.inf
        diff = x - mu
        d2 = np.einsum("ij,ij->i", diff @ np.linalg.inv(cov), diff)
        new = np.sort(np.argpartition(d2, h - 1)[:h])
        if logdet >= prev - 1e-12 and np.array_equal(new, idx):
            return idx, mu, cov, logdet
        prev = logdet
        idx = new
    return idx, mu, cov, logdet


def fast_mcd(data, options=None):
    """Minimum covariance determinant via FastMCD concentration steps.

    Draws ``n_starts`` random elemental (p + 1)-subsets, runs two C-steps
    from each, keeps the ten best and iterates those to convergence. The raw
    covariance is scaled for consistency at the normal; with
    ``options.reweight`` a one-step reweighting with a chi-square cutoff
    follows.
    """
    options = options or MCDOptions()
    x = np.asarray(data, float)
    n, p = x.shape
    if n <= 2 * p:
        raise DomainError("FastMCD needs n > 2p")
    h = int(math.ceil(options.subset_fraction * n))
    rng = np.random.default_rng(options.seed)
    cands = []
    for _ in range(options.n_starts):
        idx = rng.choice(n, size=p + 1, replace=False)
        sub = x[idx]
        mu = sub.mean(axis=0)
        cov = np.cov(sub, rowvar=False, bias=True)
        extra = 0
        while np.linalg.matrix_rank(cov) < p and extra < n - p - 1:
            extra += 1
            idx = rng.choice(n, size=p + 1 + extra, replace=False)
            sub = x[idx]
            mu = sub.mean(axis=0)
            cov = np.cov(sub, rowvar=False, bias=True)
        diff = x - mu
        d2 = np.einsum("ij,ij->i", diff @ np.linalg.pinv(cov), diff)
        start = np.sort(np.argpartition(d2, h - 1)[:h])
        idx, mu, cov, logdet = _c_steps(x, start, h, max_steps=2)
        cands.append((logdet, idx))
    cands.sort(key=lambda c: c[0])
    best = None
    for _, idx in cands[:10]:
        res = _c_steps(x, idx, h)
        if best is None or res[3] < best[3]:
            best = res
    idx, mu, cov, logdet = best
    alpha = h / n
    q = chi2.ppf(alpha, p)
    raw = cov * alpha / chi2.cdf(q, p + 2)
    loc, final = mu, raw
    if options.reweight:
        diff = x - mu
        d2 = np.einsum("ij,ij->i", diff @ np.linalg.inv(raw), diff)
        cut = chi2.ppf(options.chi2_quantile, p)
        keep = d2 <= cut
        loc = x[keep].mean(axis=0)
        final = np.cov(x[keep], rowvar=False, bias=True)
        final = final * options.chi2_quantile / chi2.cdf(cut, p + 2)
    return MCDResult(loc, final, raw, idx, float(logdet), options.n_starts)


def finite_sample_estimate(kind, data, options=None):
    """Plug-in covariance estimate from an ``(n, p)`` sample.

    Pairwise kinds: per-pair raw correlations, Fisher transform, Qn scales,
    pairwise assembly and nearest-PSD repair. Classical: the (1/n) sample
    covariance. FastMCD: :func:`fast_mcd` with ``options`` (an
    :class:`MCDOptions`).
    """
    kind = PluginKind.parse(kind)
    data = np.asarray(data, float)
    if data.ndim != 2:
        raise DomainError("data must be an (n, p) array")
    n, p = data.shape
    if n < 4:
        raise DomainError("at least four observations are required")
    if not np.all(np.isfinite(data)):
        raise DomainError("data contain non-finite values")
    if kind is PluginKind.CLASSICAL:
        return np.cov(data, rowvar=False, bias=True)
    if kind is PluginKind.FAST_MCD:
        return fast_mcd(data, options).covariance
    raw = sample_correlation(kind, data)
    rt = fisher_transform(kind, raw)
    np.fill_diagonal(rt, 1.0)
    scales = np.array([qn_scale(data[:, j]) for j in range(p)])
    return psd_repair(_assemble(scales, rt))

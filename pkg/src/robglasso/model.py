"""Reference distribution, contamination points and shared numerical kernels.

The reference distribution is always a zero-mean multivariate normal.
Besides the model types this module holds the low-level kernels every
other module leans on: the standard bivariate normal CDF, normalised
Gauss-Hermite rules, piecewise Gauss-Legendre integration and seeded
sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from .errors import DomainError, ModelError

__all__ = [
    "GaussianModel",
    "ContaminationPoint",
    "QuadratureSpec",
    "Marginal",
    "Bivariate",
    "toeplitz_example",
    "std_bivariate_cdf",
    "gauss_hermite",
    "tensor_gauss_hermite",
    "gauss_legendre_pieces",
    "sample",
]

_MIN_EIG = 1e-10


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """Zero-mean p-variate normal N(0, sigma).

    Parameters
    ----------
    sigma : array_like, shape (p, p)
        Symmetric, strictly positive definite covariance matrix.
    """

    sigma: np.ndarray

    def __post_init__(self):
        s = np.array(self.sigma, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 2:
            raise ModelError(f"covariance must be p x p with p >= 2, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ModelError("covariance has non-finite entries")
        if not np.allclose(s, s.T, rtol=0, atol=1e-12):
            raise ModelError("covariance is not symmetric")
        s = (s + s.T) / 2
        if np.linalg.eigvalsh(s)[0] <= _MIN_EIG:
            raise ModelError("covariance is not strictly positive definite")
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    @property
    def p(self):
        return self.sigma.shape[0]

    @property
    def omega(self):
        """Precision matrix, the inverse of ``sigma``."""
        return np.linalg.inv(self.sigma)

    @property
    def scales(self):
        return np.sqrt(np.diag(self.sigma))

    @property
    def corr(self):
        d = self.scales
        return self.sigma / np.outer(d, d)

    def cholesky(self):
        try:
            return np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded in __post_init__
            raise ModelError("Cholesky factorisation failed") from exc

    def marginal(self, j):
        return Marginal(sigma=float(self.scales[j]))

    def pair(self, j, k):
        return Bivariate(rho=float(self.corr[j, k]),
                         sigma=(float(self.scales[j]), float(self.scales[k])))


@dataclass(frozen=True)
class ContaminationPoint:
    """Point mass location ``z`` with optional mixing weight ``eps``.

    With ``eps`` set the point describes the mixture
    ``(1 - eps) F + eps * Delta(z)``.
    """

    z: np.ndarray
    eps: float | None = None

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if z.ndim != 1 or not np.all(np.isfinite(z)):
            raise DomainError("contamination point must be a finite vector")
        if self.eps is not None and not (0.0 < self.eps < 1.0):
            raise DomainError(f"eps must lie in (0, 1), got {self.eps}")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class QuadratureSpec:
    """How to integrate over the reference distribution.

    ``rule`` is ``"gauss-hermite"`` (tensor rule of the given ``order`` per
    axis) or ``"monte-carlo"`` (``n_samples`` draws with ``seed``).
    """

    rule: str = "gauss-hermite"
    order: int = 24
    n_samples: int = 200_000
    seed: int = 0
    atol: float = 1e-8

    def __post_init__(self):
        if self.rule == "gauss-hermite":
            if self.order < 8:
                raise DomainError("Gauss-Hermite order must be >= 8")
        elif self.rule == "monte-carlo":
            if self.n_samples < 10_000:
                raise DomainError("Monte Carlo needs at least 1e4 samples")
        else:
            raise DomainError(f"unknown quadrature rule {self.rule!r}")


@dataclass(frozen=True)
class Marginal:
    """Univariate ``(1 - eps) N(0, sigma^2) + eps * Delta(atom)``."""

    sigma: float = 1.0
    eps: float = 0.0
    atom: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("marginal scale must be positive")
        if not (0.0 <= self.eps < 1.0):
            raise DomainError("mixture weight must lie in [0, 1)")


@dataclass(frozen=True)
class Bivariate:
    """Bivariate normal with correlation ``rho``, optionally contaminated.

    Represents ``(1 - eps) N2(0, [[s1^2, rho s1 s2], [., s2^2]]) + eps * Delta(atom)``.
    """

    rho: float
    sigma: tuple = (1.0, 1.0)
    eps: float = 0.0
    atom: tuple = field(default=(0.0, 0.0))

    def __post_init__(self):
        if not (-1.0 <= self.rho <= 1.0):
            raise DomainError(f"correlation must lie in [-1, 1], got {self.rho}")
        if not (0.0 <= self.eps < 1.0):
            raise DomainError("mixture weight must lie in [0, 1)")
        if min(self.sigma) <= 0:
            raise DomainError("marginal scales must be positive")

    def marginal(self, i):
        return Marginal(self.sigma[i], self.eps, self.atom[i])

    def negate(self, i):
        """Distribution of the pair with coordinate ``i`` sign-flipped."""
        atom = list(self.atom)
        atom[i] = -atom[i]
        return Bivariate(-self.rho, self.sigma, self.eps, tuple(atom))


def toeplitz_example():
    """The 3 x 3 covariance with entries 1, 1/2, 1/4 used throughout the examples."""
    return GaussianModel(np.array([[1.0, 0.5, 0.25],
                                   [0.5, 1.0, 0.5],
                                   [0.25, 0.5, 1.0]]))


# ---------------------------------------------------------------------------
# bivariate normal CDF

# 20-point Gauss-Legendre on [-1, 1], positive half (Genz).
_GL_X = np.array([0.07652652113349733, 0.2277858511416451, 0.3737060887154196,
                  0.5108670019508271, 0.6360536807265150, 0.7463319064601508,
                  0.8391169718222188, 0.9122344282513259, 0.9639719272779138,
                  0.9931285991850949])
_GL_W = np.array([0.1527533871307259, 0.1491729864726037, 0.1420961093183821,
                  0.1316886384491766, 0.1181945319615184, 0.1019301198172404,
                  0.08327674157670475, 0.06267204833410906, 0.04060142980038694,
                  0.01761400713915212])
_TWOPI = 2.0 * np.pi


def _bvnu(h, k, r):
    """Upper orthant P(X > h, Y > k) for finite h, k (Genz's BVNU)."""
    out = np.empty_like(h)
    hk = h * k
    low = np.abs(r) < 0.925
    if np.any(low):
        hl, kl, rl, hkl = h[low], k[low], r[low], hk[low]
        hs = (hl * hl + kl * kl) / 2
        asr = np.arcsin(rl)
        acc = np.zeros_like(hl)
        for sgn in (1.0, -1.0):
            sn = np.sin(asr[:, None] * (sgn * _GL_X + 1) / 2)
            acc += np.sum(_GL_W * np.exp((sn * hkl[:, None] - hs[:, None]) / (1 - sn * sn)),
                          axis=1)
        out[low] = acc * asr / (2 * _TWOPI) + ndtr(-hl) * ndtr(-kl)
    high = ~low
    if np.any(high):
        hh, kh, rh = h[high], k[high].copy(), r[high]
        neg = rh < 0
        kh[neg] = -kh[neg]
        hkh = hh * kh
        bvn = np.zeros_like(hh)
        interior = np.abs(rh) < 1
        if np.any(interior):
            hi, ki, ri, hki = hh[interior], kh[interior], rh[interior], hkh[interior]
            as_ = (1 - ri) * (1 + ri)
            a = np.sqrt(as_)
            bs = (hi - ki) ** 2
            c = (4 - hki) / 8
            d = (12 - hki) / 16
            val = a * np.exp(-(bs / as_ + hki) / 2) * (
                1 - c * (bs - as_) * (1 - d * bs / 5) / 3 + c * d * as_ * as_ / 5)
            b = np.sqrt(bs)
            tail = np.where(
                hki > -160,
                np.exp(-np.maximum(hki, -160) / 2) * np.sqrt(_TWOPI) * ndtr(-b / a) * b
                * (1 - c * bs * (1 - d * bs / 5) / 3),
                0.0)
            val = val - tail
            a2 = a / 2
            for sgn in (1.0, -1.0):
                xs = (a2[:, None] * (sgn * _GL_X + 1)) ** 2
                rs = np.sqrt(1 - xs)
                if sgn > 0:
                    term = (np.exp(-bs[:, None] / (2 * xs) - hki[:, None] / (1 + rs)) / rs
                            - np.exp(-(bs[:, None] / xs + hki[:, None]) / 2)
                            * (1 + c[:, None] * xs * (1 + d[:, None] * xs)))
                else:
                    term = np.exp(-(bs[:, None] / xs + hki[:, None]) / 2) * (
                        np.exp(-hki[:, None] * (1 - rs) / (2 * (1 + rs))) / rs
                        - (1 + c[:, None] * xs * (1 + d[:, None] * xs)))
                val = val + a2 * np.sum(_GL_W * term, axis=1)
            bvn[interior] = -val / _TWOPI
        pos = rh > 0
        bvn[pos] += ndtr(-np.maximum(hh[pos], kh[pos]))
        bvn[neg] = -bvn[neg] + np.maximum(0.0, ndtr(-hh[neg]) - ndtr(-kh[neg]))
        out[high] = bvn
    return out


def std_bivariate_cdf(x, y, rho):
    """P(X <= x, Y <= y) for a standard bivariate normal with correlation rho.

    Vectorised over broadcastable inputs; ``x`` and ``y`` may be ``+-inf``.
    Uses Genz's Gauss-Legendre scheme (accurate to about 1e-15).

    Raises
    ------
    DomainError
        If any ``rho`` lies outside [-1, 1] or an input is NaN.
    """
    x, y, rho = np.broadcast_arrays(np.asarray(x, dtype=float),
                                    np.asarray(y, dtype=float),
                                    np.asarray(rho, dtype=float))
    if np.any(np.isnan(x)) or np.any(np.isnan(y)) or np.any(np.isnan(rho)):
        raise DomainError("NaN passed to std_bivariate_cdf")
    if np.any(np.abs(rho) > 1):
        raise DomainError("correlation outside [-1, 1]")
    shape = x.shape
    x, y, rho = x.ravel(), y.ravel(), rho.ravel()
    out = np.empty(x.shape)
    neg_inf = (x == -np.inf) | (y == -np.inf)
    x_inf = (x == np.inf) & ~neg_inf
    y_inf = (y == np.inf) & ~neg_inf & ~x_inf
    out[neg_inf] = 0.0
    out[x_inf] = ndtr(y[x_inf])
    out[y_inf] = ndtr(x[y_inf])
    fin = ~(neg_inf | x_inf | y_inf)
    if np.any(fin):
        out[fin] = _bvnu(-x[fin], -y[fin], rho[fin])
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(shape) if shape else float(out[0])


# ---------------------------------------------------------------------------
# quadrature

@lru_cache(maxsize=32)
def _hermite_rule(order):
    x, w = hermegauss(order)
    w = w / np.sqrt(2 * np.pi)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_hermite(order):
    """Nodes and weights integrating against the N(0, 1) density.

    Weights sum to one; the rule is exact for polynomials of degree
    up to ``2 * order - 1``.
    """
    if order < 1:
        raise DomainError("order must be >= 1")
    x, w = _hermite_rule(int(order))
    return x.copy(), w.copy()


def tensor_gauss_hermite(model, order):
    """Tensor Gauss-Hermite rule for ``model``: nodes ``(order**p, p)`` and weights."""
    x, w = gauss_hermite(order)
    p = model.p
    grids = np.meshgrid(*([x] * p), indexing="ij")
    std = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([w] * p), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return std @ model.cholesky().T, weights


@lru_cache(maxsize=16)
def _legendre01(order):
    x, w = leggauss(order)
    return (x + 1) / 2, w / 2


def gauss_legendre_pieces(func, breaks, order=32):
    """Integrate ``func`` over consecutive intervals given by ``breaks``.

    Parameters
    ----------
    func : callable
        Vectorised integrand; receives nodes of shape ``breaks.shape[:-1] +
        (m, order)`` and returns values of the same shape.
    breaks : ndarray, shape (..., m + 1)
        Non-decreasing breakpoints. Empty intervals contribute zero.
    order : int
        Gauss-Legendre nodes per interval.

    Returns
    -------
    ndarray, shape breaks.shape[:-1]
    """
    t, w = _legendre01(order)
    lo = breaks[..., :-1, None]
    width = breaks[..., 1:, None] - lo
    nodes = lo + width * t
    vals = func(nodes)
    return np.sum(vals * w * width, axis=(-1, -2))


# ---------------------------------------------------------------------------
# sampling

def sample(model, n, seed):
    """Draw ``n`` rows i.i.d. from ``model`` using a seeded normal stream."""
    if n < 1:
        raise DomainError("n must be >= 1")
    rng = np.random.default_rng(seed)
    zstd = rng.standard_normal((int(n), model.p))
    return zstd @ model.cholesky().T

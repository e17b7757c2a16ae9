"""Graphical lasso for an arbitrary symmetric input matrix.

Solves

    min_Omega  -logdet(Omega) + tr(S Omega) + lam * sum_{i != j} |Omega_ij|

with an unpenalised diagonal. ``S`` may be a sample covariance or the value
of a scatter functional at a distribution. The solver runs primal
row/column block coordinate descent (each block is an l1-penalised
quadratic solved by coordinate descent) and then polishes the iterate with
Newton steps on the detected support, so solutions are optimal to rounding
level. Optimality is always certified by :func:`kkt_residual`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IterationLimitError, SingularityError

__all__ = [
    "PenaltySpec",
    "PrecisionEstimate",
    "SupportPermutation",
    "glasso_solve",
    "glasso_objective",
    "kkt_residual",
    "support_permutation",
]

SUPPORT_TOL = 1e-7


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty level and stopping rule.

    Parameters
    ----------
    lam : float
        Off-diagonal l1 penalty, >= 0.
    tol : float
        Maximal accepted KKT residual of the returned solution.
    max_iter : int
        Cap on block coordinate descent sweeps.
    """

    lam: float
    tol: float = 1e-9
    max_iter: int = 5000

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise DomainError(f"lambda must be >= 0, got {self.lam}")
        if not self.tol > 0:
            raise DomainError("tolerance must be positive")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class PrecisionEstimate:
    """Glasso solution together with its optimality certificate."""

    omega: np.ndarray
    support: np.ndarray
    kkt: float
    objective: float
    lam: float
    S: np.ndarray
    iterations: int = 0

    @property
    def p(self):
        return self.omega.shape[0]

    @property
    def vec(self):
        """Column-major vectorisation of ``omega``."""
        return self.omega.ravel(order="F")

    @property
    def covariance(self):
        return np.linalg.inv(self.omega)


@dataclass(frozen=True, eq=False)
class SupportPermutation:
    """Symmetric permutation of vec positions putting the support first.

    ``perm[i]`` is the vec index (0-based, column-major) placed at position
    ``i``; positions ``0..s-1`` carry support entries. The permutation is an
    involution, so the matrix ``D`` is symmetric and ``D @ D = I``.
    """

    perm: np.ndarray
    s: int

    @property
    def size(self):
        return self.perm.size

    @property
    def matrix(self):
        n = self.perm.size
        d = np.zeros((n, n))
        d[np.arange(n), self.perm] = 1.0
        return d

    @property
    def support_index(self):
        """Vec indices of the support, in permuted order."""
        return self.perm[: self.s]

    def apply(self, v):
        """Compute ``D @ v`` along the first axis."""
        return np.asarray(v)[self.perm]


def glasso_objective(S, omega, lam):
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        return np.inf
    off = np.abs(omega).sum() - np.abs(np.diag(omega)).sum()
    return float(-logdet + np.sum(S * omega) + lam * off)


def _inverse_pd(omega):
    try:
        c = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        return None
    ci = np.linalg.inv(c)
    w = ci.T @ ci
    return (w + w.T) / 2


def kkt_residual(S, lam, omega, zero_tol=0.0):
    """Largest violation of the stationarity conditions at ``omega``.

    Diagonal: ``|W_ii - S_ii|``; off-diagonal support entries:
    ``|W_ij - S_ij - lam * sign(omega_ij)|``; off-support entries:
    ``max(0, |W_ij - S_ij| - lam)``, with ``W = omega^{-1}``. Entries with
    ``|omega_ij| <= zero_tol`` count as zeros.
    """
    S = np.asarray(S, dtype=float)
    omega = np.asarray(omega, dtype=float)
    w = _inverse_pd((omega + omega.T) / 2)
    if w is None:
        raise DomainError("Omega is not positive definite")
    g = w - (S + S.T) / 2
    nz = np.abs(omega) > zero_tol
    viol = np.where(nz, np.abs(g - lam * np.sign(omega)), np.maximum(np.abs(g) - lam, 0.0))
    np.fill_diagonal(viol, np.abs(np.diag(g)))
    return float(viol.max())


def _row_update(S, omega, w, j, lam, inner_tol, inner_max):
    p = S.shape[0]
    idx = np.r_[0:j, j + 1:p]
    s22 = S[j, j]
    s12 = S[idx, j]
    w11, w12, w22 = w[np.ix_(idx, idx)], w[idx, j], w[j, j]
    a = w11 - np.outer(w12, w12) / w22  # inverse of omega_11
    qa = s22 * a
    beta = omega[idx, j].copy()
    for _ in range(inner_max):
        delta = 0.0
        for i in range(p - 1):
            r = s12[i] + qa[i] @ beta - qa[i, i] * beta[i]
            new = -np.sign(r) * max(abs(r) - lam, 0.0) / qa[i, i]
            delta = max(delta, abs(new - beta[i]))
            beta[i] = new
        if delta < inner_tol:
            break
    omega[idx, j] = beta
    omega[j, idx] = beta
    omega[j, j] = 1.0 / s22 + beta @ a @ beta


def _newton_polish(S, lam, omega, max_steps=50):
    """Newton iterations on the fixed support and sign pattern of ``omega``.

    Returns the polished matrix, or ``None`` when a sign flips or the
    iteration stalls (support guess wrong).
    """
    p = S.shape[0]
    mask = omega != 0
    np.fill_diagonal(mask, True)
    sgn = np.sign(omega)
    np.fill_diagonal(sgn, 0.0)
    e = np.flatnonzero(mask.ravel(order="F"))
    cur = omega.copy()
    w = _inverse_pd(cur)
    if w is None:
        return None

    def resid(w_):
        return (w_ - S - lam * sgn).ravel(order="F")[e]

    r = resid(w)
    rn = np.abs(r).max()
    for _ in range(max_steps):
        if rn < 1e-15:
            break
        h = np.kron(w, w)[np.ix_(e, e)]
        try:
            step = np.linalg.solve(h, r)
        except np.linalg.LinAlgError:
            return None
        full = np.zeros(p * p)
        full[e] = step
        d = full.reshape(p, p, order="F")
        d = (d + d.T) / 2
        t = 1.0
        improved = False
        while t > 1e-6:
            cand = cur + t * d
            wc = _inverse_pd(cand)
            if wc is not None:
                rc = resid(wc)
                rcn = np.abs(rc).max()
                if rcn < rn or rcn < 1e-15:
                    improved = True
                    break
            t /= 2
        if not improved:
            break
        cur, w, r, rn = cand, wc, rc, rcn
    off = ~np.eye(p, dtype=bool) & mask
    if np.any(np.sign(cur[off]) != sgn[off]):
        return None
    return (cur + cur.T) / 2


def glasso_solve(S, penalty=None, *, lam=None):
    """Solve the graphical lasso for the symmetric matrix ``S``.

    Parameters
    ----------
    S : array_like, shape (p, p)
        Symmetric input; symmetrised as ``(S + S.T) / 2``. Need not be
        positive semidefinite when ``lam > 0`` but must have a positive
        diagonal.
    penalty : PenaltySpec, optional
    lam : float, optional
        Shortcut for ``PenaltySpec(lam)``.

    Returns
    -------
    PrecisionEstimate

    Raises
    ------
    SingularityError
        ``lam == 0`` and ``S`` is not positive definite.
    IterationLimitError
        No certified optimum within ``penalty.max_iter`` sweeps.
    """
    if penalty is None:
        if lam is None:
            raise DomainError("either penalty or lam is required")
        penalty = PenaltySpec(lam)
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DomainError("S must be square")
    if not np.all(np.isfinite(S)):
        raise DomainError("S has non-finite entries")
    S = (S + S.T) / 2
    p = S.shape[0]
    lam = float(penalty.lam)

    if lam == 0.0:
        omega = _inverse_pd(S)
        if omega is None:
            raise SingularityError("lambda = 0 requires a positive definite S")
        kkt = kkt_residual(S, 0.0, omega)
        return PrecisionEstimate(omega, np.ones((p, p), dtype=bool), kkt,
                                 glasso_objective(S, omega, 0.0), 0.0, S, 0)

    if np.any(np.diag(S) <= 0):
        raise DomainError("S must have a positive diagonal")

    omega = np.diag(1.0 / np.diag(S))
    w = np.diag(np.diag(S)).astype(float)
    kkt = np.inf
    bcd_tol = 1e-8
    it = 0
    for it in range(1, penalty.max_iter + 1):
        old = omega.copy()
        for j in range(p):
            _row_update(S, omega, w, j, lam, inner_tol=1e-13, inner_max=1000)
            w_new = _inverse_pd(omega)
            if w_new is None:  # pragma: no cover - barrier keeps iterates PD
                raise IterationLimitError("iterate left the PD cone", kkt)
            w = w_new
        change = np.abs(omega - old).max()
        kkt = kkt_residual(S, lam, omega)
        if kkt < bcd_tol or change < 1e-14:
            polished = _newton_polish(S, lam, omega)
            if polished is not None:
                k2 = kkt_residual(S, lam, polished)
                if k2 <= penalty.tol:
                    omega, kkt = polished, k2
                    break
            if kkt <= penalty.tol and change < 1e-14:
                break
            bcd_tol = max(bcd_tol * 1e-2, 1e-14)
    else:
        raise IterationLimitError(f"glasso did not converge in {penalty.max_iter} sweeps", kkt)
    if kkt > penalty.tol:
        raise IterationLimitError("glasso stalled above tolerance", kkt)

    support = np.abs(omega) > SUPPORT_TOL
    np.fill_diagonal(support, True)
    return PrecisionEstimate(omega, support, kkt, glasso_objective(S, omega, lam), lam, S, it)


def support_permutation(estimate, tol=SUPPORT_TOL):
    """Build the support permutation of a precision estimate.

    Parameters
    ----------
    estimate : PrecisionEstimate or array_like
        Estimate or raw precision matrix. For an estimate computed with
        ``lam == 0`` nothing is held at zero by the penalty, so the full
        vec range is the support.
    tol : float
        Magnitude above which an entry counts as nonzero.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    if isinstance(estimate, PrecisionEstimate):
        omega = estimate.omega
        if estimate.lam == 0.0:
            mask = np.ones(omega.size, dtype=bool)
        else:
            mask = (np.abs(omega) > tol).ravel(order="F")
    else:
        omega = np.asarray(estimate, dtype=float)
        mask = (np.abs(omega) > tol).ravel(order="F")
    n = mask.size
    s = int(mask.sum())
    perm = np.arange(n)
    holes = np.flatnonzero(~mask[:s])
    movers = s + np.flatnonzero(mask[s:])
    perm[holes] = movers
    perm[movers] = holes
    perm.setflags(write=False)
    return SupportPermutation(perm, s)

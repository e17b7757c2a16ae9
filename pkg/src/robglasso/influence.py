"""Influence function of the Glasso functional.

With ``W`` the inverse of the Glasso solution and ``D`` the support
permutation, the influence function restricted to the support solves

    (D (W kron W) D)_{1:s,1:s} x = -(D vec IF(z; S, F))_{1:s}

and vanishes off the support. :func:`glasso_if_fd` recomputes the same
quantity by solving the Glasso at contaminated plug-in matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contamination import PluginIF, _richardson, fd_step, plugin_if
from .cov_plugins import PluginKind, clean_plugin_cov, plugin_cov_delta
from .errors import DomainError, NumericalDerivativeError, SingularityError
from .glasso import PenaltySpec, PrecisionEstimate, SupportPermutation, glasso_solve, \
    support_permutation

__all__ = [
    "InfluenceEvaluation",
    "GlassoInfluence",
    "restricted_block",
    "glasso_if",
    "glasso_if_batch",
    "glasso_if_fd",
    "ges_bound",
    "max_direction_unpenalized",
    "direction_gain",
]

_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class InfluenceEvaluation:
    """Glasso influence function at one contamination point."""

    z: np.ndarray
    matrix: np.ndarray
    plugin: PluginIF
    permutation: SupportPermutation
    condition: float

    @property
    def norm(self):
        return float(np.linalg.norm(self.matrix))

    @property
    def vec(self):
        return self.matrix.ravel(order="F")


def restricted_block(estimate, perm):
    """Leading s x s block of ``D (W kron W) D`` and its condition number."""
    w = estimate.covariance
    w = (w + w.T) / 2
    idx = perm.support_index
    block = np.kron(w, w)[np.ix_(idx, idx)]
    return block, float(np.linalg.cond(block))


def _check(estimate, perm):
    if not isinstance(estimate, PrecisionEstimate):
        raise DomainError("estimate must be a PrecisionEstimate")
    if perm.size != estimate.p ** 2:
        raise DomainError("support permutation does not match the estimate")
    if estimate.lam > 0:
        mask = estimate.support.ravel(order="F")
        if not np.array_equal(np.sort(perm.support_index), np.flatnonzero(mask)):
            raise DomainError("support permutation does not match the estimate's support")


def glasso_if_batch(estimate, perm, plugin_matrices):
    """Glasso influence matrices for a stack of plug-in influence matrices.

    Parameters
    ----------
    estimate : PrecisionEstimate
        Glasso solution at the uncontaminated plug-in functional.
    perm : SupportPermutation
    plugin_matrices : ndarray, shape (n, p, p)

    Returns
    -------
    matrices : ndarray, shape (n, p, p)
    condition : float
    """
    _check(estimate, perm)
    block, cond = restricted_block(estimate, perm)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularityError(f"restricted Kronecker block is singular (cond {cond:.3e})")
    p = estimate.p
    mats = np.asarray(plugin_matrices, float)
    n = mats.shape[0]
    vecs = np.transpose(mats, (0, 2, 1)).reshape(n, p * p)  # column-major vec per row
    rhs = vecs[:, perm.support_index]
    sol = -np.linalg.solve(block, rhs.T).T
    out = np.zeros((n, p * p))
    out[:, perm.support_index] = sol
    res = np.transpose(out.reshape(n, p, p), (0, 2, 1))
    return (res + np.transpose(res, (0, 2, 1))) / 2, cond


def glasso_if(estimate, perm, plugin):
    """Closed-form Glasso influence function at one point.

    Parameters
    ----------
    estimate : PrecisionEstimate
        Glasso solution at the uncontaminated plug-in functional of the same
        kind as ``plugin``.
    perm : SupportPermutation
        Support permutation of ``estimate``.
    plugin : PluginIF
        Plug-in influence function at ``z``.

    Returns
    -------
    InfluenceEvaluation
        Off-support entries are exactly zero.

    Raises
    ------
    SingularityError
        The restricted Kronecker block is numerically singular.
    """
    mats, cond = glasso_if_batch(estimate, perm, plugin.matrix[None])
    return InfluenceEvaluation(plugin.z, mats[0], plugin, perm, cond)


class GlassoInfluence:
    """Glasso solution and support permutation for one (model, kind, penalty).

    Calling the object with ``z`` returns the closed-form influence
    evaluation.
    """

    def __init__(self, model, kind, penalty):
        self.model = model
        self.kind = PluginKind.parse(kind)
        self.penalty = penalty if isinstance(penalty, PenaltySpec) else PenaltySpec(penalty)
        self.S = clean_plugin_cov(self.kind, model)
        self.estimate = glasso_solve(self.S, self.penalty)
        self.perm = support_permutation(self.estimate)

    def __call__(self, z):
        return glasso_if(self.estimate, self.perm, plugin_if(self.kind, self.model, z))

    def from_plugin(self, plugin):
        return glasso_if(self.estimate, self.perm, plugin)


def glasso_if_fd(model, kind, penalty, z, eps=None, full_output=False):
    """Glasso influence function by differencing contaminated Glasso solutions.

    ``(T_Omega(F_{eps,z}) - T_Omega(F)) / eps`` at ``eps`` and ``eps / 2``,
    Richardson-extrapolated. The step starts at ``eps`` (default: the
    plug-in step of :func:`contamination.fd_step`) and is divided by ten
    until both contaminated solutions keep the support of the clean one,
    so the quotient measures the one-sided derivative on the fixed support.

    Returns
    -------
    ndarray, shape (p, p)
        With ``full_output``, also a dict with ``step``, ``rel_change``,
        ``shrinks``.
    """
    kind = PluginKind.parse(kind)
    penalty = penalty if isinstance(penalty, PenaltySpec) else PenaltySpec(penalty)
    z = np.asarray(z, float).ravel()
    S0 = clean_plugin_cov(kind, model)
    base = glasso_solve(S0, penalty)
    step = float(fd_step(kind, model, z[None])[0]) if eps is None else float(eps)
    shrinks = 0
    while True:
        sols = []
        for h in (step, step / 2):
            delta = plugin_cov_delta(kind, model, z[None], h)[0]
            sols.append(glasso_solve(S0 + delta, penalty))
        # compare exact zero patterns: a tiny nonzero below the support
        # tolerance already means the solution left the clean support
        if all(np.array_equal(s.omega != 0, base.omega != 0) for s in sols):
            break
        step /= 10
        shrinks += 1
        if step < 1e-15:
            raise NumericalDerivativeError("support changes for every usable step")
    d1 = (sols[0].omega - base.omega) / step
    d2 = (sols[1].omega - base.omega) / (step / 2)
    est, rel = _richardson(d1, d2)
    est = (est + est.T) / 2
    if full_output:
        return est, {"step": step, "rel_change": float(rel), "shrinks": shrinks}
    return est


def ges_bound(estimate, perm, plugin_ges):
    """Operator-norm bound on the Glasso gross-error sensitivity.

    ``||A||_op * plugin_ges`` with ``A`` the inverse of the restricted
    Kronecker block; equals ``||T_Omega||_op^2 * plugin_ges`` on full
    support.
    """
    if not (np.isfinite(plugin_ges) and plugin_ges >= 0):
        raise DomainError("plugin_ges must be finite and >= 0")
    _check(estimate, perm)
    block, _ = restricted_block(estimate, perm)
    # A is symmetric positive definite: its operator norm is 1 / lambda_min(block)
    lam_min = np.linalg.eigvalsh(block)[0]
    return float(plugin_ges / lam_min)


def direction_gain(x):
    """``x**4 - 2 x**3``."""
    x = np.asarray(x, float)
    return x ** 4 - 2 * x ** 3


@dataclass(frozen=True, eq=False)
class MaxDirection:
    direction: np.ndarray
    value: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def max_direction_unpenalized(omega):
    """Unit contamination direction maximising ``||IF||_F`` for the unpenalised classical Glasso.

    The maximiser is the eigenvector of the largest or of the smallest
    eigenvalue of ``Omega``, whichever has the larger ``g(x) = x^4 - 2x^3``
    (ties go to the largest eigenvalue). The returned value is the maximal
    *squared* Frobenius norm, ``sum(lambda_i^2) + max(g(lambda_1), g(lambda_p))``.

    Returns
    -------
    MaxDirection
        Eigenvalues sorted in decreasing order, eigenvectors as columns.
    """
    omega = np.asarray(omega, float)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise DomainError("Omega must be square")
    vals, vecs = np.linalg.eigh((omega + omega.T) / 2)
    if vals[0] <= 0:
        raise DomainError("Omega must be positive definite")
    vals, vecs = vals[::-1], vecs[:, ::-1]
    g_top, g_bottom = direction_gain(vals[0]), direction_gain(vals[-1])
    v = vecs[:, 0] if g_top >= g_bottom else vecs[:, -1]
    v = v * np.sign(v[np.argmax(np.abs(v))])
    value = float(np.sum(vals ** 2) + max(g_top, g_bottom))
    return MaxDirection(v, value, vals, vecs)

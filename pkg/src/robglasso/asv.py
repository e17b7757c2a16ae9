"""Asymptotic variances of plug-in and Glasso functionals, and relative efficiencies.

Asymptotic normality with variance ``E[IF IF^T]`` is assumed (a Bahadur
representation is not proven for every plug-in); every result carries that
assumption in its metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contamination import plugin_if_batch
from .cov_plugins import PluginKind, clean_plugin_cov
from .errors import BudgetError, DomainError
from .glasso import PenaltySpec, glasso_solve, support_permutation
from .influence import restricted_block
from .model import QuadratureSpec, sample, tensor_gauss_hermite

__all__ = [
    "ASVResult",
    "EfficiencyRow",
    "plugin_asv",
    "glasso_asv",
    "glasso_component_asv",
    "efficiency_table",
    "default_quadrature",
    "ASSUMPTION",
]

ASSUMPTION = "under Bahadur assumption"
MAX_NODES = 2_000_000
_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class ASVResult:
    """Plug-in ASV (p^2 x p^2, column-major vec order) with optional Glasso ASV."""

    plugin: np.ndarray
    quadrature: QuadratureSpec
    glasso: np.ndarray | None = None
    stderr: np.ndarray | None = None
    metadata: dict = field(default_factory=lambda: {"assumption": ASSUMPTION})


def default_quadrature(kind):
    """Gauss-Hermite order 24 for smooth influence functions, Monte Carlo for Quadrant."""
    kind = PluginKind.parse(kind)
    if kind is PluginKind.QUADRANT:
        return QuadratureSpec(rule="monte-carlo", n_samples=200_000, seed=20240601)
    return QuadratureSpec(rule="gauss-hermite", order=24)


def _nodes(model, quad):
    if quad.rule == "gauss-hermite":
        if quad.order ** model.p > MAX_NODES:
            raise BudgetError(f"{quad.order}^{model.p} nodes exceed the budget of {MAX_NODES}")
        return tensor_gauss_hermite(model, quad.order)
    if quad.n_samples > MAX_NODES:
        raise BudgetError(f"{quad.n_samples} samples exceed the budget of {MAX_NODES}")
    x = sample(model, quad.n_samples, quad.seed)
    return x, np.full(len(x), 1.0 / len(x))


def _plugin_vecs(kind, model, points):
    """Column-major vec of the plug-in IF at every row of ``points``."""
    p = model.p
    out = np.empty((len(points), p * p))
    for start in range(0, len(points), _CHUNK):
        mats, _, _ = plugin_if_batch(kind, model, points[start:start + _CHUNK])
        out[start:start + _CHUNK] = np.transpose(mats, (0, 2, 1)).reshape(len(mats), p * p)
    return out


def plugin_asv(kind, model, quad=None):
    """``E[vec IF vec IF^T]`` of a plug-in scatter functional under the model.

    Parameters
    ----------
    kind : PluginKind or str
    model : GaussianModel
    quad : QuadratureSpec, optional
        Defaults to :func:`default_quadrature`.

    Returns
    -------
    ASVResult
        ``stderr`` holds entrywise Monte Carlo standard errors when the rule
        is Monte Carlo.
    """
    kind = PluginKind.parse(kind)
    if not kind.functional:
        raise DomainError("FastMCD has no influence function here")
    quad = quad or default_quadrature(kind)
    points, weights = _nodes(model, quad)
    vecs = _plugin_vecs(kind, model, points)
    m = (vecs * weights[:, None]).T @ vecs
    m = (m + m.T) / 2
    se = None
    if quad.rule == "monte-carlo":
        n = len(vecs)
        second = (vecs ** 2).T @ (vecs ** 2) / n
        se = np.sqrt(np.maximum(second - m ** 2, 0.0) / n)
    return ASVResult(m, quad, stderr=se,
                     metadata={"assumption": ASSUMPTION, "kind": kind.value,
                               "rule": quad.rule, "points": int(len(points))})


def _sensitivity_matrix(estimate, perm):
    block, _ = restricted_block(estimate, perm)
    return np.linalg.inv(block)


def glasso_asv(estimate, perm, plugin_asv_matrix):
    """Sandwich ``A (D M D)_{1:s,1:s} A^T`` for the support entries of the Glasso.

    Rows and columns follow the permuted support order ``perm.support_index``.
    """
    m = np.asarray(plugin_asv_matrix, float)
    if m.shape != (perm.size, perm.size):
        raise DomainError("plug-in ASV has the wrong shape")
    a = _sensitivity_matrix(estimate, perm)
    idx = perm.support_index
    out = a @ m[np.ix_(idx, idx)] @ a.T
    return (out + out.T) / 2


def _component_positions(perm, p, components):
    pos = []
    lookup = {int(v): i for i, v in enumerate(perm.support_index)}
    for i, j in components:
        if not (1 <= i <= p and 1 <= j <= p):
            raise DomainError(f"component {(i, j)} out of range")
        v = (j - 1) * p + (i - 1)
        if v not in lookup:
            raise DomainError(f"component {(i, j)} is outside the support")
        pos.append(lookup[v])
    return pos


def glasso_component_asv(kind, model, penalty, components, quad=None):
    """ASV of selected Glasso entries, with Monte Carlo standard errors.

    Parameters
    ----------
    components : sequence of (i, j)
        1-based matrix positions inside the support.

    Returns
    -------
    asv, stderr : ndarray
        ``stderr`` is zero for quadrature rules.
    """
    kind = PluginKind.parse(kind)
    penalty = penalty if isinstance(penalty, PenaltySpec) else PenaltySpec(penalty)
    quad = quad or default_quadrature(kind)
    estimate = glasso_solve(clean_plugin_cov(kind, model), penalty)
    perm = support_permutation(estimate)
    pos = _component_positions(perm, model.p, components)
    a = _sensitivity_matrix(estimate, perm)[pos]
    points, weights = _nodes(model, quad)
    vecs = _plugin_vecs(kind, model, points)[:, perm.support_index]
    vals = (vecs @ a.T) ** 2  # squared Glasso IF components per point
    asv = weights @ vals
    if quad.rule == "monte-carlo":
        se = vals.std(axis=0, ddof=1) / np.sqrt(len(vals))
    else:
        se = np.zeros(len(pos))
    return asv, se


@dataclass(frozen=True)
class EfficiencyRow:
    component: tuple
    kind: str
    asv: float
    efficiency: float
    mc_stderr: float
    method: str


def efficiency_table(model, lam, kinds, components, quad=None):
    """Efficiencies ``ASV_classical / ASV_kind`` of Glasso entries.

    Parameters
    ----------
    model : GaussianModel
    lam : float or PenaltySpec
    kinds : sequence of PluginKind or str
    components : sequence of (i, j)
        1-based positions, e.g. ``[(1, 1), (2, 2), (2, 1)]``.
    quad : dict, optional
        Per-kind :class:`QuadratureSpec` overrides.

    Returns
    -------
    list of EfficiencyRow
        ``mc_stderr`` is the propagated Monte Carlo error of the efficiency.
    """
    quad = quad or {}
    kinds = [PluginKind.parse(k) for k in kinds]
    components = [tuple(int(v) for v in c) for c in components]

    def spec(kind):
        for key, val in quad.items():
            if PluginKind.parse(key) is kind:
                return val
        return default_quadrature(kind)

    base, base_se = glasso_component_asv(PluginKind.CLASSICAL, model, lam, components,
                                         spec(PluginKind.CLASSICAL))
    rows = []
    for kind in kinds:
        if kind is PluginKind.CLASSICAL:
            asv, se = base, base_se
        else:
            asv, se = glasso_component_asv(kind, model, lam, components, spec(kind))
        q = spec(kind)
        for c, v, s, b, bs in zip(components, asv, se, base, base_se):
            eff = 1.0 if kind is PluginKind.CLASSICAL else b / v
            rel = 0.0 if kind is PluginKind.CLASSICAL else np.hypot(s / v, bs / b)
            rows.append(EfficiencyRow(c, kind.value, float(v), float(eff),
                                      float(eff * rel), q.rule))
    return rows

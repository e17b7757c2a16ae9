"""Plug-in functionals at point-mass contaminated normals and their influence functions.

The influence function of a non-classical plug-in is the eps-derivative of
the assembled covariance functional, estimated from difference quotients at
two steps and combined by Richardson extrapolation. Increments
``T(F_{eps,z}) - T(F)`` come straight from :mod:`cov_plugins` without
subtracting two nearly equal matrices, so very small steps are usable.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .cov_plugins import PluginKind, clean_plugin_cov, plugin_cov_delta
from .errors import DomainError, NumericalDerivativeError
from .model import ContaminationPoint, GaussianModel

__all__ = [
    "PluginIF",
    "GESRow",
    "GESScan",
    "DEFAULT_STEP",
    "contaminated_plugin_cov",
    "fd_step",
    "plugin_if",
    "plugin_if_batch",
    "ges_scan",
]

DEFAULT_STEP = 1e-4
STABILITY_FLAG = 1e-3
STABILITY_ERROR = 1e-2
# Gaussian-rank steps are capped at this fraction of the normal tail mass
# beyond the contamination point
_GR_TAIL_FRACTION = 1e-3
# beyond this many standard deviations the tail mass underflows the step
GR_MAX_STANDARD = 30.0
# Quadrant steps are capped at this fraction of the smallest nonzero |z_j|
_Q_AXIS_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class PluginIF:
    """Influence function of a plug-in scatter functional at one point.

    ``step`` is the larger of the two difference steps (``None`` for the
    closed form); ``unstable`` flags step disagreement above 1e-3 relative.
    """

    z: np.ndarray
    matrix: np.ndarray
    method: str
    step: float | None = None
    rel_change: float = 0.0
    unstable: bool = False

    @property
    def vec(self):
        return self.matrix.ravel(order="F")

    @property
    def norm(self):
        return float(np.linalg.norm(self.matrix))


def _check_kind(kind):
    kind = PluginKind.parse(kind)
    if not kind.functional:
        raise DomainError("FastMCD is finite-sample only")
    return kind


def contaminated_plugin_cov(kind, model, z, eps):
    """Value of the plug-in functional at ``(1 - eps) F + eps Delta(z)``."""
    kind = _check_kind(kind)
    if not (0.0 < eps <= 0.2):
        raise DomainError(f"eps must lie in (0, 0.2], got {eps}")
    point = ContaminationPoint(np.asarray(z, float), eps)
    if point.z.size != model.p:
        raise DomainError("z has the wrong dimension")
    return clean_plugin_cov(kind, model) + plugin_cov_delta(kind, model, point.z[None], eps)[0]


def fd_step(kind, model, zs):
    """Difference step for each row of ``zs``.

    ``DEFAULT_STEP`` for every kind except Gaussian rank, whose contaminated
    functional is linear in eps only while eps is small against the normal
    tail mass beyond the atom; there the step is capped at
    ``1e-3 * Phi(-max_j |z_j| / sigma_j)``. Quadrant medians track the atom
    once ``eps`` reaches about ``1.25 |z_j| / sigma_j``, so its step is capped
    at a tenth of the smallest nonzero standardised coordinate.
    """
    kind = PluginKind.parse(kind)
    zs = np.atleast_2d(np.asarray(zs, float))
    steps = np.full(zs.shape[0], DEFAULT_STEP)
    if kind is PluginKind.GAUSS_RANK:
        far = np.max(np.abs(zs) / model.scales, axis=1)
        if np.any(far > GR_MAX_STANDARD):
            raise DomainError(f"Gaussian-rank influence needs |z_j| / sigma_j <= {GR_MAX_STANDARD}")
        tail = ndtr(-far)
        steps = np.minimum(steps, _GR_TAIL_FRACTION * tail)
    elif kind is PluginKind.QUADRANT:
        a = np.abs(zs) / model.scales
        a = np.where(a > 0, a, np.inf).min(axis=1)
        steps = np.minimum(steps, _Q_AXIS_FRACTION * a)
    return steps


def _richardson(d1, d2):
    """Combine quotients at steps h and h/2; return estimate and relative gap."""
    est = 2 * d2 - d1
    num = np.linalg.norm(d1 - d2, axis=(-2, -1))
    den = np.maximum(np.linalg.norm(d2, axis=(-2, -1)), 1e-12)
    return est, num / den


def plugin_if_batch(kind, model, zs, steps=None):
    """Plug-in influence functions for every row of ``zs``.

    Returns
    -------
    matrices : ndarray, shape (n, p, p)
    rel_change : ndarray, shape (n,)
        Relative gap between the two difference quotients (0 for Classical).
    steps : ndarray or None
    """
    kind = _check_kind(kind)
    zs = np.atleast_2d(np.asarray(zs, float))
    if zs.shape[1] != model.p:
        raise DomainError("z has the wrong dimension")
    if kind is PluginKind.CLASSICAL:
        return zs[:, :, None] * zs[:, None, :] - model.sigma, np.zeros(len(zs)), None
    if steps is None:
        steps = fd_step(kind, model, zs)
    steps = np.broadcast_to(np.asarray(steps, float), (len(zs),))
    d1 = plugin_cov_delta(kind, model, zs, steps) / steps[:, None, None]
    d2 = plugin_cov_delta(kind, model, zs, steps / 2) / (steps[:, None, None] / 2)
    est, rel = _richardson(d1, d2)
    if np.any(rel > STABILITY_ERROR):
        i = int(np.argmax(rel))
        raise NumericalDerivativeError(
            f"difference quotients disagree by {rel[i]:.2e} at z = {zs[i].tolist()}")
    est = (est + np.swapaxes(est, 1, 2)) / 2
    return est, rel, steps


def plugin_if(kind, model, z, step=None):
    """Influence function ``IF(z; S, F)`` of a plug-in scatter functional.

    Classical uses the closed form ``z z^T - Sigma``. Other kinds difference
    the assembled functional at ``step`` and ``step / 2`` and extrapolate.

    Raises
    ------
    NumericalDerivativeError
        The two quotients differ by more than 1e-2 relative.
    """
    kind = _check_kind(kind)
    z = np.asarray(z, float).ravel()
    mats, rel, steps = plugin_if_batch(kind, model, z[None], steps=step)
    if steps is None:
        return PluginIF(z, mats[0], "closed-form")
    return PluginIF(z, mats[0], "central-difference", float(steps[0]), float(rel[0]),
                    bool(rel[0] > STABILITY_FLAG))


@dataclass(frozen=True)
class GESRow:
    radius: float
    direction: int
    z: tuple
    plugin_norm: float
    glasso_norm: float | None = None


@dataclass(frozen=True)
class GESScan:
    kind: PluginKind
    rows: tuple
    bounded: bool
    growth: float

    def max_norm(self, which="plugin"):
        vals = [getattr(r, f"{which}_norm") for r in self.rows]
        return max(v for v in vals if v is not None)


def ges_scan(kind, model, radii, directions, glasso=None, threads=1):
    """Frobenius norms of the influence function over ``z = r * d``.

    Parameters
    ----------
    radii : sequence of float
    directions : sequence of array_like
        Normalised to unit length.
    glasso : callable, optional
        Maps a :class:`PluginIF` to a Glasso influence matrix; its norms
        are added to each row.
    threads : int
        Worker cap; results keep grid order.

    Returns
    -------
    GESScan
        ``growth`` is the ratio of the largest norms at the two largest
        radii; ``bounded`` means growth below 1.2.
    """
    kind = _check_kind(kind)
    radii = [float(r) for r in radii]
    dirs = [np.asarray(d, float) for d in directions]
    if not radii or not dirs:
        raise DomainError("radius and direction grids must be non-empty")
    units = []
    for d in dirs:
        nrm = np.linalg.norm(d)
        if d.size != model.p or nrm == 0:
            raise DomainError("directions must be non-zero vectors of length p")
        units.append(d / nrm)
    cells = [(r, i) for r in radii for i in range(len(units))]

    def work(cell):
        r, i = cell
        pif = plugin_if(kind, model, r * units[i])
        g = None if glasso is None else float(np.linalg.norm(glasso(pif)))
        return GESRow(r, i, tuple(float(v) for v in r * units[i]), pif.norm, g)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = tuple(pool.map(work, cells))
    else:
        rows = tuple(map(work, cells))
    order = sorted(set(radii))
    if len(order) >= 2:
        top = max(r.plugin_norm for r in rows if r.radius == order[-1])
        prev = max(r.plugin_norm for r in rows if r.radius == order[-2])
        growth = top / prev if prev > 0 else np.inf
    else:
        growth = 1.0
    return GESScan(kind, rows, bool(growth < 1.2), float(growth))

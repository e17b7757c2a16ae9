"""Finite-sample sensitivity curves of the Glasso with a plug-in covariance.

For a clean sample ``X`` of size ``n - 1`` and a point ``z``,
``SC(z) = n * (Omega(X + z) - Omega(X))`` where ``Omega`` is the Glasso
fitted to the plug-in estimate. Curves are averaged over independent
replications.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cov_plugins import MCDOptions, PluginKind, finite_sample_estimate
from .errors import DomainError, NumericalError, RobGlassoError
from .glasso import PenaltySpec, glasso_solve
from .model import sample

__all__ = ["SCExperiment", "SCSurface", "sc_surface", "replication_seeds"]

MAX_DROP_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class SCExperiment:
    """Sensitivity-curve design.

    Parameters
    ----------
    model : GaussianModel
    kind : PluginKind or str
    lam : float
    grid : array_like, shape (m, p)
        Contamination points.
    n : int
        Sample size including the added point.
    replications : int
    seed : int
    mcd : MCDOptions, optional
        FastMCD settings (its ``seed`` is offset per replication).
    """

    model: object
    kind: PluginKind
    lam: float
    grid: np.ndarray
    n: int = 1000
    replications: int = 50
    seed: int = 0
    mcd: MCDOptions = field(default_factory=MCDOptions)

    def __post_init__(self):
        object.__setattr__(self, "kind", PluginKind.parse(self.kind))
        grid = np.atleast_2d(np.asarray(self.grid, float))
        if grid.shape[1] != self.model.p or grid.shape[0] == 0:
            raise DomainError("grid must be a non-empty (m, p) array")
        if not np.all(np.isfinite(grid)):
            raise DomainError("grid points must be finite")
        object.__setattr__(self, "grid", grid)
        if self.n < 4:
            raise DomainError("n must be at least 4")
        if self.kind is PluginKind.FAST_MCD and self.n <= 2 * self.model.p:
            raise DomainError("FastMCD needs n > 2p")
        if self.replications < 1:
            raise DomainError("at least one replication is required")
        PenaltySpec(self.lam)

    @property
    def experimental(self):
        return self.kind is PluginKind.FAST_MCD


@dataclass(frozen=True, eq=False)
class SCSurface:
    """Replication-averaged sensitivity curve on a grid.

    ``stderr`` is the delta-method standard error of ``norm``.
    """

    grid: np.ndarray
    mean: np.ndarray
    norm: np.ndarray
    stderr: np.ndarray
    replications: int
    dropped: int
    experimental: bool = False


def replication_seeds(seed, replications):
    """Independent integer seeds, one per replication."""
    ss = np.random.SeedSequence(seed)
    return [int(s) for s in ss.generate_state(replications, dtype=np.uint64) % (2 ** 63)]


def _estimate(exp, data, rep_seed):
    if exp.kind is PluginKind.FAST_MCD:
        opts = MCDOptions(exp.mcd.subset_fraction, exp.mcd.reweight, exp.mcd.n_starts,
                          rep_seed, exp.mcd.chi2_quantile)
        return finite_sample_estimate(exp.kind, data, opts)
    return finite_sample_estimate(exp.kind, data)


def _replicate(exp, rep_seed):
    penalty = PenaltySpec(exp.lam)
    x = sample(exp.model, exp.n - 1, rep_seed)
    base = glasso_solve(_estimate(exp, x, rep_seed), penalty).omega
    out = np.empty((len(exp.grid), exp.model.p, exp.model.p))
    for i, z in enumerate(exp.grid):
        om = glasso_solve(_estimate(exp, np.vstack([x, z]), rep_seed), penalty).omega
        out[i] = exp.n * (om - base)
    return out


def sc_surface(exp, threads=1):
    """Sensitivity curves of the Glasso over ``exp.grid``.

    Replications that fail (estimator or solver error) are dropped and
    counted.

    Raises
    ------
    NumericalError
        More than 10% of the replications were dropped.
    """
    seeds = replication_seeds(exp.seed, exp.replications)

    def run(s):
        try:
            return _replicate(exp, s)
        except (RobGlassoError, np.linalg.LinAlgError):
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(s) for s in seeds]
    kept = [r for r in results if r is not None]
    dropped = len(results) - len(kept)
    if not kept or dropped > MAX_DROP_FRACTION * exp.replications:
        raise NumericalError(f"{dropped} of {exp.replications} replications failed")
    stack = np.stack(kept)  # fixed replication order keeps the mean bit-stable
    mean = stack.mean(axis=0)
    norm = np.linalg.norm(mean, axis=(1, 2))
    if len(kept) > 1:
        unit = mean / np.maximum(norm, 1e-300)[:, None, None]
        proj = np.einsum("rgij,gij->rg", stack, unit)
        se = proj.std(axis=0, ddof=1) / np.sqrt(len(kept))
    else:
        se = np.full(len(norm), np.nan)
    return SCSurface(exp.grid, mean, norm, se, len(kept), dropped, exp.experimental)

"""Acceptance gate: one verdict line per criterion.

Each test records PASS/FAIL through the ``gate`` fixture (shown in the
terminal summary) and then asserts the same condition.
"""

import json
import time

import numpy as np
import pytest

from robglasso import cli
from robglasso.asv import efficiency_table
from robglasso.cov_plugins import PAIRWISE_KINDS, pairwise_cov, qn_scale_functional
from robglasso.glasso import glasso_solve
from robglasso.influence import GlassoInfluence, direction_gain, glasso_if_batch, \
    glasso_if_fd, max_direction_unpenalized
from robglasso.contamination import plugin_if_batch
from robglasso.model import GaussianModel, Marginal
from robglasso.sensitivity import SCExperiment, sc_surface

ALL_KINDS = ["classical", "gaussrank", "spearman", "kendall", "quadrant"]
GRID5 = np.array([[a, b, 0.0] for a in np.linspace(-6, 6, 5) for b in np.linspace(-6, 6, 5)])

TABLE1 = {
    "gaussrank": ((0.8210, 0.8085, 0.9563), 0.05),
    "kendall": ((0.8150, 0.8091, 0.8725), 0.05),
    "spearman": ((0.8097, 0.8027, 0.8491), 0.05),
    "quadrant": ((0.4866, 0.4187, 0.3004), 0.07),
}


def test_1_exact_inverse_recovery(toeplitz, omega_exact, gate):
    t0 = time.perf_counter()
    est = glasso_solve(toeplitz.sigma, lam=0.0)
    elapsed = time.perf_counter() - t0
    err = np.abs(est.omega - omega_exact).max()
    ok = err <= 1e-8 and elapsed < 1.0
    gate(1, "exact inverse at lambda = 0", ok, f"max err {err:.2e}, {elapsed:.3f}s")
    assert ok


def test_2_sparsity_pattern(toeplitz, gate):
    est = glasso_solve(toeplitz.sigma, lam=8e-4)
    expected = np.ones((3, 3), dtype=bool)
    expected[0, 2] = expected[2, 0] = False
    ok = np.array_equal(est.support, expected) and est.omega[0, 2] == 0.0
    gate(2, "support at lambda = 8e-4", ok, f"kkt {est.kkt:.1e}")
    assert ok


def test_3_closed_form_vs_finite_difference(toeplitz, gate):
    t0 = time.perf_counter()
    worst, zeros_ok = 0.0, True
    where = None
    for lam in (8e-4, 0.0):
        for kind in ALL_KINDS:
            gi = GlassoInfluence(toeplitz, kind, lam)
            off = ~gi.estimate.support
            for z in GRID5:
                ev = gi(z)
                fd = glasso_if_fd(toeplitz, kind, lam, z)
                rel = np.linalg.norm(ev.matrix - fd) / np.linalg.norm(fd)
                if rel > worst:
                    worst, where = rel, (lam, kind, tuple(z))
                if lam > 0 and np.any(ev.matrix[off] != 0.0):
                    zeros_ok = False
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and zeros_ok and elapsed < 600
    gate(3, "closed-form vs finite-difference Glasso IF", ok,
         f"worst rel {worst:.2e} at lam={where[0]} {where[1]} "
         f"z={[float(v) for v in where[2]]}, exact zeros {zeros_ok}, {elapsed:.0f}s")
    assert ok


def test_4_kronecker_reduction(toeplitz, gate):
    dense = GaussianModel(0.5 * np.eye(4) + 0.5)  # equicorrelation: dense precision
    worst = 0.0
    for model, lam in ((toeplitz, 0.0), (dense, 1e-3)):
        for kind in ALL_KINDS:
            gi = GlassoInfluence(model, kind, lam)
            assert gi.perm.s == model.p ** 2
            om = gi.estimate.omega
            zs = np.random.default_rng(7).normal(scale=2.0, size=(20, model.p))
            pm, _, _ = plugin_if_batch(kind, model, zs)
            gm, _ = glasso_if_batch(gi.estimate, gi.perm, pm)
            ref = -om @ pm @ om
            worst = max(worst, np.abs(gm - ref).max())
    ok = worst <= 1e-10
    gate(4, "full support reduces to -Omega IF Omega", ok, f"max abs diff {worst:.2e}")
    assert ok


def test_5_worst_direction(toeplitz, gate):
    res = max_direction_unpenalized(toeplitz.omega)
    lam = res.eigenvalues
    top = res.eigenvectors[:, 0]
    aligned = abs(abs(res.direction @ top) - 1) < 1e-12
    bound = np.sum(lam ** 2) + direction_gain(lam[0])
    gi = GlassoInfluence(toeplitz, "classical", 0.0)
    u = np.random.default_rng(11).normal(size=(10_000, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pm, _, _ = plugin_if_batch("classical", toeplitz, u)
    gm, _ = glasso_if_batch(gi.estimate, gi.perm, pm)
    excess = np.max(np.sum(gm ** 2, axis=(1, 2))) - bound
    ok = aligned and direction_gain(lam[0]) > direction_gain(lam[-1]) and excess <= 1e-6
    gate(5, "worst-case direction and value", ok,
         f"g(l1)={direction_gain(lam[0]):.4f}, g(lp)={direction_gain(lam[-1]):.4f}, "
         f"max excess {excess:.2e}")
    assert ok


def test_6_fisher_consistency(toeplitz, gate):
    worst = max(np.abs(pairwise_cov(k, toeplitz) - toeplitz.sigma).max() for k in PAIRWISE_KINDS)
    qn = qn_scale_functional(Marginal(1.0))
    ok = worst <= 1e-6 and abs(qn - 1) <= 1e-8
    gate(6, "Fisher consistency of pairwise plug-ins and Qn", ok,
         f"max err {worst:.1e}, Qn {qn:.12f}")
    assert ok


@pytest.mark.slow
def test_7_efficiency_table(toeplitz, gate):
    t0 = time.perf_counter()
    rows = efficiency_table(toeplitz, 8e-4, list(TABLE1), [(1, 1), (2, 2), (2, 1)])
    elapsed = time.perf_counter() - t0
    got = {}
    for r in rows:
        got.setdefault(r.kind, []).append(r.efficiency)
    ok = elapsed < 45 * 60
    parts = []
    for kind, (target, tol) in TABLE1.items():
        diff = np.abs(np.array(got[kind]) - target)
        ok &= bool(np.all(diff <= tol))
        parts.append(f"{kind} " + "/".join(f"{v:.4f}" for v in got[kind]))
    gate(7, "relative efficiencies of the pairwise plug-ins", ok,
         "; ".join(parts) + f"; {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_8_sensitivity_gates(toeplitz, gate):
    norms = {}
    for kind in ("classical", "kendall", "spearman"):
        exp = SCExperiment(toeplitz, kind, 8e-4, GRID5, n=1000, replications=50, seed=2024)
        norms[kind] = sc_surface(exp).norm
    i6 = int(np.flatnonzero((GRID5 == [6, -6, 0]).all(axis=1))[0])
    i3 = int(np.flatnonzero((GRID5 == [3, -3, 0]).all(axis=1))[0])
    ratio = {k: v[i6] / v[i3] for k, v in norms.items()}
    k, s = norms["kendall"], norms["spearman"]
    gap = np.max(np.abs(k - s) / ((k + s) / 2))
    ok = ratio["classical"] > 2 and ratio["kendall"] < 1.5 and ratio["spearman"] < 1.5 \
        and gap < 0.15
    gate(8, "sensitivity-curve qualitative gates", ok,
         f"ratios C {ratio['classical']:.2f} K {ratio['kendall']:.3f} "
         f"S {ratio['spearman']:.3f}; max K/S gap {gap:.3f}")
    assert ok


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


CLI_RUNS = {
    "solve": "[model]\npreset = toeplitz3\n[penalty]\nlambda = 8e-4\n[plugin]\nkind = spearman\n",
    "if-surface": "[model]\npreset = toeplitz3\n[penalty]\nlambda = 8e-4\n[plugin]\nkind = kendall\n"
                  "[grid]\nz1 = -6:6:1.5\nz2 = -6:6:1.5\nz3 = 0\n",
    "sc-surface": "[model]\npreset = toeplitz3\n[penalty]\nlambda = 8e-4\n[plugin]\nkind = quadrant\n"
                  "[grid]\nz1 = -6, 6\nz2 = 0\nz3 = 0\n[run]\nn = 200\nreplications = 3\n",
    "ges-scan": "[model]\npreset = toeplitz3\n[penalty]\nlambda = 0\n[plugin]\nkind = gaussrank\n"
                "[grid]\nradii = 1, 3, 6\ndirections = 1,0,0; 1,-1,0; 1,1,1\n",
    "max-direction": "[model]\np = 2\nsigma = 2, 0.5, 0.5, 1\n",
    "asv": "[model]\npreset = toeplitz3\n[penalty]\nlambda = 8e-4\n[plugin]\nkind = quadrant\n"
           "[run]\nsamples = 10000\n",
    "efficiency-table": "[model]\npreset = toeplitz3\n[penalty]\nlambda = 8e-4\n"
                        "[run]\norder = 8\nsamples = 10000\nkinds = kendall, quadrant\n",
}


def test_9_manifest_reproducibility(tmp_path, gate):
    mismatched = []
    for task, text in CLI_RUNS.items():
        cfg_path = _write(tmp_path / f"{task}.ini", text)
        first, second = tmp_path / f"{task}-a", tmp_path / f"{task}-b"
        assert cli.main([task, "--config", str(cfg_path), "--out", str(first), "--seed", "5"]) == 0
        manifest = first / f"{task}.manifest.json"
        assert cli.main([task, "--config", str(manifest), "--out", str(second)]) == 0
        a = (first / f"{task}.csv").read_bytes()
        b = (second / f"{task}.csv").read_bytes()
        if a != b or json.loads(manifest.read_text())["csv_sha256"] is None:
            mismatched.append(task)
    ok = not mismatched
    gate(9, "CLI reruns from manifests are byte-identical", ok,
         f"{len(CLI_RUNS)} tasks" + (f", mismatched {mismatched}" if mismatched else ""))
    assert ok

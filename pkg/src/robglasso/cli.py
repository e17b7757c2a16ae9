"""Command-line experiment runner.

Every subcommand reads an INI-style configuration, writes a CSV artifact
and a JSON manifest to ``--out``. The manifest embeds the fully resolved
configuration, so ``--config run.manifest.json`` reproduces the CSV byte
for byte.

Configuration sections (keys are case-insensitive)::

    [model]    preset = toeplitz3 | p = 3 and sigma = row-major list
    [penalty]  lambda, tol, max_iter
    [plugin]   kind, subset_fraction, reweight, n_starts, chi2_quantile
    [task]     name (optional; must match the subcommand)
    [grid]     z1 = start:stop:step or a comma list (one key per coordinate);
               radii = comma list; directions = vectors separated by ';'
    [run]      seed, n, replications, order, rule, samples, kinds, components

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 budget exceeded.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .asv import ASSUMPTION, efficiency_table, glasso_asv, plugin_asv
from .contamination import ges_scan, plugin_if_batch
from .cov_plugins import MCDOptions, PluginKind, clean_plugin_cov
from .errors import BudgetError, ConfigError, DomainError, ModelError, NumericalError, \
    RobGlassoError
from .glasso import PenaltySpec, glasso_solve, support_permutation
from .influence import ges_bound, glasso_if_batch, max_direction_unpenalized
from .model import GaussianModel, QuadratureSpec, toeplitz_example
from .sensitivity import SCExperiment, sc_surface

TASKS = ("solve", "if-surface", "sc-surface", "ges-scan", "max-direction", "asv",
         "efficiency-table")
SECTIONS = ("model", "penalty", "plugin", "task", "grid", "run")
CSV_SCHEMA_VERSION = 1
# second name accepted as an alias for existing configs
PRESETS = {"toeplitz3": toeplitz_example, "paper-toeplitz": toeplitz_example}

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_BUDGET = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment: one task plus its resolved settings.

    ``sections`` maps section -> key -> canonical string value and is what
    the manifest stores.
    """

    task: str
    sections: dict

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def require(self, section, key):
        val = self.get(section, key)
        if val is None or val == "":
            raise ConfigError(f"[{section}] {key}: required field is missing")
        return val


def _float(cfg, section, key, default=None):
    raw = cfg.get(section, key)
    if raw is None:
        if default is None:
            raise ConfigError(f"[{section}] {key}: required field is missing")
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None


def _int(cfg, section, key, default=None):
    raw = cfg.get(section, key)
    if raw is None:
        if default is None:
            raise ConfigError(f"[{section}] {key}: required field is missing")
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from None


def _floats(text, where):
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{where}: expected a comma-separated list of numbers") from None


def _axis(text, where):
    """``start:stop:step`` (inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"{where}: ranges are written start:stop:step")
        start, stop, step = (_floats(p, where)[0] for p in parts)
        if step <= 0 or stop < start:
            raise ConfigError(f"{where}: need step > 0 and stop >= start")
        count = int(round((stop - start) / step)) + 1
        return start + step * np.arange(count)
    vals = _floats(text, where)
    if not vals:
        raise ConfigError(f"{where}: empty list")
    return np.array(vals)


def _parse_ini(text, source):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    sections = {}
    for name in parser.sections():
        key = name.strip().lower()
        if key not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]")
        sections[key] = {k.strip().lower(): v.strip() for k, v in parser.items(name)}
    return sections


def load_config(path, task=None, seed=None):
    """Read an INI config or a run manifest and validate it for ``task``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            manifest = json.loads(text)
            sections = {s: dict(v) for s, v in manifest["config"].items()}
        except (ValueError, KeyError, TypeError, AttributeError):
            raise ConfigError(f"{path}: not a run manifest") from None
    else:
        sections = _parse_ini(text, str(path))
    return resolve(sections, task, seed)


def resolve(sections, task=None, seed=None):
    """Validate raw sections and fill defaults into a canonical config."""
    sections = {s: {k: str(v) for k, v in d.items()} for s, d in sections.items()}
    named = sections.get("task", {}).get("name")
    if task is None and named is None:
        raise ConfigError("[task] name: required field is missing")
    if task is not None and named is not None and named != task:
        raise ConfigError(f"[task] name: config says {named!r} but subcommand is {task!r}")
    task = task or named
    if task not in TASKS:
        raise ConfigError(f"[task] name: unknown task {task!r}")
    sections.setdefault("task", {})["name"] = task
    run = sections.setdefault("run", {})
    if seed is not None:
        run["seed"] = str(int(seed))
    run.setdefault("seed", "0")
    cfg = ExperimentConfig(task, sections)
    # fail early on the blocks every task needs
    build_model(cfg)
    if task not in ("max-direction",):
        lam = _float(cfg, "penalty", "lambda")
        if lam < 0:
            raise ConfigError("[penalty] lambda: must be >= 0")
    if task not in ("max-direction", "efficiency-table"):
        _kind(cfg)
    return cfg


def build_model(cfg):
    preset = cfg.get("model", "preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"[model] preset: unknown preset {preset!r}")
        return PRESETS[preset]()
    p = _int(cfg, "model", "p")
    if p < 2:
        raise ConfigError("[model] p: must be >= 2")
    vals = _floats(cfg.require("model", "sigma"), "[model] sigma")
    if len(vals) != p * p:
        raise ConfigError(f"[model] sigma: expected {p * p} entries, got {len(vals)}")
    try:
        return GaussianModel(np.array(vals).reshape(p, p))
    except (ModelError, DomainError) as exc:
        raise ConfigError(f"[model] sigma: {exc}") from None


def _kind(cfg):
    try:
        return PluginKind.parse(cfg.get("plugin", "kind", "classical"))
    except DomainError as exc:
        raise ConfigError(f"[plugin] kind: {exc}") from None


def _penalty(cfg):
    lam = _float(cfg, "penalty", "lambda")
    try:
        return PenaltySpec(lam, _float(cfg, "penalty", "tol", 1e-9),
                           _int(cfg, "penalty", "max_iter", 5000))
    except DomainError as exc:
        raise ConfigError(f"[penalty] {exc}") from None


def _functional_kind(cfg):
    kind = _kind(cfg)
    if not kind.functional:
        raise ConfigError(f"[plugin] kind: task {cfg.task!r} needs a functional kind, "
                          "FastMCD is finite-sample only")
    return kind


def _grid(cfg, p):
    axes = []
    for j in range(1, p + 1):
        where = f"[grid] z{j}"
        axes.append(_axis(cfg.require("grid", f"z{j}"), where))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _components(cfg):
    text = cfg.get("run", "components", "1,1; 2,2; 2,1")
    comps = []
    for chunk in text.split(";"):
        vals = _floats(chunk, "[run] components")
        if len(vals) != 2:
            raise ConfigError("[run] components: pairs are written i,j; i,j; ...")
        comps.append((int(vals[0]), int(vals[1])))
    return comps


def _quadrature(cfg, kind):
    rule = cfg.get("run", "rule")
    if rule is None:
        rule = "monte-carlo" if kind is PluginKind.QUADRANT else "gauss-hermite"
    try:
        return QuadratureSpec(rule=rule, order=_int(cfg, "run", "order", 24),
                              n_samples=_int(cfg, "run", "samples", 200_000),
                              seed=_int(cfg, "run", "seed"))
    except DomainError as exc:
        raise ConfigError(f"[run] {exc}") from None


# ---------------------------------------------------------------------------
# tasks: each returns (header, rows, extra manifest fields)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _entry_cols(prefix, p):
    return [f"{prefix}_{i}_{j}" for i in range(1, p + 1) for j in range(1, p + 1)]


def task_solve(cfg, threads):
    model = build_model(cfg)
    kind = _functional_kind(cfg)
    est = glasso_solve(clean_plugin_cov(kind, model), _penalty(cfg))
    rows = [[i + 1, j + 1, est.omega[i, j], bool(est.support[i, j])]
            for i in range(model.p) for j in range(model.p)]
    return ["i", "j", "omega", "support"], rows, {"kkt": est.kkt, "objective": est.objective}


def task_if_surface(cfg, threads):
    model = build_model(cfg)
    kind = _functional_kind(cfg)
    est = glasso_solve(clean_plugin_cov(kind, model), _penalty(cfg))
    perm = support_permutation(est)
    zs = _grid(cfg, model.p)
    chunks = np.array_split(np.arange(len(zs)), max(1, min(len(zs), 64)))

    def work(idx):
        mats, rel, _ = plugin_if_batch(kind, model, zs[idx])
        gmats, _ = glasso_if_batch(est, perm, mats)
        return mats, gmats, rel

    results = _map(work, chunks, threads)
    pm = np.concatenate([r[0] for r in results])
    gm = np.concatenate([r[1] for r in results])
    rel = np.concatenate([r[2] for r in results])
    p = model.p
    header = [f"z{j}" for j in range(1, p + 1)] + ["plugin_norm", "glasso_norm",
                                                   "step_flag"] + _entry_cols("if", p)
    rows = []
    for z, a, g, r in zip(zs, pm, gm, rel):
        rows.append(list(z) + [np.linalg.norm(a), np.linalg.norm(g), bool(r > 1e-3)]
                    + list(g.ravel()))
    return header, rows, {"support_size": perm.s}


def task_sc_surface(cfg, threads):
    model = build_model(cfg)
    kind = _kind(cfg)
    lam = _penalty(cfg).lam
    mcd = MCDOptions(_float(cfg, "plugin", "subset_fraction", 0.75),
                     cfg.get("plugin", "reweight", "false").lower() in ("1", "true", "yes"),
                     _int(cfg, "plugin", "n_starts", 500),
                     _int(cfg, "run", "seed"),
                     _float(cfg, "plugin", "chi2_quantile", 0.975))
    try:
        exp = SCExperiment(model, kind, lam, _grid(cfg, model.p), _int(cfg, "run", "n", 1000),
                           _int(cfg, "run", "replications", 50), _int(cfg, "run", "seed"), mcd)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    surf = sc_surface(exp, threads=threads)
    p = model.p
    header = [f"z{j}" for j in range(1, p + 1)] + ["norm", "stderr"] + _entry_cols("sc", p)
    rows = [list(z) + [n, s] + list(m.ravel())
            for z, n, s, m in zip(surf.grid, surf.norm, surf.stderr, surf.mean)]
    return header, rows, {"replications_kept": surf.replications, "dropped": surf.dropped,
                          "experimental": surf.experimental}


def task_ges_scan(cfg, threads):
    model = build_model(cfg)
    kind = _functional_kind(cfg)
    est = glasso_solve(clean_plugin_cov(kind, model), _penalty(cfg))
    perm = support_permutation(est)
    radii = _floats(cfg.require("grid", "radii"), "[grid] radii")
    dirs = [_floats(d, "[grid] directions")
            for d in cfg.require("grid", "directions").split(";") if d.strip()]

    def glasso(pif):
        return glasso_if_batch(est, perm, pif.matrix[None])[0][0]

    try:
        scan = ges_scan(kind, model, radii, dirs, glasso=glasso, threads=threads)
    except DomainError as exc:
        raise ConfigError(f"[grid] {exc}") from None
    p = model.p
    header = ["radius", "direction"] + [f"z{j}" for j in range(1, p + 1)] + \
        ["plugin_norm", "glasso_norm"]
    rows = [[r.radius, r.direction + 1, *r.z, r.plugin_norm, r.glasso_norm] for r in scan.rows]
    plugin_ges = scan.max_norm("plugin")
    return header, rows, {"bounded": scan.bounded, "growth": scan.growth,
                          "plugin_ges_on_grid": plugin_ges,
                          "glasso_ges_bound": ges_bound(est, perm, plugin_ges)}


def task_max_direction(cfg, threads):
    model = build_model(cfg)
    res = max_direction_unpenalized(model.omega)
    p = model.p
    header = [f"v{j}" for j in range(1, p + 1)] + ["max_sq_norm"] + \
        [f"eigenvalue_{j}" for j in range(1, p + 1)]
    return header, [list(res.direction) + [res.value] + list(res.eigenvalues)], {}


def task_asv(cfg, threads):
    model = build_model(cfg)
    kind = _functional_kind(cfg)
    quad = _quadrature(cfg, kind)
    res = plugin_asv(kind, model, quad)
    est = glasso_solve(clean_plugin_cov(kind, model), _penalty(cfg))
    perm = support_permutation(est)
    g = glasso_asv(est, perm, res.plugin)
    rows = []
    n = res.plugin.shape[0]
    for a in range(n):
        for b in range(n):
            se = res.stderr[a, b] if res.stderr is not None else 0.0
            rows.append(["plugin", a + 1, b + 1, res.plugin[a, b], se])
    idx = perm.support_index
    for a in range(perm.s):
        for b in range(perm.s):
            rows.append(["glasso", int(idx[a]) + 1, int(idx[b]) + 1, g[a, b], ""])
    return ["block", "row_vec", "col_vec", "value", "stderr"], rows, \
        {"assumption": ASSUMPTION, "rule": quad.rule, "support_size": perm.s}


def task_efficiency_table(cfg, threads):
    model = build_model(cfg)
    kinds_text = cfg.get("run", "kinds", "classical, gaussrank, kendall, spearman, quadrant")
    try:
        kinds = [PluginKind.parse(k) for k in kinds_text.split(",") if k.strip()]
    except DomainError as exc:
        raise ConfigError(f"[run] kinds: {exc}") from None
    if any(not k.functional for k in kinds):
        raise ConfigError("[run] kinds: FastMCD has no asymptotic variance here")
    quad = {k: _quadrature(cfg, k) for k in kinds + [PluginKind.CLASSICAL]}
    rows = efficiency_table(model, _penalty(cfg), kinds, _components(cfg), quad)
    out = [[f"({r.component[0]},{r.component[1]})", r.kind, r.asv, r.efficiency,
            r.mc_stderr, r.method] for r in rows]
    return ["component", "kind", "asv", "efficiency", "mc_stderr", "method"], out, \
        {"assumption": ASSUMPTION}


TASK_FUNCS = {
    "solve": task_solve,
    "if-surface": task_if_surface,
    "sc-surface": task_sc_surface,
    "ges-scan": task_ges_scan,
    "max-direction": task_max_direction,
    "asv": task_asv,
    "efficiency-table": task_efficiency_table,
}


def _map(func, items, threads):
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(func, items))
    return [func(i) for i in items]


# ---------------------------------------------------------------------------
# running


def render_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def plan(cfg, out_dir, threads):
    return {"task": cfg.task, "config": cfg.sections, "threads": threads,
            "csv": str(Path(out_dir) / f"{cfg.task}.csv"),
            "manifest": str(Path(out_dir) / f"{cfg.task}.manifest.json")}


def run(cfg, out_dir, threads=1):
    """Execute ``cfg`` and write ``<task>.csv`` and ``<task>.manifest.json``.

    Returns the paths written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    header, rows, extra = TASK_FUNCS[cfg.task](cfg, threads)
    elapsed = time.perf_counter() - t0
    text = render_csv(header, rows)
    csv_path = out_dir / f"{cfg.task}.csv"
    csv_path.write_bytes(text.encode("utf-8"))
    manifest = {
        "library": "robglasso",
        "version": __version__,
        "task": cfg.task,
        "config": cfg.sections,
        "seed": int(cfg.get("run", "seed")),
        "threads": threads,
        "csv": csv_path.name,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "csv_sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
        "psd_repair_norm": "frobenius",
        "rows": len(rows),
        "timings": {"task_seconds": elapsed},
        "results": {k: _jsonable(v) for k, v in extra.items()},
    }
    man_path = out_dir / f"{cfg.task}.manifest.json"
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, man_path


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int)) and not isinstance(v, bool):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def build_parser():
    parser = argparse.ArgumentParser(
        prog="robglasso",
        description="Glasso with robust plug-in covariances: influence functions, "
                    "sensitivity curves and asymptotic efficiencies.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        sp = sub.add_parser(task, help=f"run the {task} task")
        sp.add_argument("--config", required=True, help="INI config or run manifest")
        sp.add_argument("--out", default=".", help="output directory (default: .)")
        sp.add_argument("--seed", type=int, default=None, help="override [run] seed")
        sp.add_argument("--threads", type=int, default=1, help="worker cap (default: 1)")
        sp.add_argument("--dry-run", action="store_true",
                        help="validate and print the resolved plan without computing")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, args.task, args.seed)
        if args.dry_run:
            print(json.dumps(plan(cfg, args.out, args.threads), indent=2, sort_keys=True))
            return EXIT_OK
        csv_path, man_path = run(cfg, args.out, args.threads)
    except (ConfigError, DomainError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (NumericalError, RobGlassoError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(csv_path)
    print(man_path)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Experiment protocol: label split, global fit, budgeted crawls, metrics.

Per trial the labels of a random fraction of nodes are revealed, every
crawler runs on the giant component of the labeled subgraph from a common
random start, and sample estimates are compared with the global estimate
fitted on that whole component. Crawls are advanced through the budget
checkpoints in order, never restarted.

Output files (CSV floats are written with ``repr``, so reruns with the same
seed give byte-identical CSVs):

``metrics.csv``   one row per (trial, reg, crawler, budget), plus GLOBAL rows
``ci.csv``        bootstrap intervals, one row per parameter
``summary.csv``   mean and standard error over trials
``coverage.csv``  pooled coverage and average width
``failed_trials.csv`` trials that raised
``manifest.json`` config, config hash, library versions
``timings.json``  wall-clock seconds per arm (kept out of the CSVs on purpose)
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import bootstrap_ci_nodes, bootstrap_ci_tours
from .features import FeatureSpec, default_spec, feature_matrix, resolve
from .graph import (MISSING, AttributedGraph, from_edges, giant_component, labeled_subgraph,
                    load_graph, parent_index, split_labels)
from .rlr import OptConfig, WeightMatrix, fit_weighted, predict
from .samplers import (METHODS, BFSCrawler, ForestFireCrawler, MetropolisHastingsCrawler,
                       RandomWalkCrawler, TourSampler, collect_seeds)
from .tours import SGDConfig, sgd_fit_naive, sgd_fit_tours

logger = logging.getLogger(__name__)


# -- synthetic graphs ---------------------------------------------------------

@dataclass
class AttrSchema:
    name: str
    n_levels: int = 3
    strength: float = 0.5  # probability the value is tied to the label


def generate_synthetic(n: int = 2000, classes: int = 2, homophily: float = 0.8,
                       mean_degree: float = 10.0, attr_schema=None, rng_seed=None,
                       prior=None, degree_spread: float = 0.0,
                       class_degree=None) -> AttributedGraph:
    """Attributed degree-corrected stochastic block model.

    A pair ``(u, v)`` is linked with probability
    ``min(1, rho * theta_u * theta_v * M[y_u, y_v])`` where
    ``M = (1 - homophily) + homophily * classes * I``, the propensities
    ``theta`` are lognormal with log-sd ``degree_spread`` times a per-class
    factor ``class_degree``, and ``rho`` sets the expected mean degree. With
    ``homophily = 0`` within- and between-class pairs link at equal rates.
    Attribute ``a`` takes the level ``label mod n_levels`` with probability
    ``strength`` and a uniform level otherwise. The giant component is returned.
    """
    if n < 10:
        raise ValueError("n must be at least 10")
    if not 0 <= homophily <= 1:
        raise ValueError("homophily must be in [0, 1]")
    if not 0 < mean_degree < n - 1:
        raise ValueError(f"infeasible mean degree {mean_degree} for {n} nodes")
    if classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(rng_seed)
    prior = np.full(classes, 1.0 / classes) if prior is None else np.asarray(prior, float)
    if len(prior) != classes or np.any(prior < 0):
        raise ValueError("bad class prior")
    prior = prior / prior.sum()
    y = rng.choice(classes, size=n, p=prior)

    cd = np.ones(classes) if class_degree is None else np.asarray(class_degree, float)
    theta = np.exp(degree_spread * rng.standard_normal(n)) * cd[y]
    theta /= theta.mean()
    M = (1.0 - homophily) + homophily * classes * np.eye(classes)

    iu, ju = np.triu_indices(n, k=1)
    rate = theta[iu] * theta[ju] * M[y[iu], y[ju]]
    rho = mean_degree * n / (2.0 * rate.sum())
    p = np.minimum(1.0, rho * rate)
    hit = rng.random(len(p)) < p
    edges = np.stack([iu[hit], ju[hit]], axis=1)

    schema = [AttrSchema("a0"), AttrSchema("a1")] if attr_schema is None else [
        s if isinstance(s, AttrSchema) else AttrSchema(**s) for s in attr_schema]
    codes = np.zeros((n, len(schema)), dtype=np.int64)
    for a, s in enumerate(schema):
        tied = rng.random(n) < s.strength
        codes[:, a] = np.where(tied, y % s.n_levels, rng.integers(s.n_levels, size=n))
    g = from_edges(edges, n,
                   attr_names=[s.name for s in schema],
                   attr_levels=[tuple(f"v{k}" for k in range(s.n_levels)) for s in schema],
                   attr_codes=codes, labels=y,
                   class_names=tuple(f"c{h}" for h in range(classes)))
    return giant_component(g)


# -- metrics --------------------------------------------------------------------

def mae(sample_w, global_w) -> float:
    """Mean absolute difference over all ``H * d`` weights."""
    a = np.asarray(getattr(sample_w, "weights", sample_w), dtype=float)
    b = np.asarray(getattr(global_w, "weights", global_w), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def _prediction_inputs(g, spec, hidden_nodes, split, X):
    hidden = np.asarray(hidden_nodes, dtype=np.int64)
    hidden = hidden[g.labels[hidden] != MISSING]
    if X is None:
        X = feature_matrix(g, spec, hidden, label_visibility=split, neighbor_mask=split.mask)
    else:
        X = X[hidden]
    return X, g.labels[hidden]


def rmse_probs(g, w, spec, hidden_nodes, split, X=None) -> float:
    """RMSE between predicted class distributions and one-hot true labels.

    Hidden nodes are predicted from their own attributes and the labels and
    attributes of their observed neighbours.
    """
    X, y = _prediction_inputs(g, spec, hidden_nodes, split, X)
    if len(y) == 0:
        return math.nan
    P = predict(w, X)
    Y = np.zeros_like(P)
    Y[np.arange(len(y)), y] = 1.0
    return float(np.sqrt(np.mean((P - Y) ** 2)))


def accuracy(g, w, spec, hidden_nodes, split, X=None) -> float:
    """Arg-max accuracy; ties go to the smallest class index."""
    X, y = _prediction_inputs(g, spec, hidden_nodes, split, X)
    if len(y) == 0:
        return math.nan
    return float(np.mean(np.argmax(predict(w, X), axis=1) == y))


# -- configuration --------------------------------------------------------------

DEFAULT_BUDGETS = (0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.30)
# homophilous, with degree heterogeneity that differs between the classes
DEFAULT_SYNTHETIC = {"n": 2000, "classes": 2, "homophily": 0.8, "mean_degree": 10.0,
                     "degree_spread": 0.75, "class_degree": [1.0, 2.0]}


@dataclass
class ExperimentConfig:
    graph: dict = field(default_factory=lambda: {"synthetic": dict(DEFAULT_SYNTHETIC)})
    feature_spec: dict | None = None
    crawlers: tuple = METHODS
    ff_p: float = 0.7
    ts_seed_fraction: float = 0.03
    ts_walk_len: int | None = None
    budgets: tuple = DEFAULT_BUDGETS
    label_fraction: float = 0.5
    regs: tuple = ("l2",)
    lam: float = 1e-3
    sgd: dict = field(default_factory=lambda: {"solver": "batch"})
    bootstrap_B: int = 0
    bootstrap_alpha: float = 0.05
    bootstrap_budgets: tuple = (0.15,)
    trials: int = 10
    seed: int | None = None
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        self.crawlers = tuple(self.crawlers)
        self.budgets = tuple(sorted(float(b) for b in self.budgets))
        self.regs = tuple(self.regs)
        self.bootstrap_budgets = tuple(float(b) for b in self.bootstrap_budgets)
        for c in self.crawlers:
            if c not in METHODS:
                raise ValueError(f"unknown crawler {c!r}")
        if not self.budgets or any(not 0 < b <= 1 for b in self.budgets):
            raise ValueError("budget fractions must lie in (0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def sgd_config(self) -> SGDConfig:
        d = dict(self.sgd)
        opt = OptConfig(**d.pop("opt", {}))
        return SGDConfig(opt=opt, **d)


def build_graph(cfg: ExperimentConfig) -> AttributedGraph:
    src = cfg.graph
    if "synthetic" in src:
        params = dict(src["synthetic"])
        params.setdefault("rng_seed", cfg.seed)
        g = generate_synthetic(**params)
    else:
        g = load_graph(src["edges"], src["attrs"], src["label_attr"])
    labeled = np.flatnonzero(g.labels != MISSING)
    if len(labeled) < g.n_nodes:
        g = g.subgraph(labeled)
    return giant_component(g)


def feature_spec_for(cfg: ExperimentConfig, g) -> FeatureSpec:
    if cfg.feature_spec is None:
        return default_spec(g)
    return FeatureSpec.from_json(json.dumps(cfg.feature_spec))


# -- one trial --------------------------------------------------------------------

def _stream(seed, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence([0 if seed is None else int(seed), *key])


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class TrialContext:
    g: AttributedGraph
    split: object
    gl: AttributedGraph
    X_lab: np.ndarray
    X_pred: np.ndarray  # graph-sized; rows of hidden nodes filled
    hidden: np.ndarray
    spec: FeatureSpec
    layout: object
    start: int
    global_w: dict


def prepare_trial(cfg: ExperimentConfig, g: AttributedGraph, spec: FeatureSpec, trial: int,
                  opt: OptConfig | None = None) -> TrialContext:
    split = split_labels(g, cfg.label_fraction, _seed_int(_stream(cfg.seed, trial, 0)))
    gl = labeled_subgraph(g, split)
    pi = parent_index(g, gl)
    X_lab = feature_matrix(g, spec, pi, label_visibility=split, neighbor_mask=split.mask)
    hidden = split.hidden
    X_pred = np.zeros((g.n_nodes, X_lab.shape[1]))
    X_pred[hidden] = feature_matrix(g, spec, hidden, label_visibility=split, neighbor_mask=split.mask)
    layout = resolve(spec, g)
    glob = {}
    for reg in cfg.regs:
        glob[reg] = fit_weighted(X_lab, gl.labels, g.n_classes, np.ones(gl.n_nodes), reg, cfg.lam,
                                 layout, opt, names=layout.names, class_names=g.class_names)
    start = int(np.random.default_rng(_stream(cfg.seed, trial, 1)).integers(gl.n_nodes))
    return TrialContext(g, split, gl, X_lab, X_pred, hidden, spec, layout, start, glob)


def make_crawler(method: str, ctx: TrialContext, cfg: ExperimentConfig, trial: int):
    seed = _seed_int(_stream(cfg.seed, trial, 2, METHODS.index(method)))
    gl = ctx.gl
    if method == "BFS":
        return BFSCrawler(gl, ctx.start)
    if method == "FF":
        return ForestFireCrawler(gl, ctx.start, p_f=cfg.ff_p, rng_seed=seed)
    if method == "RW":
        return RandomWalkCrawler(gl, ctx.start, rng_seed=seed)
    if method == "MH":
        return MetropolisHastingsCrawler(gl, ctx.start, rng_seed=seed)
    target = max(1, math.ceil(cfg.ts_seed_fraction * gl.n_nodes))
    seeds = collect_seeds(gl, ctx.start, cfg.ts_walk_len, target, rng_seed=seed)
    return TourSampler(gl, seeds, rng_seed=seed + 1)


def fit_sample(method, crawler, ctx, cfg, reg, sgd_cfg):
    """Sample estimate from the crawl's current state; ``None`` if unusable."""
    gl, spec = ctx.gl, ctx.spec
    if method == "TS":
        tours = crawler.collection()
        if tours.m == 0:
            return None, tours
        w, _ = sgd_fit_tours(tours, gl, spec, reg, cfg.lam, sgd_cfg, X=ctx.X_lab)
        return w, tours
    sample = crawler.sample()
    w, _ = sgd_fit_naive(sample, gl, spec, reg, cfg.lam, sgd_cfg, X=ctx.X_lab)
    return w, sample


def run_trial(cfg: ExperimentConfig, g: AttributedGraph, spec: FeatureSpec, trial: int):
    """All rows produced by one trial: ``(metrics, ci, timings)``."""
    sgd_cfg = cfg.sgd_config()
    ctx = prepare_trial(cfg, g, spec, trial, sgd_cfg.opt)
    metrics, ci_rows, timings = [], [], []
    for reg in cfg.regs:
        gw = ctx.global_w[reg]
        metrics.append(dict(trial=trial, reg=reg, crawler="GLOBAL", budget_fraction=1.0,
                            budget=ctx.gl.n_nodes, spent=ctx.gl.n_nodes, n_tours=0, mae=0.0,
                            rmse=rmse_probs(g, gw, spec, ctx.hidden, ctx.split, X=ctx.X_pred),
                            accuracy=accuracy(g, gw, spec, ctx.hidden, ctx.split, X=ctx.X_pred),
                            status="ok"))
    for method in cfg.crawlers:
        crawler = make_crawler(method, ctx, cfg, trial)
        for frac in cfg.budgets:
            budget = max(1, math.ceil(frac * ctx.gl.n_nodes - 1e-9))
            t0 = time.perf_counter()
            crawler.advance(budget)
            for reg in cfg.regs:
                row = dict(trial=trial, reg=reg, crawler=method, budget_fraction=frac,
                           budget=budget, spent=len(crawler.visited), n_tours=0,
                           mae=math.nan, rmse=math.nan, accuracy=math.nan, status="ok")
                try:
                    w, sample = fit_sample(method, crawler, ctx, cfg, reg, sgd_cfg)
                    if method == "TS":
                        row["n_tours"] = sample.m
                    if w is None:
                        row["status"] = "no_tours"
                    else:
                        gw = ctx.global_w[reg]
                        row["mae"] = mae(w, gw)
                        row["rmse"] = rmse_probs(g, w, spec, ctx.hidden, ctx.split, X=ctx.X_pred)
                        row["accuracy"] = accuracy(g, w, spec, ctx.hidden, ctx.split, X=ctx.X_pred)
                        if cfg.bootstrap_B and any(abs(frac - b) < 1e-12 for b in cfg.bootstrap_budgets):
                            ci_rows.extend(_bootstrap_rows(method, sample, w, gw, ctx, cfg, reg,
                                                           sgd_cfg, trial, frac))
                except Exception as exc:  # a failed arm must not sink the trial
                    logger.warning("trial %d %s %s budget %.3f failed: %s", trial, method, reg, frac, exc)
                    row["status"] = f"failed:{type(exc).__name__}"
                metrics.append(row)
            timings.append(dict(trial=trial, crawler=method, budget_fraction=frac,
                                seconds=time.perf_counter() - t0))
    return metrics, ci_rows, timings


def _bootstrap_rows(method, sample, w, gw, ctx, cfg, reg, sgd_cfg, trial, frac):
    seed = _seed_int(_stream(cfg.seed, trial, 3, METHODS.index(method), cfg.regs.index(reg)))
    kw = dict(sgd_config=sgd_cfg, B=cfg.bootstrap_B, alpha=cfg.bootstrap_alpha, rng_seed=seed,
              X=ctx.X_lab, point=w)
    if method == "TS":
        results = bootstrap_ci_tours(sample, ctx.gl, ctx.spec, reg, cfg.lam, **kw)
    else:
        results = bootstrap_ci_nodes(sample, ctx.gl, ctx.spec, reg, cfg.lam, **kw)
    rows = []
    for r in results:
        h, j = r.parameter_id
        gv = float(gw.weights[h, j])
        rows.append(dict(trial=trial, reg=reg, crawler=method, budget_fraction=frac,
                         cls=ctx.g.class_names[h], feature=ctx.layout.names[j],
                         estimate=r.estimate, lower=r.lower, upper=r.upper, width=r.width,
                         global_value=gv, covered=int(r.lower <= gv <= r.upper)))
    return rows


# -- whole experiment -------------------------------------------------------------

METRIC_FIELDS = ["trial", "reg", "crawler", "budget_fraction", "budget", "spent", "n_tours",
                 "mae", "rmse", "accuracy", "status"]
CI_FIELDS = ["trial", "reg", "crawler", "budget_fraction", "cls", "feature", "estimate", "lower",
             "upper", "width", "global_value", "covered"]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_rows(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in fieldnames})


def _run_trial_job(args):
    cfg, g, spec, trial = args
    try:
        return trial, run_trial(cfg, g, spec, trial), None
    except Exception as exc:
        logger.exception("trial %d failed", trial)
        return trial, None, f"{type(exc).__name__}: {exc}"


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run every trial and write the result files; returns the output directory."""
    if cfg.seed is None:
        raise ValueError("experiment requires an explicit seed")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = build_graph(cfg)
    spec = feature_spec_for(cfg, g)
    jobs = [(cfg, g, spec, t) for t in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(_run_trial_job, jobs))
    else:
        results = [_run_trial_job(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    metrics, ci_rows, timings, failed = [], [], [], []
    for trial, res, err in results:
        if res is None:
            failed.append(dict(trial=trial, error=err))
            continue
        m, c, t = res
        metrics += m
        ci_rows += c
        timings += t
    write_rows(out / "metrics.csv", METRIC_FIELDS, metrics)
    write_rows(out / "ci.csv", CI_FIELDS, ci_rows)
    write_rows(out / "failed_trials.csv", ["trial", "error"], failed)
    write_rows(out / "summary.csv", SUMMARY_FIELDS, summarize(metrics, cfg.trials))
    write_rows(out / "coverage.csv", COVERAGE_FIELDS, summarize_coverage(ci_rows))
    manifest = dict(config=cfg.to_dict(), config_hash=cfg.config_hash(),
                    versions=_versions(), graph=dict(n_nodes=g.n_nodes, n_edges=g.n_edges,
                                                     n_classes=g.n_classes),
                    feature_names=list(resolve(spec, g).names))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "timings.json").write_text(json.dumps(timings, indent=1) + "\n")
    return out


def _versions():
    import numpy
    import scipy
    return {"crawlrlr": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__}


SUMMARY_FIELDS = ["reg", "crawler", "budget_fraction", "n_trials", "n_failed", "mae_mean", "mae_se",
                  "rmse_mean", "rmse_se", "accuracy_mean", "accuracy_se"]
COVERAGE_FIELDS = ["reg", "crawler", "budget_fraction", "n_trials", "coverage", "avg_width"]


def _mean_se(vals):
    vals = np.asarray([v for v in vals if not math.isnan(v)], dtype=float)
    if len(vals) == 0:
        return math.nan, math.nan
    se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(np.mean(vals)), se


def _key(r):
    return (r["reg"], r["crawler"], float(r["budget_fraction"]))


def _order(keys):
    rank = {m: i for i, m in enumerate(("GLOBAL",) + METHODS)}
    return sorted(keys, key=lambda k: (k[0], rank.get(k[1], 99), k[2]))


def summarize(metric_rows, n_trials=None):
    groups = {}
    for r in metric_rows:
        groups.setdefault(_key(r), []).append(r)
    out = []
    for k in _order(groups):
        rows = groups[k]
        ok = [r for r in rows if r["status"] == "ok"]
        row = dict(reg=k[0], crawler=k[1], budget_fraction=k[2], n_trials=len(rows),
                   n_failed=len(rows) - len(ok))
        for m in ("mae", "rmse", "accuracy"):
            row[f"{m}_mean"], row[f"{m}_se"] = _mean_se([float(r[m]) for r in ok])
        out.append(row)
    return out


def summarize_coverage(ci_rows):
    groups = {}
    for r in ci_rows:
        groups.setdefault(_key(r), []).append(r)
    out = []
    for k in _order(groups):
        rows = groups[k]
        out.append(dict(reg=k[0], crawler=k[1], budget_fraction=k[2],
                        n_trials=len({int(r["trial"]) for r in rows}),
                        coverage=float(np.mean([int(r["covered"]) for r in rows])),
                        avg_width=float(np.mean([float(r["width"]) for r in rows]))))
    return out


# -- reporting --------------------------------------------------------------------

def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report(result_dirs, out_dir) -> Path:
    """Merge result directories into summary tables and gnuplot data files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics, ci_rows = [], []
    for d in result_dirs:
        d = Path(d)
        metrics += _read_csv(d / "metrics.csv")
        if (d / "ci.csv").exists():
            ci_rows += _read_csv(d / "ci.csv")
    summary = summarize(metrics)
    write_rows(out / "summary.csv", SUMMARY_FIELDS, summary)
    cov = summarize_coverage(ci_rows)
    write_rows(out / "coverage.csv", COVERAGE_FIELDS, cov)

    regs = sorted({r["reg"] for r in summary})
    crawlers = [c for c in METHODS if any(r["crawler"] == c for r in summary)]
    for reg in regs:
        for metric in ("mae", "rmse", "accuracy"):
            budgets = sorted({r["budget_fraction"] for r in summary
                              if r["reg"] == reg and r["crawler"] != "GLOBAL"})
            lookup = {(r["crawler"], r["budget_fraction"]): r for r in summary if r["reg"] == reg}
            glob = lookup.get(("GLOBAL", 1.0))
            with open(out / f"{metric}_{reg}.dat", "w") as fh:
                cols = " ".join(f"{c}_mean {c}_se" for c in crawlers)
                fh.write(f"# budget_fraction {cols} GLOBAL_mean\n")
                for b in budgets:
                    vals = []
                    for c in crawlers:
                        r = lookup.get((c, b))
                        vals += [r[f"{metric}_mean"], r[f"{metric}_se"]] if r else [math.nan, math.nan]
                    gv = glob[f"{metric}_mean"] if glob else math.nan
                    fh.write(" ".join(repr(float(x)) for x in [b, *vals, gv]) + "\n")

    # coverage in (coverage, width) pairs per crawler, one row per (reg, budget)
    pairs = {}
    for r in cov:
        pairs.setdefault((r["reg"], r["budget_fraction"]), {})[r["crawler"]] = r
    with open(out / "coverage_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["reg", "budget_fraction", *crawlers])
        for (reg, b), per in sorted(pairs.items()):
            w.writerow([reg, repr(b), *(
                f"({per[c]['coverage']:.4f}, {per[c]['avg_width']:.4f})" if c in per else ""
                for c in crawlers)])
    return out

"""Command line entry point.

Every subcommand accepts ``--config FILE``, a JSON object whose keys are the
subcommand's option names (``mean_degree`` for ``--mean-degree``); flags
given on the command line win. ``experiment`` instead reads a full
experiment configuration and insists on ``--seed``.

Graphs are read from an edge file plus an attribute CSV. Crawls, fits and
intervals use the giant component of the labeled nodes.
"""

from __future__ import annotations

import json
import logging
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .calibration import bootstrap_ci_nodes, bootstrap_ci_tours, ci_table_csv
from .features import FeatureSpec, default_spec, resolve
from .graph import MISSING, giant_component, load_graph, write_graph
from .harness import AttrSchema, ExperimentConfig, generate_synthetic, report, run_experiment
from .rlr import REGS, OptConfig, fit_global
from .samplers import (METHODS, BFSCrawler, CrawlBudget, ForestFireCrawler,
                       MetropolisHastingsCrawler, RandomWalkCrawler, TourSampler, collect_seeds,
                       read_crawl_sample, read_tours, write_crawl_sample, write_tours)
from .tours import SGDConfig, sgd_fit_naive, sgd_fit_tours


def _load_config(ctx, param, value):
    if value:
        with open(value) as fh:
            conf = json.load(fh)
        if not isinstance(conf, dict):
            raise click.BadParameter("config must be a JSON object", param=param)
        known = {p.name for p in ctx.command.params}
        unknown = set(conf) - known
        if unknown:
            raise click.BadParameter(f"unknown keys {sorted(unknown)}", param=param)
        ctx.default_map = {**(ctx.default_map or {}), **conf}
    return value


config_option = click.option("--config", type=click.Path(exists=True, dir_okay=False),
                             callback=_load_config, is_eager=True, expose_value=False,
                             help="JSON file of option values.")


def graph_options(f):
    f = click.option("--label-attr", default="label", show_default=True,
                     help="Attribute column holding the class label.")(f)
    f = click.option("--attrs", "attrs_path", required=True, type=click.Path(exists=True),
                     help="Attribute CSV.")(f)
    f = click.option("--edges", "edges_path", required=True, type=click.Path(exists=True),
                     help="Edge list file.")(f)
    return f


def fit_options(f):
    for opt in reversed([
        click.option("--spec", "spec_path", type=click.Path(exists=True),
                     help="Feature spec JSON (default: every attribute and class)."),
        click.option("--reg", type=click.Choice(REGS), default="l2", show_default=True),
        click.option("--lam", type=float, default=1e-3, show_default=True),
        click.option("--solver", type=click.Choice(["sgd", "batch"]), default="sgd",
                     show_default=True),
        click.option("--eta0", type=float, default=SGDConfig.eta0, show_default=True),
        click.option("--tau", type=float, default=SGDConfig.tau, show_default=True),
        click.option("--batch-size", type=int, default=SGDConfig.batch_size, show_default=True,
                     help="Tours (or nodes) per step; 0 uses all of them."),
        click.option("--steps", type=int, default=SGDConfig.steps, show_default=True),
        click.option("--tol", type=float, default=OptConfig.tol, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
    ]):
        f = opt(f)
    return f


def _graph(edges_path, attrs_path, label_attr):
    g = load_graph(edges_path, attrs_path, label_attr)
    labeled = np.flatnonzero(g.labels != MISSING)
    if len(labeled) < g.n_nodes:
        g = g.subgraph(labeled)
    return giant_component(g)


def _spec(spec_path, g):
    if spec_path is None:
        return default_spec(g)
    return FeatureSpec.from_json(Path(spec_path).read_text())


def _sgd(solver, eta0, tau, batch_size, steps, tol, seed):
    return SGDConfig(eta0=eta0, tau=tau, batch_size=batch_size or None, steps=steps,
                     rng_seed=seed, solver=solver, opt=OptConfig(tol=tol))


def _read_sample(path, g):
    with open(path) as fh:
        head = fh.readline()
    if "tour-collection" in head:
        return read_tours(path, g)
    return read_crawl_sample(path, g)


def _write(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="Log progress to stderr.")
def main(verbose):
    """Relational logistic regression from budgeted network crawls."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@config_option
@click.option("--n", type=int, default=2000, show_default=True, help="Nodes before pruning.")
@click.option("--classes", type=int, default=2, show_default=True)
@click.option("--homophily", type=float, default=0.8, show_default=True)
@click.option("--mean-degree", type=float, default=10.0, show_default=True)
@click.option("--degree-spread", type=float, default=0.0, show_default=True,
              help="Log-sd of the degree propensities.")
@click.option("--class-degree", type=float, multiple=True,
              help="Per-class degree factor (repeat once per class).")
@click.option("--prior", type=float, multiple=True, help="Class prior (repeat once per class).")
@click.option("--attr-levels", type=int, multiple=True, default=(3, 3), show_default=True,
              help="Number of levels of each attribute (repeat per attribute).")
@click.option("--attr-strength", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--edges", "edges_out", required=True, type=click.Path(), help="Edge file to write.")
@click.option("--attrs", "attrs_out", required=True, type=click.Path(),
              help="Attribute CSV to write.")
@click.option("--label-attr", default="label", show_default=True)
def generate(n, classes, homophily, mean_degree, degree_spread, class_degree, prior, attr_levels,
             attr_strength, seed, edges_out, attrs_out, label_attr):
    """Write a synthetic attributed graph."""
    schema = [AttrSchema(f"a{i}", k, attr_strength) for i, k in enumerate(attr_levels)]
    g = generate_synthetic(n, classes, homophily, mean_degree, schema, seed,
                           prior=list(prior) or None, degree_spread=degree_spread,
                           class_degree=list(class_degree) or None)
    write_graph(g, edges_out, attrs_out, label_attr)
    click.echo(f"{g.n_nodes} nodes, {g.n_edges} edges", err=True)


@main.command()
@config_option
@graph_options
@click.option("--method", type=click.Choice(METHODS), required=True)
@click.option("--budget", type=float, required=True,
              help="Unique node queries; a value <= 1 is a fraction of the nodes.")
@click.option("--start", type=int, help="Original id of the start node (default: random).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--p-f", type=float, default=0.7, show_default=True, help="Forest fire burn probability.")
@click.option("--seed-fraction", type=float, default=0.01, show_default=True,
              help="Tour seed set size as a fraction of the nodes.")
@click.option("--walk-len", type=int, help="Length of the seed-collecting walk.")
@click.option("--tours", "max_tours", type=int, help="Stop after this many tours.")
@click.option("--out", required=True, type=click.Path())
def crawl(edges_path, attrs_path, label_attr, method, budget, start, seed, p_f, seed_fraction,
          walk_len, max_tours, out):
    """Crawl the labeled graph and save the sample (or tours)."""
    g = _graph(edges_path, attrs_path, label_attr)
    n_query = math.ceil(budget * g.n_nodes - 1e-9) if budget <= 1 else int(budget)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    s = g.index_of(start) if start is not None else int(rng.integers(g.n_nodes))
    sub = int(rng.integers(2**63 - 1))
    if method == "TS":
        target = max(1, math.ceil(seed_fraction * g.n_nodes))
        seeds = collect_seeds(g, s, walk_len, target, rng_seed=sub)
        sampler = TourSampler(g, seeds, rng_seed=sub + 1)
        sampler.advance(n_query, max_tours)
        tours = sampler.collection()
        write_tours(tours, out, g)
        click.echo(f"{tours.m} tours, {tours.spent} queries", err=True)
        return
    crawler = {"BFS": lambda: BFSCrawler(g, s),
               "FF": lambda: ForestFireCrawler(g, s, p_f=p_f, rng_seed=sub),
               "RW": lambda: RandomWalkCrawler(g, s, rng_seed=sub),
               "MH": lambda: MetropolisHastingsCrawler(g, s, rng_seed=sub)}[method]()
    sample = crawler.crawl(CrawlBudget(n_query))
    write_crawl_sample(sample, out, g)
    click.echo(f"{len(sample.visited)} nodes", err=True)


@main.command()
@config_option
@graph_options
@click.option("--sample", "sample_path", type=click.Path(exists=True),
              help="Crawl sample or tour file; omit for the global fit.")
@fit_options
@click.option("--trace", "trace_out", type=click.Path(), help="Write the SGD trace as CSV.")
@click.option("--trace-wall-time", is_flag=True,
              help="Add a seconds column to the trace (breaks byte-identical reruns).")
@click.option("--out", type=click.Path(), help="Weights CSV (default: stdout).")
def fit(edges_path, attrs_path, label_attr, sample_path, spec_path, reg, lam, solver, eta0, tau,
        batch_size, steps, tol, seed, trace_out, trace_wall_time, out):
    """Fit weights to a sample, or to the whole labeled graph."""
    g = _graph(edges_path, attrs_path, label_attr)
    spec = _spec(spec_path, g)
    cfg = _sgd(solver, eta0, tau, batch_size, steps, tol, seed)
    trace = []
    if sample_path is None:
        w = fit_global(g, spec, reg=reg, lam=lam, opt_config=cfg.opt)
    else:
        sample = _read_sample(sample_path, g)
        if hasattr(sample, "d_S"):
            w, trace = sgd_fit_tours(sample, g, spec, reg, lam, cfg)
        else:
            w, trace = sgd_fit_naive(sample, g, spec, reg, lam, cfg)
    if not w.converged and solver == "batch":
        click.echo(f"warning: solver stopped with residual {w.grad_norm:.3g}", err=True)
    _write(w.to_csv(), out)
    if trace_out:
        lines = ["step,objective,residual" + (",seconds" if trace_wall_time else "")]
        lines += [f"{s},{f!r},{r!r}" + (f",{t!r}" if trace_wall_time else "")
                  for s, f, r, t in trace]
        Path(trace_out).write_text("\n".join(lines) + "\n")


@main.command()
@config_option
@graph_options
@click.option("--sample", "sample_path", required=True, type=click.Path(exists=True),
              help="Crawl sample or tour file.")
@fit_options
@click.option("--B", "B", type=int, default=200, show_default=True, help="Bootstrap replicates.")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--out", type=click.Path(), help="Interval CSV (default: stdout).")
def ci(edges_path, attrs_path, label_attr, sample_path, spec_path, reg, lam, solver, eta0, tau,
       batch_size, steps, tol, seed, B, alpha, out):
    """Percentile bootstrap intervals for every weight."""
    g = _graph(edges_path, attrs_path, label_attr)
    spec = _spec(spec_path, g)
    cfg = _sgd(solver, eta0, tau, batch_size, steps, tol, seed)
    sample = _read_sample(sample_path, g)
    boot = bootstrap_ci_tours if hasattr(sample, "d_S") else bootstrap_ci_nodes
    results = boot(sample, g, spec, reg, lam, cfg, B=B, alpha=alpha, rng_seed=seed)
    _write(ci_table_csv(results, resolve(spec, g).names, g.class_names), out)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Experiment configuration JSON.")
@click.option("--seed", type=int, required=True, help="Master seed (required).")
@click.option("--output-dir", type=click.Path(), help="Overrides the configured directory.")
@click.option("--trials", type=int)
@click.option("--workers", type=int)
@click.option("--bootstrap-B", "bootstrap_B", type=int)
def experiment(config_path, seed, output_dir, trials, workers, bootstrap_B):
    """Run the full trial protocol and write result CSVs."""
    conf = {}
    if config_path:
        with open(config_path) as fh:
            conf = json.load(fh)
    overrides = dict(seed=seed, output_dir=output_dir, trials=trials, workers=workers,
                     bootstrap_B=bootstrap_B)
    conf.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = ExperimentConfig.from_dict(conf)
    except (TypeError, ValueError) as exc:
        raise click.UsageError(str(exc)) from None
    out = run_experiment(cfg)
    click.echo(str(out), err=True)


@main.command("report")
@config_option
@click.argument("result_dirs", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
def report_cmd(result_dirs, out_dir):
    """Merge result directories into tables and gnuplot data files."""
    report(result_dirs, out_dir)


if __name__ == "__main__":
    main()

"""
From a partial crawl to weights with confidence intervals
=========================================================

Fit the soft-max classifier on the whole graph, then again from 30% of it
with tours and with a plain random walk, and bootstrap the tour fit. On a
graph this small a tour crawl completes few tours, so the budget is
generous; at 15% only a handful finish.
"""

import numpy as np

from crawlrlr.calibration import bootstrap_ci_tours, coverage_eval
from crawlrlr.features import default_spec, feature_matrix, resolve
from crawlrlr.harness import generate_synthetic, mae
from crawlrlr.rlr import fit_global
from crawlrlr.samplers import CrawlBudget, RandomWalkCrawler, TourSampler, collect_seeds
from crawlrlr.tours import SGDConfig, sgd_fit_naive, sgd_fit_tours

g = generate_synthetic(1000, degree_spread=0.5, rng_seed=4)
spec = default_spec(g)
X = feature_matrix(g, spec)
names = resolve(spec, g).names

glob = fit_global(g, spec, X=X)
print("global weights (class c1 row):")
for n, w in zip(names, glob.weights[1]):
    print(f"  {n:14s} {w:8.3f}")

budget = int(0.30 * g.n_nodes)
cfg = SGDConfig(solver="batch")

seeds = collect_seeds(g, 0, target_size=20, rng_seed=5)
ts = TourSampler(g, seeds, rng_seed=6)
ts.advance(budget)
tours = ts.collection()
w_ts, _ = sgd_fit_tours(tours, g, spec, config=cfg, X=X)

rw = RandomWalkCrawler(g, 0, rng_seed=6).crawl(CrawlBudget(budget))
w_rw, _ = sgd_fit_naive(rw, g, spec, config=cfg, X=X)
print(f"\nMAE from {budget} queries: tours {mae(w_ts, glob):.3f} ({tours.m} tours), "
      f"random walk {mae(w_rw, glob):.3f}")

# tours are the resampling unit
res = bootstrap_ci_tours(tours, g, spec, sgd_config=cfg, B=100, X=X, point=w_ts)
print("\n95% intervals, class c1:")
for r in res:
    h, j = r.parameter_id
    if h == 1:
        inside = "yes" if r.lower <= glob.weights[h, j] <= r.upper else "no"
        print(f"  {names[j]:14s} [{r.lower:8.3f}, {r.upper:8.3f}]  covers global: {inside}")
print(f"pooled coverage in this one trial: {coverage_eval([(res, glob)]).pooled_coverage:.2f}")

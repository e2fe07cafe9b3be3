"""
Five crawlers under the same query budget
=========================================

Each crawler pays once per distinct node it queries. Random walks lean
towards high-degree nodes; the Metropolis-Hastings walk and tour
reweighting undo that lean in different ways.
"""

import numpy as np

from crawlrlr.harness import DEFAULT_SYNTHETIC, generate_synthetic
from crawlrlr.samplers import (BFSCrawler, CrawlBudget, ForestFireCrawler,
                               MetropolisHastingsCrawler, RandomWalkCrawler, TourSampler,
                               collect_seeds)
from crawlrlr.tours import tour_node_weights

g = generate_synthetic(**dict(DEFAULT_SYNTHETIC, rng_seed=0))
deg = g.degrees
budget = int(0.15 * g.n_nodes)
print(f"{g.n_nodes} nodes, mean degree {deg.mean():.2f}, budget {budget} queries\n")

start = 0
crawlers = {
    "BFS": BFSCrawler(g, start),
    "FF": ForestFireCrawler(g, start, p_f=0.7, rng_seed=1),
    "RW": RandomWalkCrawler(g, start, rng_seed=1),
    "MH": MetropolisHastingsCrawler(g, start, rng_seed=1),
}
for name, c in crawlers.items():
    s = c.crawl(CrawlBudget(budget))
    print(f"{name:4s} {len(s.visited):4d} nodes, mean degree {deg[s.visited].mean():6.2f}")

# tours spend part of the budget on the seed set, then walk
seeds = collect_seeds(g, start, target_size=int(0.03 * g.n_nodes), rng_seed=1)
ts = TourSampler(g, seeds, rng_seed=2)
ts.advance(budget)
tours = ts.collection()
nodes, c = tour_node_weights(tours)
print(f"TS   {tours.spent:4d} nodes, {tours.m} complete tours, "
      f"reweighted mean degree {np.average(deg[nodes], weights=c):6.2f}")

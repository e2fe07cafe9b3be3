"""Budgeted network crawlers.

Every crawler sees the graph only through neighbour lists of nodes it has
already reached. A node is charged to the budget the first time it is
queried; revisits (and MH self-loops) are free. Crawlers are resumable:
``advance`` continues the same crawl to a larger budget, which is how
budget checkpoints share one evolving crawl.

Tour sampling follows the regenerative random-walk scheme: the seed set is
contracted into a single super-node whose degree is the number of edges
leaving the set, each tour leaves it along a uniformly chosen outgoing edge
and ends on the first return to the set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .graph import AttributedGraph

METHODS = ("BFS", "FF", "RW", "MH", "TS")


class AbsorbingSeedSet(ValueError):
    """The seed set has no edge leaving it."""


class TourDataError(ValueError):
    """A tour collection violates its structural invariants."""


@dataclass
class CrawlBudget:
    max_unique_queries: int | None = None
    spent: int = 0

    def __post_init__(self):
        if self.max_unique_queries is not None and self.max_unique_queries < 1:
            raise ValueError("max_unique_queries must be positive")

    @property
    def exhausted(self) -> bool:
        return self.max_unique_queries is not None and self.spent >= self.max_unique_queries


@dataclass(frozen=True)
class CrawlSample:
    visited: np.ndarray
    method: str


@dataclass(frozen=True)
class TourCollection:
    """Seed set, its out-degree ``d_S`` and the sampled tours.

    Each tour is the full node sequence, both seed endpoints included.
    ``degrees`` maps every interior node to its degree in the crawled graph.
    """

    seeds: np.ndarray
    d_S: int
    tours: tuple
    degrees: dict = field(default_factory=dict)
    spent: int = 0

    @property
    def m(self) -> int:
        return len(self.tours)

    def resample(self, idx) -> "TourCollection":
        return TourCollection(self.seeds, self.d_S, tuple(self.tours[i] for i in idx),
                              self.degrees, self.spent)

    def validate(self, g: AttributedGraph | None = None) -> None:
        """Raise :class:`TourDataError` on any broken invariant."""
        in_s = set(self.seeds.tolist())
        for k, t in enumerate(self.tours):
            t = np.asarray(t)
            if len(t) < 3:
                raise TourDataError(f"tour {k} has length {len(t)} < 3")
            if t[0] not in in_s or t[-1] not in in_s:
                raise TourDataError(f"tour {k} does not start and end in the seed set")
            if any(v in in_s for v in t[1:-1].tolist()):
                raise TourDataError(f"tour {k} revisits the seed set before its end")
            for v in t[1:-1].tolist():
                if v not in self.degrees:
                    raise TourDataError(f"tour {k}: no degree recorded for node {v}")
            if g is not None:
                for a, b in zip(t[:-1].tolist(), t[1:].tolist()):
                    nb = g.neighbors(a)
                    i = np.searchsorted(nb, b)
                    if i >= len(nb) or nb[i] != b:
                        raise TourDataError(f"tour {k}: ({a}, {b}) is not an edge")
                for v in t[1:-1].tolist():
                    if self.degrees[v] != g.degree(v):
                        raise TourDataError(f"tour {k}: stale degree for node {v}")
        if g is not None and seed_out_degree(g, self.seeds) != self.d_S:
            raise TourDataError("d_S does not match the graph")


class _Uniforms:
    """Buffered U(0,1) draws; scalar Generator calls dominate walk cost otherwise."""

    def __init__(self, rng: np.random.Generator, block: int = 8192):
        self.rng, self.block = rng, block
        self.buf, self.pos = [], 0

    def __call__(self) -> float:
        if self.pos >= len(self.buf):
            self.buf, self.pos = self.rng.random(self.block).tolist(), 0
        u = self.buf[self.pos]
        self.pos += 1
        return u

    def index(self, n: int) -> int:
        return min(int(self() * n), n - 1)


class Crawler:
    """Base class: a generator proposes new nodes, ``advance`` grants them."""

    method = ""

    def __init__(self, g: AttributedGraph, seed: int, rng_seed=None):
        if not g.has_node(seed):
            raise ValueError(f"seed {seed!r} not in graph")
        self.g = g
        self.seed = int(seed)
        self.rng = np.random.default_rng(rng_seed)
        self.seen = np.zeros(g.n_nodes, dtype=bool)
        self.visited: list[int] = []
        self._proc = self._run()
        self._pending = None
        self._done = False

    def _run(self):
        raise NotImplementedError

    def _grant(self, v: int) -> None:
        self.seen[v] = True
        self.visited.append(v)

    def advance(self, max_unique: int | None) -> None:
        while not self._done and (max_unique is None or len(self.visited) < max_unique):
            if self._pending is None:
                try:
                    self._pending = next(self._proc)
                except StopIteration:
                    self._done = True
                    break
            self._grant(self._pending)
            self._pending = None

    def crawl(self, budget: CrawlBudget) -> CrawlSample:
        self.advance(budget.max_unique_queries)
        budget.spent = len(self.visited)
        return self.sample()

    def sample(self) -> CrawlSample:
        return CrawlSample(np.array(self.visited, dtype=np.int64), self.method)


def _component_size(g: AttributedGraph, v: int) -> int:
    _, comp = connected_components(g.adjacency(), directed=False)
    return int(np.sum(comp == comp[v]))


class BFSCrawler(Crawler):
    method = "BFS"

    def _run(self):
        g = self.g
        queue = [self.seed]
        enqueued = np.zeros(g.n_nodes, dtype=bool)
        enqueued[self.seed] = True
        head = 0
        while head < len(queue):
            u = queue[head]
            head += 1
            yield u
            for w in g.neighbors(u).tolist():
                if not enqueued[w]:
                    enqueued[w] = True
                    queue.append(w)


class ForestFireCrawler(Crawler):
    """Forest fire with geometric burn counts of mean ``p_f / (1 - p_f)``.

    When the fire dies out, it restarts from a uniformly chosen burned node
    that still has unburned neighbours and burns at least one of them.
    """

    method = "FF"

    def __init__(self, g, seed, p_f: float = 0.7, rng_seed=None):
        if not 0 < p_f < 1:
            raise ValueError(f"p_f must be in (0, 1), got {p_f}")
        self.p_f = p_f
        super().__init__(g, seed, rng_seed)

    def _burn(self, u, at_least):
        nb = self.g.neighbors(u)
        free = nb[~self.seen[nb]]
        if len(free) == 0:
            return []
        n = int(self.rng.geometric(1.0 - self.p_f)) - 1
        n = min(max(n, at_least), len(free))
        if n == 0:
            return []
        return self.rng.choice(free, size=n, replace=False).tolist()

    def _run(self):
        yield self.seed
        queue = [self.seed]
        while True:
            while queue:
                u = queue.pop(0)
                for w in self._burn(u, 0):
                    if not self.seen[w]:
                        yield w
                        queue.append(w)
            burned = np.array(self.visited, dtype=np.int64)
            live = [u for u in burned.tolist() if not self.seen[self.g.neighbors(u)].all()]
            if not live:
                return
            u = live[int(self.rng.integers(len(live)))]
            for w in self._burn(u, 1):
                if not self.seen[w]:
                    yield w
                    queue.append(w)


class RandomWalkCrawler(Crawler):
    method = "RW"

    def _run(self):
        g, uni = self.g, _Uniforms(self.rng)
        target = _component_size(g, self.seed)
        indptr, indices, seen = g.indptr, g.indices, self.seen
        u = self.seed
        yield u
        while len(self.visited) < target:
            lo, hi = indptr[u], indptr[u + 1]
            u = int(indices[lo + uni.index(hi - lo)])
            if not seen[u]:
                yield u


class MetropolisHastingsCrawler(Crawler):
    """MH walk targeting the uniform distribution.

    Reading a proposed neighbour's degree is treated as free; only accepted
    moves to new nodes are charged.
    """

    method = "MH"

    def _run(self):
        g, uni = self.g, _Uniforms(self.rng)
        target = _component_size(g, self.seed)
        indptr, indices, seen = g.indptr, g.indices, self.seen
        u = self.seed
        yield u
        while len(self.visited) < target:
            lo, hi = indptr[u], indptr[u + 1]
            v = int(indices[lo + uni.index(hi - lo)])
            dv = indptr[v + 1] - indptr[v]
            if uni() * dv < hi - lo:
                u = v
                if not seen[u]:
                    yield u


def crawl_bfs(g, seed, budget: CrawlBudget) -> CrawlSample:
    return BFSCrawler(g, seed).crawl(budget)


def crawl_ff(g, seed, budget: CrawlBudget, p_f: float = 0.7, rng_seed=None) -> CrawlSample:
    return ForestFireCrawler(g, seed, p_f=p_f, rng_seed=rng_seed).crawl(budget)


def crawl_rw(g, seed, budget: CrawlBudget, rng_seed=None) -> CrawlSample:
    return RandomWalkCrawler(g, seed, rng_seed=rng_seed).crawl(budget)


def crawl_mh(g, seed, budget: CrawlBudget, rng_seed=None) -> CrawlSample:
    return MetropolisHastingsCrawler(g, seed, rng_seed=rng_seed).crawl(budget)


def mh_transition_matrix(g: AttributedGraph) -> np.ndarray:
    """Dense MH kernel ``min(1/d_u, 1/d_v)`` with the self-loop residual."""
    n = g.n_nodes
    deg = g.degrees.astype(float)
    P = np.zeros((n, n))
    for u in range(n):
        nb = g.neighbors(u)
        P[u, nb] = np.minimum(1.0 / deg[u], 1.0 / deg[nb])
        P[u, u] = 1.0 - P[u, nb].sum()
    return P


def mh_walk(g: AttributedGraph, start: int, n_steps: int, rng_seed=None) -> np.ndarray:
    """Trajectory of ``n_steps`` MH transitions (self-loops included)."""
    rng = np.random.default_rng(rng_seed)
    pick = rng.random(n_steps)
    accept = rng.random(n_steps)
    indptr, indices = g.indptr, g.indices
    out = np.empty(n_steps, dtype=np.int64)
    u = int(start)
    for t, (a, b) in enumerate(zip(pick.tolist(), accept.tolist())):
        du = indptr[u + 1] - indptr[u]
        v = int(indices[indptr[u] + min(int(a * du), du - 1)])
        dv = indptr[v + 1] - indptr[v]
        if b * dv < du:
            u = v
        out[t] = u
    return out


def collect_seeds(g: AttributedGraph, start: int, walk_len: int | None = None,
                  target_size: int | None = None, rng_seed=None) -> np.ndarray:
    """Seed set from a short random walk: its first ``target_size`` distinct nodes.

    Defaults: ``target_size = max(1, ceil(0.01 n))``, ``walk_len = 10 * target_size``.
    The walk is extended past ``walk_len`` if it has not met enough nodes.
    """
    if not g.has_node(start):
        raise ValueError(f"start {start!r} not in graph")
    if target_size is None:
        target_size = max(1, int(np.ceil(0.01 * g.n_nodes)))
    if target_size >= g.n_nodes:
        raise ValueError(f"target_size {target_size} must be < |V| = {g.n_nodes}")
    if target_size < 1:
        raise ValueError("target_size must be positive")
    if walk_len is None:
        walk_len = 10 * target_size
    if target_size > _component_size(g, start):
        raise ValueError("start's component is smaller than target_size")
    uni = _Uniforms(np.random.default_rng(rng_seed))
    order, seen = [start], {start}
    u, step = start, 0
    while step < walk_len or len(order) < target_size:
        nb = g.neighbors(u)
        u = int(nb[uni.index(len(nb))])
        if u not in seen:
            seen.add(u)
            order.append(u)
        step += 1
    return np.sort(np.array(order[:target_size], dtype=np.int64))


def seed_out_degree(g: AttributedGraph, seeds) -> int:
    """Edges leaving the seed set, intra-seed edges excluded."""
    in_s = np.zeros(g.n_nodes, dtype=bool)
    in_s[np.asarray(seeds, dtype=np.int64)] = True
    return int(sum(int((~in_s[g.neighbors(s)]).sum()) for s in np.flatnonzero(in_s)))


class TourSampler(Crawler):
    """Resumable random-walk tour sampler over a fixed seed set.

    All seeds are queried up front. Only completed tours are reported; a
    tour cut short by the budget is continued if the crawl is advanced.
    """

    method = "TS"

    def __init__(self, g: AttributedGraph, seeds, rng_seed=None):
        seeds = np.unique(np.asarray(seeds, dtype=np.int64))
        if len(seeds) == 0:
            raise ValueError("empty seed set")
        for s in seeds.tolist():
            if not g.has_node(s):
                raise ValueError(f"seed {s} not in graph")
        self.seeds = seeds
        self.in_s = np.zeros(g.n_nodes, dtype=bool)
        self.in_s[seeds] = True
        src, dst = [], []
        for s in seeds.tolist():
            nb = g.neighbors(s)
            out = nb[~self.in_s[nb]]
            src.extend([s] * len(out))
            dst.extend(out.tolist())
        if not dst:
            raise AbsorbingSeedSet("absorbing seed set: no edges leave S")
        self.out_src, self.out_dst = src, dst
        self.d_S = len(dst)
        self.tours: list[np.ndarray] = []
        super().__init__(g, int(seeds[0]), rng_seed)
        self.uni = _Uniforms(self.rng)
        _, comp = connected_components(g.adjacency(), directed=False)
        self._reachable = int(np.isin(comp, comp[seeds]).sum())

    def _run(self):
        for s in self.seeds.tolist():
            yield ("visit", s)
        indptr, indices, in_s, seen = self.g.indptr, self.g.indices, self.in_s, self.seen
        uni = self.uni
        while True:
            e = uni.index(self.d_S)
            tour = [self.out_src[e], self.out_dst[e]]
            u = tour[1]
            if not seen[u]:
                yield ("visit", u)
            while True:
                lo, hi = indptr[u], indptr[u + 1]
                u = int(indices[lo + uni.index(hi - lo)])
                tour.append(u)
                if in_s[u]:
                    break
                if not seen[u]:
                    yield ("visit", u)
            self.tours.append(np.array(tour, dtype=np.int64))
            yield ("tour", None)

    def advance(self, max_unique: int | None, max_tours: int | None = None) -> None:
        """Walk until the next new node would exceed ``max_unique`` or
        ``max_tours`` tours are complete.

        Without a tour limit, a crawl that has seen every reachable node
        stops at the end of the current tour, since further tours cost
        nothing.
        """
        if max_unique is None and max_tours is None:
            raise ValueError("tour sampling needs a budget or a tour count")
        while max_tours is None or len(self.tours) < max_tours:
            if self._pending is None:
                self._pending = next(self._proc)
            kind, v = self._pending
            if kind == "visit":
                if max_unique is not None and len(self.visited) >= max_unique:
                    break
                self._grant(v)
            self._pending = None
            if kind == "tour" and max_tours is None and len(self.visited) >= self._reachable:
                break

    def collection(self, max_tours: int | None = None) -> TourCollection:
        tours = self.tours if max_tours is None else self.tours[:max_tours]
        deg = self.g.degrees
        interior = {v for t in tours for v in t[1:-1].tolist()}
        return TourCollection(
            seeds=self.seeds.copy(),
            d_S=self.d_S,
            tours=tuple(tours),
            degrees={v: int(deg[v]) for v in sorted(interior)},
            spent=len(self.visited),
        )


def sample_tours(g: AttributedGraph, seeds, m: int | None, budget: CrawlBudget | None = None,
                 rng_seed=None) -> TourCollection:
    """Sample up to ``m`` tours, stopping early when the budget runs out."""
    if m is not None and m < 1:
        raise ValueError("m must be positive")
    ts = TourSampler(g, seeds, rng_seed)
    limit = budget.max_unique_queries if budget is not None else None
    ts.advance(limit, m)
    if budget is not None:
        budget.spent = len(ts.visited)
    return ts.collection(m)


# -- line-oriented serialization ------------------------------------------------

def write_crawl_sample(sample: CrawlSample, path, g: AttributedGraph) -> None:
    ids = g.node_ids[sample.visited]
    with open(path, "w") as fh:
        fh.write("# crawlrlr crawl-sample v1\n")
        fh.write(f"method {sample.method}\n")
        fh.write("visited " + " ".join(map(str, ids.tolist())) + "\n")


def read_crawl_sample(path, g: AttributedGraph) -> CrawlSample:
    method, visited = None, None
    for key, rest in _records(path):
        if key == "method":
            method = rest.strip()
        elif key == "visited":
            visited = np.array([g.index_of(int(x)) for x in rest.split()], dtype=np.int64)
    if method not in METHODS or method == "TS" or visited is None:
        raise ValueError(f"{path}: not a crawl sample")
    return CrawlSample(visited, method)


def write_tours(tours: TourCollection, path, g: AttributedGraph) -> None:
    ids = g.node_ids
    with open(path, "w") as fh:
        fh.write("# crawlrlr tour-collection v1\n")
        fh.write("seeds " + " ".join(str(ids[s]) for s in tours.seeds.tolist()) + "\n")
        fh.write(f"d_S {tours.d_S}\n")
        fh.write(f"spent {tours.spent}\n")
        for v, d in sorted(tours.degrees.items()):
            fh.write(f"degree {ids[v]} {d}\n")
        for t in tours.tours:
            fh.write("tour " + " ".join(str(ids[v]) for v in t.tolist()) + "\n")


def read_tours(path, g: AttributedGraph) -> TourCollection:
    seeds, d_S, spent, degrees, tours = None, None, 0, {}, []
    for key, rest in _records(path):
        vals = rest.split()
        if key == "seeds":
            seeds = np.array(sorted(g.index_of(int(x)) for x in vals), dtype=np.int64)
        elif key == "d_S":
            d_S = int(vals[0])
        elif key == "spent":
            spent = int(vals[0])
        elif key == "degree":
            degrees[g.index_of(int(vals[0]))] = int(vals[1])
        elif key == "tour":
            tours.append(np.array([g.index_of(int(x)) for x in vals], dtype=np.int64))
    if seeds is None or d_S is None:
        raise ValueError(f"{path}: not a tour collection")
    tc = TourCollection(seeds, d_S, tuple(tours), degrees, spent)
    tc.validate()
    return tc


def _records(path):
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            key, _, rest = s.partition(" ")
            yield key, rest

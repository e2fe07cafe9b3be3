"""Unbiased full-graph log-likelihood from random-walk tours, and SGD on it.

For tours ``T_1..T_m`` leaving a seed set ``S`` of out-degree ``d_S``:

    L_hat = d_S / m * sum_k sum_{interior v in T_k} loglik(v) / d_v
            + sum_{v in S} loglik(v)

and the same expression with per-node gradients in place of ``loglik``.
Collapsing the sums gives node weights ``c_v`` (visit count times
``d_S / (m d_v)`` inside the tours, 1 on seeds), so the estimate is an
ordinary weighted objective; see :func:`tour_node_weights`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureSpec, feature_matrix, resolve
from .graph import MISSING, AttributedGraph
from .rlr import (OptConfig, Problem, WeightMatrix, _as_array, full_loglik, loglik_grad_rows,
                  loglik_terms, solve)
from .samplers import CrawlSample, TourCollection, TourDataError


class SGDDivergence(RuntimeError):
    def __init__(self, step, rate):
        super().__init__(f"SGD diverged at step {step} (rate {rate:.3g})")
        self.step, self.rate = step, rate


@dataclass
class TourEstimate:
    per_tour_values: np.ndarray  # (m,) or (m, d)
    seed_term: np.ndarray | float
    d_S: int
    combined: np.ndarray | float


@dataclass
class SGDConfig:
    """SGD settings. ``batch_size=None`` uses every tour (or node) each step.

    ``solver="batch"`` skips SGD and minimizes the same estimated objective
    with the deterministic solver.
    """

    eta0: float = 5.0
    tau: float = 500.0
    batch_size: int | None = 32
    steps: int = 2000
    rng_seed: int | None = 0
    solver: str = "sgd"
    trace_every: int = 50
    opt: OptConfig = field(default_factory=OptConfig)

    def rate(self, t: int) -> float:
        return self.eta0 / (1.0 + t / self.tau)


def _check_labeled(g, nodes):
    if np.any(g.labels[nodes] == MISSING):
        raise TourDataError("tour visits an unlabeled node")


def _flat(tours: TourCollection):
    """Interior nodes of all tours, their tour index and inverse degrees."""
    if tours.m == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    interiors = [np.asarray(t)[1:-1] for t in tours.tours]
    if any(len(t) < 3 for t in tours.tours):
        raise TourDataError("tour shorter than 3 nodes")
    nodes = np.concatenate(interiors)
    owner = np.repeat(np.arange(tours.m), [len(i) for i in interiors])
    try:
        inv = 1.0 / np.array([tours.degrees[v] for v in nodes.tolist()], dtype=float)
    except KeyError as e:
        raise TourDataError(f"no degree recorded for interior node {e.args[0]}") from None
    return nodes, owner, inv


def _features(g, spec, nodes, X, feature_kw):
    return feature_matrix(g, spec, nodes, **feature_kw) if X is None else X[nodes]


def _is_full_seed(tours, g):
    return tours.m == 0 and len(tours.seeds) == g.n_nodes


def estimate_loglik(tours: TourCollection, g: AttributedGraph, w, spec: FeatureSpec,
                    X=None, **feature_kw) -> TourEstimate:
    """Tour estimate of the log-likelihood summed over all nodes of ``g``."""
    W = _as_array(w)
    seeds = tours.seeds
    _check_labeled(g, seeds)
    seed_term = full_loglik(g, W, spec, seeds, X=X, **feature_kw)
    if tours.m == 0:
        if _is_full_seed(tours, g):
            return TourEstimate(np.zeros(0), seed_term, tours.d_S, seed_term)
        raise TourDataError("no tours and the seed set does not cover the graph")
    nodes, owner, inv = _flat(tours)
    _check_labeled(g, nodes)
    uniq, pos = np.unique(nodes, return_inverse=True)
    ll = loglik_terms(W, _features(g, spec, uniq, X, feature_kw), g.labels[uniq])
    per_tour = np.bincount(owner, weights=ll[pos] * inv, minlength=tours.m)
    combined = tours.d_S / tours.m * per_tour.sum() + seed_term
    return TourEstimate(per_tour, seed_term, tours.d_S, float(combined))


def estimate_gradient(tours: TourCollection, g: AttributedGraph, w, spec: FeatureSpec,
                      j: int | None = None, X=None, **feature_kw) -> TourEstimate:
    """Tour estimate of the gradient for class row ``j`` (all rows if ``None``)."""
    W = _as_array(w)
    H, d = W.shape
    seeds = tours.seeds
    _check_labeled(g, seeds)
    Xs = _features(g, spec, seeds, X, feature_kw)
    seed_G = loglik_grad_rows(W, Xs, g.labels[seeds]).T @ Xs
    if tours.m == 0:
        if not _is_full_seed(tours, g):
            raise TourDataError("no tours and the seed set does not cover the graph")
        per_tour = np.zeros((0, H, d))
    else:
        nodes, owner, inv = _flat(tours)
        _check_labeled(g, nodes)
        uniq, pos = np.unique(nodes, return_inverse=True)
        Xu = _features(g, spec, uniq, X, feature_kw)
        R = loglik_grad_rows(W, Xu, g.labels[uniq])[pos] * inv[:, None]  # (n, H)
        per_tour = np.zeros((tours.m, H, d))
        np.add.at(per_tour, owner, R[:, :, None] * Xu[pos][:, None, :])
    combined = (tours.d_S / tours.m * per_tour.sum(axis=0) if tours.m else 0.0) + seed_G
    if j is not None:
        return TourEstimate(per_tour[:, j], seed_G[j], tours.d_S, combined[j])
    return TourEstimate(per_tour, seed_G, tours.d_S, combined)


def tour_node_weights(tours: TourCollection):
    """``(nodes, c)`` with ``sum_v c_v loglik(v)`` equal to the tour estimate."""
    seeds = np.asarray(tours.seeds, dtype=np.int64)
    if tours.m == 0:
        return seeds, np.ones(len(seeds))
    nodes, _, inv = _flat(tours)
    uniq, pos = np.unique(nodes, return_inverse=True)
    c = np.bincount(pos, weights=inv, minlength=len(uniq)) * (tours.d_S / tours.m)
    return np.concatenate([seeds, uniq]), np.concatenate([np.ones(len(seeds)), c])


def estimated_node_count(tours: TourCollection) -> float:
    """Tour estimate of |V| (the log-likelihood estimator with loglik = 1)."""
    return float(tour_node_weights(tours)[1].sum())


# -- training -----------------------------------------------------------------

def _result(prob, W, layout, g, reg, lam, ok=True, res=None, it=0):
    res = prob.kkt_residual(W) if res is None else res
    return WeightMatrix(W, reg, lam, layout.names, g.class_names, ok, res, it)


def _run_sgd(prob: Problem, draw, config: SGDConfig, fixed_rows=None):
    """SGD on ``prob``'s objective.

    ``draw(rng)`` returns ``(rows, weights)``: a minibatch whose weighted
    sum of per-row gradients is an unbiased estimate of the full weighted
    sum, excluding ``fixed_rows`` which enter exactly every step.
    """
    rng = np.random.default_rng(config.rng_seed)
    H, d = prob.n_classes, prob.X.shape[1]
    W = prob.canonicalize(np.zeros((H, d)))
    scale, lam = prob.scale, prob._lam_eff
    pen = prob.penalized
    X, y = prob.X, prob.y
    if fixed_rows is not None and len(fixed_rows):
        Xf, yf = X[fixed_rows], y[fixed_rows]
    else:
        Xf = None
    trace = []
    t0 = time.perf_counter()
    for t in range(config.steps):
        rows, wts = draw(rng)
        G = (loglik_grad_rows(W, X[rows], y[rows]) * wts[:, None]).T @ X[rows]
        if Xf is not None:
            G += loglik_grad_rows(W, Xf, yf).T @ Xf
        G /= scale
        eta = config.rate(t)
        if prob.reg == "l2":
            G[:, pen] -= lam * W[:, pen]
        W = prob.prox(W + eta * G, eta)
        W = prob.canonicalize(W)
        if not np.all(np.isfinite(W)) or np.linalg.norm(W) > 1e8:
            raise SGDDivergence(t, eta)
        if config.trace_every and ((t + 1) % config.trace_every == 0 or t + 1 == config.steps):
            f, Gf = prob.smooth(W)
            trace.append((t + 1, -(f + prob.nonsmooth(W)) * scale, prob.kkt_residual(W, Gf),
                          time.perf_counter() - t0))
    return W, trace


def _tour_problem(tours, g, spec, reg, lam, X, feature_kw):
    layout = resolve(spec, g)
    nodes, c = tour_node_weights(tours)
    _check_labeled(g, nodes)
    Xn = _features(g, spec, nodes, X, feature_kw)
    prob = Problem.from_layout(Xn, g.labels[nodes], g.n_classes, c, reg, lam, layout)
    return prob, nodes, layout


def sgd_fit_tours(tours: TourCollection, g: AttributedGraph, spec: FeatureSpec, reg: str = "l2",
                  lam: float = 1e-3, config: SGDConfig | None = None, X=None, W0=None,
                  **feature_kw):
    """Fit the soft-max weights to the tour-estimated full-graph objective.

    Each SGD step draws ``batch_size`` tours with replacement and uses the
    tour gradient estimator on them (same ``d_S``, ``m`` replaced by the
    batch size); the seed term is exact. Returns ``(WeightMatrix, trace)``
    where trace rows are ``(step, estimated loglik objective, residual, seconds)``.
    """
    config = config or SGDConfig()
    if tours.m == 0 and not _is_full_seed(tours, g):
        raise ValueError("empty tour collection")
    prob, nodes, layout = _tour_problem(tours, g, spec, reg, lam, X, feature_kw)
    if config.solver == "batch" or tours.m == 0:
        W, ok, res, it = solve(prob, W0, config.opt)
        f, _ = prob.smooth(W)
        return (_result(prob, W, layout, g, reg, lam, ok, res, it),
                [(it, -prob.objective(W), res, 0.0)])
    if config.solver != "sgd":
        raise ValueError(f"unknown solver {config.solver!r}")

    n_seed = len(tours.seeds)
    flat, owner, inv = _flat(tours)
    # rows of interior visits inside prob.X (interior block follows the seeds)
    interior_rows = n_seed + np.searchsorted(nodes[n_seed:], flat)
    order = np.argsort(owner, kind="stable")
    interior_rows, inv, owner = interior_rows[order], inv[order], owner[order]
    ptr = np.concatenate([[0], np.cumsum(np.bincount(owner, minlength=tours.m))])
    m = tours.m
    b = m if config.batch_size is None else min(config.batch_size, m)

    if config.batch_size is None:
        rows_all, wts_all = interior_rows, inv * (tours.d_S / m)

        def draw(rng):
            return rows_all, wts_all
    else:
        def draw(rng):
            ks = rng.integers(m, size=b)
            idx = np.concatenate([np.arange(ptr[k], ptr[k + 1]) for k in ks])
            return interior_rows[idx], inv[idx] * (tours.d_S / b)

    W, trace = _run_sgd(prob, draw, config, fixed_rows=np.arange(n_seed))
    return _result(prob, W, layout, g, reg, lam, it=config.steps), trace


def naive_problem(sample, g, spec, reg, lam, X=None, counts=None, **feature_kw):
    layout = resolve(spec, g)
    nodes = np.asarray(sample.visited if isinstance(sample, CrawlSample) else sample, dtype=np.int64)
    if len(nodes) == 0:
        raise ValueError("empty sample")
    if np.any(g.labels[nodes] == MISSING):
        raise ValueError("sample contains unlabeled nodes")
    c = np.ones(len(nodes)) if counts is None else np.asarray(counts, dtype=float)
    Xn = _features(g, spec, nodes, X, feature_kw)
    return Problem.from_layout(Xn, g.labels[nodes], g.n_classes, c, reg, lam, layout), layout


def sgd_fit_naive(sample: CrawlSample, g: AttributedGraph, spec: FeatureSpec, reg: str = "l2",
                  lam: float = 1e-3, config: SGDConfig | None = None, X=None, W0=None,
                  counts=None, **feature_kw):
    """Baseline: treat the crawled nodes as i.i.d. examples, no reweighting.

    The objective is the sample's summed log-likelihood plus the same
    penalty, so an exhaustive crawl reproduces the global fit.
    """
    config = config or SGDConfig()
    prob, layout = naive_problem(sample, g, spec, reg, lam, X=X, counts=counts, **feature_kw)
    if config.solver == "batch":
        W, ok, res, it = solve(prob, W0, config.opt)
        return _result(prob, W, layout, g, reg, lam, ok, res, it), [(it, -prob.objective(W), res, 0.0)]
    if config.solver != "sgd":
        raise ValueError(f"unknown solver {config.solver!r}")
    n = len(prob.y)
    c = prob.c
    if config.batch_size is None:
        rows_all = np.arange(n)

        def draw(rng):
            return rows_all, c
    else:
        b = min(config.batch_size, n)
        # weighted samples (bootstrap counts) are drawn proportionally to c
        p = c / c.sum()

        def draw(rng):
            rows = rng.choice(n, size=b, p=p)
            return rows, np.full(b, c.sum() / b)

    W, trace = _run_sgd(prob, draw, config)
    return _result(prob, W, layout, g, reg, lam, it=config.steps), trace

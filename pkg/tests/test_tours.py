import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crawlrlr.features import FeatureSpec, default_spec, feature_matrix, resolve
from crawlrlr.harness import generate_synthetic, mae
from crawlrlr.rlr import OptConfig, fit_global, full_gradient, full_loglik, loglik_terms, predict
from crawlrlr.samplers import (CrawlSample, TourCollection, TourDataError, collect_seeds,
                               sample_tours, seed_out_degree)
from crawlrlr.tours import (SGDConfig, SGDDivergence, estimate_gradient, estimate_loglik,
                            estimated_node_count, sgd_fit_naive, sgd_fit_tours,
                            tour_node_weights)

from conftest import make_graph, path_graph, small_attributed


def _collection(g, seeds, tours):
    interior = {v for t in tours for v in t[1:-1]}
    return TourCollection(np.array(seeds), seed_out_degree(g, seeds),
                          tuple(np.array(t) for t in tours),
                          {v: g.degree(v) for v in sorted(interior)})


def _random_w(g, spec, seed=0):
    return np.random.default_rng(seed).normal(size=(g.n_classes, resolve(spec, g).d))


def test_single_interior_node_is_exact():
    g = path_graph(3)
    spec = FeatureSpec(neighbor_label_props=[0])
    W = _random_w(g, spec)
    tc = _collection(g, [0, 2], [[0, 1, 2]])
    assert tc.d_S == 2
    est = estimate_loglik(tc, g, W, spec)
    assert est.combined == pytest.approx(full_loglik(g, W, spec, range(3)), rel=1e-14)


def test_full_seed_set_is_bitwise_exact(g8):
    spec = default_spec(g8)
    W = _random_w(g8, spec)
    tc = TourCollection(np.arange(8), 0, ())
    assert estimate_loglik(tc, g8, W, spec).combined == full_loglik(g8, W, spec, range(8))
    G = estimate_gradient(tc, g8, W, spec).combined
    assert np.array_equal(G[1], full_gradient(g8, W, spec, range(8), 1))


def test_single_tour_closed_form(g8):
    spec = default_spec(g8)
    W = _random_w(g8, spec, 1)
    seeds, tour = [0, 1], [0, 2, 3, 4, 5, 1]
    tc = _collection(g8, seeds, [tour])
    X = feature_matrix(g8, spec)
    ll = loglik_terms(W, X, g8.labels)
    d = g8.degrees
    want = tc.d_S * sum(ll[v] / d[v] for v in tour[1:-1]) + ll[0] + ll[1]
    assert estimate_loglik(tc, g8, W, spec).combined == pytest.approx(want, rel=1e-13)


def test_confident_model_has_zero_gradient():
    g = make_graph([(0, 1), (1, 2), (2, 3)], 4, attrs=[[0], [1], [0], [1]],
                   labels=np.array([0, 1, 0, 1]))
    spec = FeatureSpec(self_attrs=["a0"])
    # huge margins push every predicted probability to exactly 0 or 1
    W = np.array([[0.0, 800.0, -800.0], [0.0, -800.0, 800.0]])
    tc = _collection(g, [0], [[0, 1, 2, 1, 0]])
    assert np.all(estimate_gradient(tc, g, W, spec).combined == 0.0)


def _expected_visits(g, seeds):
    """Expected interior visit counts per tour, from the absorbing chain."""
    n = g.n_nodes
    in_s = np.zeros(n, bool)
    in_s[seeds] = True
    A = g.adjacency().toarray()
    P = A / A.sum(axis=1, keepdims=True)
    out = np.flatnonzero(~in_s)
    Q = P[np.ix_(out, out)]
    start = A[in_s][:, out].sum(axis=0)
    start = start / start.sum()
    visits = np.zeros(n)
    visits[out] = np.linalg.solve((np.eye(len(out)) - Q).T, start)
    return visits


@pytest.mark.parametrize("seeds", [[0], [2, 5], [0, 3, 7]])
def test_estimator_is_unbiased_in_expectation(g8, seeds):
    spec = default_spec(g8)
    W = _random_w(g8, spec, 2)
    ll = loglik_terms(W, feature_matrix(g8, spec), g8.labels)
    visits = _expected_visits(g8, seeds)
    d_S = seed_out_degree(g8, seeds)
    expected = d_S * np.sum(visits * ll / g8.degrees) + ll[seeds].sum()
    assert expected == pytest.approx(ll.sum(), rel=1e-12)


def test_monte_carlo_loglik_within_three_se(g8):
    spec = default_spec(g8)
    W = _random_w(g8, spec, 3)
    tc = sample_tours(g8, [1, 6], 20000, rng_seed=5)
    est = estimate_loglik(tc, g8, W, spec)
    se = tc.d_S * est.per_tour_values.std(ddof=1) / math.sqrt(tc.m)
    assert abs(est.combined - full_loglik(g8, W, spec, range(8))) < 3 * se
    assert np.isfinite(se) and se > 0


def test_node_weights_reproduce_estimates(g8):
    spec = default_spec(g8)
    W = _random_w(g8, spec, 4)
    tc = sample_tours(g8, [3], 50, rng_seed=0)
    nodes, c = tour_node_weights(tc)
    ll = loglik_terms(W, feature_matrix(g8, spec, nodes), g8.labels[nodes])
    assert c @ ll == pytest.approx(estimate_loglik(tc, g8, W, spec).combined, rel=1e-12)
    assert estimated_node_count(tc) == pytest.approx(float(c.sum()))


def test_gradient_estimate_matches_loglik_differences(g8):
    spec = default_spec(g8)
    W = _random_w(g8, spec, 5)
    tc = sample_tours(g8, [0, 4], 30, rng_seed=1)
    G = estimate_gradient(tc, g8, W, spec).combined
    h = 1e-5
    for j in range(2):
        for i in range(W.shape[1]):
            Wp, Wm = W.copy(), W.copy()
            Wp[j, i] += h
            Wm[j, i] -= h
            fd = (estimate_loglik(tc, g8, Wp, spec).combined
                  - estimate_loglik(tc, g8, Wm, spec).combined) / (2 * h)
            assert fd == pytest.approx(G[j, i], rel=1e-5, abs=1e-8)


def test_malformed_tours_rejected(g8):
    spec = default_spec(g8)
    W = _random_w(g8, spec)
    with pytest.raises(TourDataError):
        estimate_loglik(TourCollection(np.array([0]), 3, (np.array([0, 1]),), {}), g8, W, spec)
    with pytest.raises(TourDataError):
        estimate_loglik(TourCollection(np.array([0]), 3, ()), g8, W, spec)
    with pytest.raises(TourDataError):
        estimate_loglik(TourCollection(np.array([0]), 3, (np.array([0, 1, 0]),), {}),
                        g8, W, spec)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 3))
def test_tour_weights_positive_and_seed_weights_one(seed, k):
    g = small_attributed()
    rng = np.random.default_rng(seed)
    seeds = np.sort(rng.choice(8, size=k, replace=False))
    tc = sample_tours(g, seeds, 10, rng_seed=seed)
    nodes, c = tour_node_weights(tc)
    assert np.all(c > 0)
    assert np.array_equal(nodes[:k], seeds) and np.all(c[:k] == 1.0)
    assert not set(nodes[k:].tolist()) & set(seeds.tolist())


# -- fitting --------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_problem():
    g = generate_synthetic(200, rng_seed=3)
    spec = FeatureSpec(self_attrs=list(g.attr_names))
    X = feature_matrix(g, spec)
    seeds = collect_seeds(g, 0, target_size=5, rng_seed=1)
    return g, spec, X, sample_tours(g, seeds, 100, rng_seed=2)


def test_full_batch_sgd_reaches_batch_optimum(small_problem):
    g, spec, X, tc = small_problem
    wb, _ = sgd_fit_tours(tc, g, spec, lam=1.0, X=X,
                          config=SGDConfig(solver="batch", opt=OptConfig(tol=1e-10)))
    w, trace = sgd_fit_tours(tc, g, spec, lam=1.0, X=X,
                             config=SGDConfig(eta0=1.0, tau=1e9, steps=400, batch_size=None))
    assert trace[-1][2] < 1e-4
    assert np.abs(w.weights - wb.weights).max() < 1e-4
    steps = [r[0] for r in trace]
    assert steps == sorted(steps) and steps[-1] == 400


def test_full_batch_ignores_tour_order(small_problem):
    g, spec, X, tc = small_problem
    cfg = SGDConfig(eta0=1.0, tau=1e9, steps=100, batch_size=None, trace_every=0)
    a, _ = sgd_fit_tours(tc, g, spec, lam=1.0, X=X, config=cfg)
    perm = np.random.default_rng(0).permutation(tc.m)
    b, _ = sgd_fit_tours(tc.resample(perm), g, spec, lam=1.0, X=X, config=cfg)
    assert np.allclose(a.weights, b.weights, atol=1e-12)


def test_minibatch_sgd_is_reproducible(small_problem):
    g, spec, X, tc = small_problem
    cfg = SGDConfig(steps=200, batch_size=8, rng_seed=11)
    a, _ = sgd_fit_tours(tc, g, spec, X=X, config=cfg)
    b, _ = sgd_fit_tours(tc, g, spec, X=X, config=cfg)
    assert np.array_equal(a.weights, b.weights)


def test_intercept_only_recovers_class_share():
    g = generate_synthetic(300, rng_seed=4)
    spec = FeatureSpec()
    seeds = collect_seeds(g, 0, target_size=3, rng_seed=0)
    tc = sample_tours(g, seeds, 3000, rng_seed=0)
    w, _ = sgd_fit_tours(tc, g, spec, lam=0.0, config=SGDConfig(solver="batch"))
    p = predict(w, [1.0])
    share = np.bincount(g.labels, minlength=2) / g.n_nodes
    assert np.abs(p - share).max() < 0.02


def test_ample_tours_approach_global_fit():
    g = generate_synthetic(1000, rng_seed=7)
    spec = default_spec(g)
    X = feature_matrix(g, spec)
    gw = fit_global(g, spec, X=X)
    seeds = collect_seeds(g, 0, target_size=20, rng_seed=1)
    tc = sample_tours(g, seeds, 5000, rng_seed=2)
    w, _ = sgd_fit_tours(tc, g, spec, X=X, config=SGDConfig(solver="batch"))
    assert mae(w, gw) < 0.05


def test_naive_fit_on_every_node_is_the_global_fit(g8):
    g = generate_synthetic(300, rng_seed=5)
    spec = default_spec(g)
    X = feature_matrix(g, spec)
    gw = fit_global(g, spec, X=X, opt_config=OptConfig(tol=1e-9))
    w, _ = sgd_fit_naive(CrawlSample(np.arange(g.n_nodes), "BFS"), g, spec, X=X,
                         config=SGDConfig(solver="batch", opt=OptConfig(tol=1e-9)))
    assert mae(w, gw) < 1e-3


def test_single_node_sample_gives_finite_weights(g8):
    spec = default_spec(g8)
    for solver in ("sgd", "batch"):
        w, _ = sgd_fit_naive(CrawlSample(np.array([3]), "BFS"), g8, spec,
                             config=SGDConfig(solver=solver, steps=200))
        assert np.all(np.isfinite(w.weights))


def test_runaway_step_size_raises(small_problem):
    g, spec, X, tc = small_problem
    with pytest.raises(SGDDivergence):
        sgd_fit_tours(tc, g, spec, X=X, config=SGDConfig(eta0=1e12, tau=1e9, steps=50))


def test_minibatch_gradient_variance_is_finite(small_problem):
    g, spec, X, tc = small_problem
    W = np.zeros((2, X.shape[1]))
    rng = np.random.default_rng(0)
    draws = [estimate_gradient(tc.resample(rng.integers(tc.m, size=8)), g, W, spec, X=X).combined
             for _ in range(200)]
    var = np.var(np.stack(draws), axis=0)
    assert np.all(np.isfinite(var))
    full = estimate_gradient(tc, g, W, spec, X=X).combined
    assert np.allclose(np.mean(draws, axis=0), full, atol=6 * np.sqrt(var.max() / 200))

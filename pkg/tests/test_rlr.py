import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from crawlrlr.features import FeatureSpec, default_spec, feature_matrix, resolve
from crawlrlr.harness import generate_synthetic
from crawlrlr.rlr import (OptConfig, Problem, WeightMatrix, fit_global, fit_weighted,
                          full_gradient, full_loglik, node_loglik, node_loglik_grad,
                          penalized_objective, predict, soft_threshold, solve)
from crawlrlr.graph import MISSING

from conftest import make_graph, small_attributed


def test_predict_examples():
    assert predict(np.zeros((2, 3)), np.ones(3)).tolist() == [0.5, 0.5]
    W = np.array([[0.0], [math.log(2)], [math.log(4)]])
    assert predict(W, [1.0]) == pytest.approx([1 / 7, 2 / 7, 4 / 7], abs=1e-15)
    p = predict(np.array([[1000.0], [0.0]]), [1.0])
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0) and p[1] < 1e-300


def test_predict_errors():
    with pytest.raises(ValueError):
        predict(np.zeros((2, 3)), np.ones(2))
    with pytest.raises(ValueError):
        predict(np.array([[np.nan, 0.0], [0.0, 0.0]]), np.ones(2))
    with pytest.raises(ValueError):
        WeightMatrix(np.zeros((1, 3)))


def test_loglik_examples():
    assert node_loglik(np.zeros((2, 4)), np.ones(4), 1) == pytest.approx(-math.log(2), abs=1e-15)
    assert node_loglik(np.zeros((4, 2)), np.ones(2), 3) == pytest.approx(-math.log(4), abs=1e-15)


def test_grad_examples():
    W = np.array([[1000.0, 0.0], [0.0, 0.0]])
    assert np.all(node_loglik_grad(W, [1.0, 0.0], 0, 0) == 0.0)
    assert node_loglik_grad(np.zeros((2, 2)), [1.0, 0.0], 0, 0).tolist() == [0.5, 0.0]


instances = st.tuples(st.integers(2, 5), st.integers(1, 6), st.integers(0, 10**6))


@settings(max_examples=100, deadline=None)
@given(instances)
def test_loglik_is_log_predict(inst):
    H, d, seed = inst
    rng = np.random.default_rng(seed)
    W, phi, y = rng.normal(size=(H, d)) * 3, rng.normal(size=d), int(rng.integers(H))
    p = predict(W, phi)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    assert abs(node_loglik(W, phi, y) - math.log(p[y])) < 1e-12


@settings(max_examples=100, deadline=None)
@given(instances)
def test_grad_matches_central_differences(inst):
    H, d, seed = inst
    rng = np.random.default_rng(seed)
    W, phi, y = rng.normal(size=(H, d)), rng.normal(size=d), int(rng.integers(H))
    h = 1e-5
    for j in range(H):
        g = node_loglik_grad(W, phi, y, j)
        fd = np.empty(d)
        for i in range(d):
            Wp, Wm = W.copy(), W.copy()
            Wp[j, i] += h
            Wm[j, i] -= h
            fd[i] = (node_loglik(Wp, phi, y) - node_loglik(Wm, phi, y)) / (2 * h)
        assert np.linalg.norm(fd - g) <= 1e-6 * max(np.linalg.norm(g), 1e-3)


def test_full_loglik_examples(g8):
    spec = default_spec(g8)
    d = resolve(spec, g8).d
    assert full_loglik(g8, np.zeros((2, d)), spec, range(8)) == pytest.approx(-8 * math.log(2))
    assert full_loglik(g8, np.zeros((2, d)), spec, []) == 0.0
    assert np.all(full_gradient(g8, np.zeros((2, d)), spec, [], 0) == 0.0)


def test_full_loglik_term_by_term():
    g = make_graph([(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)], 5,
                   attrs=[[0], [1], [1], [0], [2]], labels=np.array([0, 1, 1, 0, 1]))
    spec = default_spec(g)
    W = np.random.default_rng(3).normal(size=(2, resolve(spec, g).d))
    terms = [node_loglik(W, _phi(g, spec, v), int(g.labels[v])) for v in range(5)]
    assert full_loglik(g, W, spec, range(5)) == pytest.approx(math.fsum(terms), rel=1e-14)


def _phi(g, spec, v):
    from crawlrlr.features import build_features
    return build_features(g, spec, v)


def test_full_gradient_finite_differences(g8):
    spec = default_spec(g8)
    d = resolve(spec, g8).d
    W = np.random.default_rng(0).normal(size=(2, d))
    nodes = np.arange(8)
    h = 1e-5
    for j in range(2):
        G = full_gradient(g8, W, spec, nodes, j)
        fd = np.empty(d)
        for i in range(d):
            Wp, Wm = W.copy(), W.copy()
            Wp[j, i] += h
            Wm[j, i] -= h
            fd[i] = (full_loglik(g8, Wp, spec, nodes) - full_loglik(g8, Wm, spec, nodes)) / (2 * h)
        assert np.linalg.norm(fd - G) <= 1e-6 * np.linalg.norm(G)


def test_full_gradient_singleton(g8):
    spec = default_spec(g8)
    W = np.random.default_rng(1).normal(size=(2, resolve(spec, g8).d))
    phi = _phi(g8, spec, 4)
    assert np.allclose(full_gradient(g8, W, spec, [4], 1),
                       node_loglik_grad(W, phi, int(g8.labels[4]), 1), atol=1e-15)


def test_unlabeled_nodes_rejected():
    g = make_graph([(0, 1), (1, 2)], 3, labels=np.array([0, MISSING, 1]))
    with pytest.raises(ValueError):
        full_loglik(g, np.zeros((2, 1)), FeatureSpec(), [0, 1])


def test_soft_threshold_shrinks_exactly():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(3, 6))
    mask = np.array([False, True, True, True, True, True])
    out = soft_threshold(W, 0.4, mask)
    assert np.array_equal(out[:, 0], W[:, 0])
    shrink = np.abs(W[:, 1:]) - np.abs(out[:, 1:])
    assert np.allclose(shrink, np.minimum(np.abs(W[:, 1:]), 0.4), atol=1e-15)
    assert np.all(np.sign(out[:, 1:]) * np.sign(W[:, 1:]) >= 0)


def _synthetic_problem(n=300, seed=0):
    g = generate_synthetic(n, rng_seed=seed)
    spec = default_spec(g)
    X = feature_matrix(g, spec)
    return g, spec, X, resolve(spec, g)


def test_l2_fit_matches_lbfgs_oracle():
    g, spec, X, lay = _synthetic_problem()
    y, H, d = g.labels, g.n_classes, lay.d
    lam = 1e-3
    w = fit_global(g, spec, reg="l2", lam=lam, X=X, opt_config=OptConfig(tol=1e-9))
    assert w.converged and w.grad_norm < 1e-9

    # independent oracle: plain negative log-likelihood plus l2 on non-intercept columns
    def f(v):
        W = v.reshape(H, d)
        S = X @ W.T
        m = S.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(S - m).sum(axis=1, keepdims=True))).ravel()
        P = np.exp(S - lse[:, None])
        Y = np.eye(H)[y]
        val = -(S[np.arange(len(y)), y] - lse).sum() + 0.5 * lam * (W[:, 1:] ** 2).sum()
        G = -(Y - P).T @ X
        G[:, 1:] += lam * W[:, 1:]
        return val, G.ravel()

    res = minimize(f, np.zeros(H * d), jac=True, method="L-BFGS-B",
                   options=dict(maxiter=20000, gtol=1e-10, ftol=1e-15))
    ours = penalized_objective(w.weights, X, y, np.ones(len(y)), "l2", lam, lay)
    assert abs(ours - res.fun) < 1e-7 * abs(res.fun)
    # predictions agree even though the oracle is not centred
    assert np.allclose(predict(w, X), predict(res.x.reshape(H, d), X), atol=1e-4)


def test_l1_fit_satisfies_kkt():
    g, spec, X, lay = _synthetic_problem(seed=1)
    lam = 2.0
    w = fit_global(g, spec, reg="l1", lam=lam, X=X)
    W = w.weights
    # gradient of the negative log-likelihood, recomputed from scratch
    S = X @ W.T
    P = np.exp(S - S.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    G = -(np.eye(g.n_classes)[g.labels] - P).T @ X
    tol = 1e-6 * len(X)
    pen = lay.penalized
    assert np.all(np.abs(G[:, ~pen]) < tol)
    Gp, Wp = G[:, pen], W[:, pen]
    nz = Wp != 0
    assert np.all(np.abs(Gp[nz] + lam * np.sign(Wp[nz])) < tol)
    assert np.all(np.abs(Gp[~nz]) <= lam + tol)
    assert nz.sum() < nz.size  # l1 zeroes something at this strength


def test_large_l1_zeroes_everything_but_the_intercept():
    g, spec, X, lay = _synthetic_problem(seed=2)
    w = fit_global(g, spec, reg="l1", lam=1e3, X=X)
    assert np.all(w.weights[:, lay.penalized] == 0.0)
    assert w.converged


def test_separable_toy_has_finite_optimum():
    g = make_graph([(0, 1), (1, 2), (2, 3)], 4, attrs=[[0], [0], [1], [1]],
                   labels=np.array([0, 0, 1, 1]))
    spec = FeatureSpec(self_attrs=["a0"])
    w = fit_global(g, spec, reg="l2", lam=1e-3, opt_config=OptConfig(max_iters=200000))
    assert w.converged and np.all(np.isfinite(w.weights))
    assert w.grad_norm < 1e-6


def test_fit_is_deterministic():
    g, spec, X, _ = _synthetic_problem(seed=3)
    a = fit_global(g, spec, reg="l1", X=X)
    b = fit_global(g, spec, reg="l1", X=X)
    assert np.array_equal(a.weights, b.weights)


def test_random_starts_reach_the_same_objective():
    g, spec, X, lay = _synthetic_problem(seed=4)
    y = g.labels
    rng = np.random.default_rng(0)
    vals = []
    for _ in range(5):
        W0 = rng.normal(size=(g.n_classes, lay.d)) * 3
        w = fit_weighted(X, y, g.n_classes, np.ones(len(y)), "l2", 1e-3, lay,
                         OptConfig(tol=1e-9), W0=W0)
        vals.append(penalized_objective(w.weights, X, y, np.ones(len(y)), "l2", 1e-3, lay))
    assert max(vals) - min(vals) < 1e-8


def test_canonicalize_keeps_likelihood_and_lowers_penalty():
    g, spec, X, lay = _synthetic_problem(seed=5)
    for reg in ("l1", "l2"):
        prob = Problem.from_layout(X, g.labels, 2, np.ones(len(X)), reg, 1.0, lay)
        W = np.random.default_rng(1).normal(size=(2, lay.d))
        Wc = prob.canonicalize(W)
        assert np.allclose(predict(W, X), predict(Wc, X), atol=1e-12)
        assert prob.objective(Wc) <= prob.objective(W) + 1e-9


def test_weight_csv_round_trip():
    w = WeightMatrix(np.array([[0.1, -2.5e-7], [3.0, 1 / 3]]), "l1", 0.5, ("intercept", "x"),
                     ("a", "b"))
    back = WeightMatrix.from_csv(w.to_csv(), "l1", 0.5)
    assert np.array_equal(back.weights, w.weights)
    assert back.feature_names == w.feature_names and back.class_names == w.class_names

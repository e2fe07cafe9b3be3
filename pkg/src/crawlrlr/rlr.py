"""Relational logistic regression.

The model is a soft-max over class rows ``W[h]`` of an ``(H, d)`` weight
matrix. Every training problem in this package, exact or crawl-estimated,
is a weighted objective

    F(W) = -sum_v c_v * loglik_v(W) + lam * penalty(W)

with ``penalty = 0.5 ||W||_2^2`` (l2) or ``||W||_1`` (l1) over all columns
but the intercept. Only ``c`` differs between the global fit (all ones),
the naive fit on a crawl (ones on visited nodes) and the tour estimator.

The soft-max is over-parameterized: adding a vector to every class row, or
moving mass between the intercept and a one-hot block whose columns always
sum to one, leaves every prediction unchanged. Along those directions only
the penalty acts, so :meth:`Problem.canonicalize` minimizes over them in
closed form (means for l2, medians for l1). Without this the directions
have curvature ``lam`` against data curvature of order ``sum(c)`` and
first-order methods crawl along them.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp, softmax

from .features import FeatureSpec, feature_matrix, resolve
from .graph import MISSING, AttributedGraph

logger = logging.getLogger(__name__)

REGS = ("l1", "l2", "none")


@dataclass
class WeightMatrix:
    weights: np.ndarray
    reg: str = "l2"
    lam: float = 1e-3
    feature_names: tuple = ()
    class_names: tuple = ()
    converged: bool = True
    grad_norm: float = 0.0
    n_iter: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[0] < 2:
            raise ValueError("weights must be an (H >= 2, d) matrix")
        if self.reg not in REGS:
            raise ValueError(f"reg must be one of {REGS}, got {self.reg!r}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    @property
    def shape(self):
        return self.weights.shape

    def to_csv(self) -> str:
        H, d = self.weights.shape
        names = self.feature_names or tuple(f"f{i}" for i in range(d))
        classes = self.class_names or tuple(str(h) for h in range(H))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", *names])
        for h in range(H):
            w.writerow([classes[h], *(repr(float(x) + 0.0) for x in self.weights[h])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, reg: str = "l2", lam: float = 1e-3) -> "WeightMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        W = np.array([[float(x) for x in r[1:]] for r in body])
        return cls(W, reg, lam, tuple(header[1:]), tuple(r[0] for r in body))


def _as_array(w) -> np.ndarray:
    W = w.weights if isinstance(w, WeightMatrix) else np.asarray(w, dtype=float)
    if not np.all(np.isfinite(W)):
        raise ValueError("non-finite weight")
    return W


def _scores(W, phi):
    phi = np.asarray(phi, dtype=float)
    if W.ndim != 2 or phi.shape[-1] != W.shape[1]:
        raise ValueError(f"dimension mismatch: weights {W.shape}, features {phi.shape}")
    return phi @ W.T


def predict(w, phi) -> np.ndarray:
    """Class probabilities; ``phi`` may be one vector or a stack of rows."""
    W = _as_array(w)
    return softmax(_scores(W, phi), axis=-1)


def node_loglik(w, phi, y: int) -> float:
    """Log-probability of class ``y`` at a node with features ``phi``."""
    W = _as_array(w)
    s = _scores(W, phi)
    if not 0 <= y < W.shape[0]:
        raise ValueError(f"class {y} out of range")
    return float(s[y] - logsumexp(s))


def node_loglik_grad(w, phi, y: int, j: int) -> np.ndarray:
    """Gradient of :func:`node_loglik` with respect to the class-``j`` row."""
    W = _as_array(w)
    if not (0 <= y < W.shape[0] and 0 <= j < W.shape[0]):
        raise ValueError("class index out of range")
    p = predict(W, phi)
    return (float(y == j) - p[j]) * np.asarray(phi, dtype=float)


def loglik_terms(W, X, y) -> np.ndarray:
    """Per-row log-likelihoods, vectorized."""
    S = X @ W.T
    S -= S.max(axis=1, keepdims=True)
    return S[np.arange(len(y)), y] - np.log(np.exp(S).sum(axis=1))


def loglik_grad_rows(W, X, y) -> np.ndarray:
    """``(n, H)`` residuals ``1{y=h} - p_h``; the per-node gradient is ``r_h * x``."""
    S = X @ W.T
    P = np.exp(S - S.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    P[np.arange(len(y)), y] -= 1.0
    return -P


def _labeled(g: AttributedGraph, node_set) -> np.ndarray:
    nodes = np.asarray(node_set, dtype=np.int64).reshape(-1)
    if len(nodes) and np.any(g.labels[nodes] == MISSING):
        raise ValueError("node_set contains unlabeled nodes")
    return nodes


def full_loglik(g: AttributedGraph, w, spec: FeatureSpec, node_set, X=None, **feature_kw) -> float:
    """Exact log-likelihood summed over ``node_set``."""
    nodes = _labeled(g, node_set)
    W = _as_array(w)
    if len(nodes) == 0:
        return 0.0
    X = feature_matrix(g, spec, nodes, **feature_kw) if X is None else X[nodes]
    return float(np.sum(loglik_terms(W, X, g.labels[nodes])))


def full_gradient(g: AttributedGraph, w, spec: FeatureSpec, node_set, j: int | None = None,
                  X=None, **feature_kw) -> np.ndarray:
    """Exact gradient over ``node_set``: row ``j``, or the whole ``(H, d)`` matrix."""
    nodes = _labeled(g, node_set)
    W = _as_array(w)
    if len(nodes) == 0:
        G = np.zeros_like(W)
    else:
        X = feature_matrix(g, spec, nodes, **feature_kw) if X is None else X[nodes]
        G = loglik_grad_rows(W, X, g.labels[nodes]).T @ X
    return G if j is None else G[j]


def soft_threshold(W, t, mask=None) -> np.ndarray:
    """Proximal map of ``t * ||W[:, mask]||_1``."""
    out = np.array(W, dtype=float)
    cols = slice(None) if mask is None else mask
    sub = out[:, cols]
    out[:, cols] = np.sign(sub) * np.maximum(np.abs(sub) - t, 0.0)
    return out


@dataclass
class OptConfig:
    tol: float = 1e-6
    max_iters: int = 20000
    check_every: int = 5


@dataclass
class Problem:
    """Weighted penalized soft-max objective.

    ``groups`` lists column blocks that sum to exactly one on every row with
    positive weight; they are detected from the data when ``candidates`` is
    given.
    """

    X: np.ndarray
    y: np.ndarray
    n_classes: int
    c: np.ndarray
    reg: str = "l2"
    lam: float = 1e-3
    penalized: np.ndarray | None = None
    intercept: int | None = None
    groups: list = field(default_factory=list)

    def __post_init__(self):
        if self.reg not in REGS:
            raise ValueError(f"reg must be one of {REGS}, got {self.reg!r}")
        keep = self.c > 0
        self.X, self.y, self.c = self.X[keep], self.y[keep], np.asarray(self.c, float)[keep]
        if self.penalized is None:
            self.penalized = np.ones(self.X.shape[1], dtype=bool)
            if self.intercept is not None:
                self.penalized[self.intercept] = False
        self.scale = float(self.c.sum()) if len(self.c) else 1.0
        self.Y = np.zeros((len(self.y), self.n_classes))
        self.Y[np.arange(len(self.y)), self.y] = 1.0
        if self.intercept is not None:
            exact = []
            for cols in self.groups:
                cols = np.asarray(cols)
                if len(cols) and np.allclose(self.X[:, cols].sum(axis=1), 1.0, atol=1e-12):
                    exact.append(cols)
            self.groups = exact
        else:
            self.groups = []
        self._lam_eff = 0.0 if self.reg == "none" else self.lam / self.scale

    @classmethod
    def from_layout(cls, X, y, n_classes, c, reg, lam, layout):
        groups = [np.arange(s, s + w) for _, s, w in layout.self_blocks]
        return cls(X, y, n_classes, c, reg, lam, layout.penalized.copy(), layout.intercept, groups)

    # objective pieces are normalized by sum(c); the minimizer is unchanged

    def smooth(self, W):
        S = self.X @ W.T
        S -= S.max(axis=1, keepdims=True)
        E = np.exp(S)
        tot = E.sum(axis=1)
        ll = self.c @ (np.sum(S * self.Y, axis=1) - np.log(tot))
        P = E / tot[:, None]
        G = -((self.c[:, None] * (self.Y - P)).T @ self.X)
        f = -ll / self.scale
        G /= self.scale
        if self.reg == "l2":
            Wp = W[:, self.penalized]
            f += 0.5 * self._lam_eff * np.sum(Wp * Wp)
            G[:, self.penalized] += self._lam_eff * Wp
        return f, G

    def nonsmooth(self, W) -> float:
        if self.reg == "l1":
            return self._lam_eff * np.abs(W[:, self.penalized]).sum()
        return 0.0

    def objective(self, W) -> float:
        """Unnormalized ``F(W)``."""
        f, _ = self.smooth(W)
        return (f + self.nonsmooth(W)) * self.scale

    def prox(self, W, step):
        if self.reg == "l1":
            return soft_threshold(W, step * self._lam_eff, self.penalized)
        return W

    def kkt_residual(self, W, G=None) -> float:
        """Infinity norm of the minimum-norm subgradient of the normalized objective."""
        if G is None:
            _, G = self.smooth(W)
        if self.reg != "l1":
            return float(np.max(np.abs(G))) if G.size else 0.0
        R = G.copy()
        P = self.penalized
        Wp, Gp = W[:, P], G[:, P]
        lam = self._lam_eff
        R[:, P] = np.where(Wp != 0, Gp + lam * np.sign(Wp),
                           np.sign(Gp) * np.maximum(np.abs(Gp) - lam, 0.0))
        return float(np.max(np.abs(R)))

    def canonicalize(self, W) -> np.ndarray:
        W = np.array(W, dtype=float)
        center = np.median if self.reg == "l1" else np.mean
        ic = self.intercept
        pen = self.penalized
        # the median of two values is their mean
        W[:, pen] -= (np.mean if self.n_classes == 2 else center)(W[:, pen], axis=0)
        W[:, ~pen] -= W[:, ~pen].mean(axis=0)
        for cols in self.groups:
            m = center(W[:, cols], axis=1)
            W[:, cols] -= m[:, None]
            W[:, ic] += m
        return W


def solve(problem: Problem, W0=None, config: OptConfig | None = None):
    """Accelerated proximal gradient with backtracking and adaptive restart.

    Returns ``(W, converged, residual, iterations)``; ``residual`` is the
    KKT residual of the sum(c)-normalized objective.
    """
    cfg = config or OptConfig()
    H, d = problem.n_classes, problem.X.shape[1]
    x = problem.canonicalize(np.zeros((H, d)) if W0 is None else W0)
    if len(problem.y) == 0:
        return x, True, 0.0, 0
    fx, gx = problem.smooth(x)
    Fx = fx + problem.nonsmooth(x)
    res = problem.kkt_residual(x, gx)
    if res < cfg.tol:
        return x, True, res, 0
    row_sq = np.einsum("ij,ij->i", problem.X, problem.X)
    L = max(0.5 * float(np.max(row_sq)), 1e-8)
    y, fy, gy, t = x, fx, gx, 1.0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        while True:
            z = problem.prox(y - gy / L, 1.0 / L)
            fz, gz = problem.smooth(z)
            dz = z - y
            if fz <= fy + np.sum(gy * dz) + 0.5 * L * np.sum(dz * dz) + 1e-15 * abs(fy):
                break
            L *= 2.0
        Fz = fz + problem.nonsmooth(z)
        if Fz > Fx:
            # restart momentum from the last accepted point
            y, fy, gy, t = x, fx, gx, 1.0
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = z + ((t - 1.0) / t_next) * (z - x)
        x, fx, gx, Fx, t = z, fz, gz, Fz, t_next
        fy, gy = problem.smooth(y)
        if it % cfg.check_every == 0:
            res = problem.kkt_residual(x, gx)
            if res < cfg.tol:
                return _finish(problem, x, cfg, it)
        L *= 0.95
    return _finish(problem, x, cfg, it)


def _finish(problem, x, cfg, it):
    # the likelihood is flat along the gauge directions, so centring the
    # result only lowers the penalty
    x = problem.canonicalize(x)
    res = problem.kkt_residual(x)
    return x, res < cfg.tol, res, it


def fit_weighted(X, y, n_classes, c, reg, lam, layout, config=None, W0=None,
                 names=(), class_names=()) -> WeightMatrix:
    prob = Problem.from_layout(X, y, n_classes, c, reg, lam, layout)
    W, ok, res, it = solve(prob, W0, config)
    if not ok:
        logger.warning("solver stopped at max_iters=%d with residual %.3g", it, res)
    return WeightMatrix(W, reg, lam, tuple(names), tuple(class_names), ok, res, it)


def fit_global(g: AttributedGraph, spec: FeatureSpec, node_set=None, reg: str = "l2",
               lam: float = 1e-3, opt_config: OptConfig | None = None, X=None,
               **feature_kw) -> WeightMatrix:
    """Deterministic full-data fit over ``node_set`` (default: all labeled nodes)."""
    layout = resolve(spec, g)
    if node_set is None:
        node_set = np.flatnonzero(g.labels != MISSING)
    nodes = _labeled(g, node_set)
    if len(nodes) == 0:
        raise ValueError("node_set is empty")
    X = feature_matrix(g, spec, nodes, **feature_kw) if X is None else X[nodes]
    return fit_weighted(X, g.labels[nodes], g.n_classes, np.ones(len(nodes)), reg, lam,
                        layout, opt_config, names=layout.names, class_names=g.class_names)


def penalized_objective(W, X, y, c, reg, lam, layout) -> float:
    prob = Problem.from_layout(X, y, W.shape[0], np.asarray(c, float), reg, lam, layout)
    return prob.objective(np.asarray(W, float))

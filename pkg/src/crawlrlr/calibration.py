"""Bootstrap confidence intervals and their coverage.

Tours are the resampling unit for tour sampling (the seed set and ``d_S``
stay fixed); for the other crawlers each visited node is resampled as if
it were an i.i.d. draw. Replicate ``i`` draws from its own stream seeded by
``(rng_seed, i)``, so results do not depend on execution order.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .tours import SGDConfig, SGDDivergence, sgd_fit_naive, sgd_fit_tours

logger = logging.getLogger(__name__)

MAX_FAILED_FRACTION = 0.10


class BootstrapFailure(RuntimeError):
    pass


@dataclass
class BootstrapResult:
    parameter_id: tuple[int, int]  # (class, feature index)
    replicates: np.ndarray
    lower: float
    upper: float
    alpha: float
    estimate: float = math.nan

    @property
    def width(self) -> float:
        return self.upper - self.lower


def nearest_rank(values, q: float) -> float:
    """The ``q``-th percentile (0 < q <= 100) by the nearest-rank rule."""
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        raise ValueError("no values")
    k = math.ceil(q / 100.0 * len(v) - 1e-9)
    return float(v[min(max(k, 1), len(v)) - 1])


def percentile_interval(values, alpha: float) -> tuple[float, float]:
    return nearest_rank(values, 100 * alpha / 2), nearest_rank(values, 100 * (1 - alpha / 2))


def _replicate_rng(rng_seed, i):
    return np.random.default_rng(np.random.SeedSequence([int(rng_seed), int(i)]))


def _collect(fits, point, alpha, B):
    failed = sum(f is None for f in fits)
    if failed > MAX_FAILED_FRACTION * B:
        raise BootstrapFailure(f"{failed} of {B} bootstrap replicates diverged")
    if failed:
        logger.warning("%d of %d bootstrap replicates diverged", failed, B)
    reps = np.stack([f for f in fits if f is not None])  # (B_ok, H, d)
    H, d = reps.shape[1:]
    out = []
    for h in range(H):
        for j in range(d):
            r = reps[:, h, j]
            lo, hi = percentile_interval(r, alpha)
            est = float(point[h, j]) if point is not None else math.nan
            out.append(BootstrapResult((h, j), r, lo, hi, alpha, est))
    return out


def _check(B, alpha):
    if B < 2:
        raise ValueError("B must be at least 2")
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")


def _replicate_config(cfg: SGDConfig, rng_seed, i):
    sub = int(_replicate_rng(rng_seed, i).integers(2**63 - 1))
    return replace(cfg, rng_seed=sub, trace_every=0)


def bootstrap_ci_tours(tours, g, spec, reg="l2", lam=1e-3, sgd_config: SGDConfig | None = None,
                       B: int = 200, alpha: float = 0.05, rng_seed: int = 0, X=None,
                       point=None, **feature_kw) -> list[BootstrapResult]:
    """Percentile intervals from refitting on tours resampled with replacement.

    ``point`` (a fitted :class:`WeightMatrix`) is reported as the estimate and,
    with the batch solver, used as the warm start of every replicate.
    """
    _check(B, alpha)
    if tours.m < 1:
        raise ValueError("need at least one tour")
    cfg = sgd_config or SGDConfig()
    if point is None:
        point, _ = sgd_fit_tours(tours, g, spec, reg, lam, cfg, X=X, **feature_kw)
    W0 = point.weights if cfg.solver == "batch" else None
    fits = []
    for i in range(B):
        idx = _replicate_rng(rng_seed, i).integers(tours.m, size=tours.m)
        try:
            w, _ = sgd_fit_tours(tours.resample(idx), g, spec, reg, lam,
                                 _replicate_config(cfg, rng_seed, i), X=X, W0=W0, **feature_kw)
            fits.append(w.weights)
        except SGDDivergence:
            fits.append(None)
    return _collect(fits, point.weights, alpha, B)


def bootstrap_ci_nodes(sample, g, spec, reg="l2", lam=1e-3, sgd_config: SGDConfig | None = None,
                       B: int = 200, alpha: float = 0.05, rng_seed: int = 0, X=None,
                       point=None, **feature_kw) -> list[BootstrapResult]:
    """Percentile intervals from refitting on visited nodes resampled with replacement."""
    _check(B, alpha)
    n = len(sample.visited)
    if n < 1:
        raise ValueError("empty sample")
    cfg = sgd_config or SGDConfig()
    if point is None:
        point, _ = sgd_fit_naive(sample, g, spec, reg, lam, cfg, X=X, **feature_kw)
    W0 = point.weights if cfg.solver == "batch" else None
    fits = []
    for i in range(B):
        counts = np.bincount(_replicate_rng(rng_seed, i).integers(n, size=n), minlength=n)
        try:
            w, _ = sgd_fit_naive(sample, g, spec, reg, lam, _replicate_config(cfg, rng_seed, i),
                                 X=X, W0=W0, counts=counts, **feature_kw)
            fits.append(w.weights)
        except SGDDivergence:
            fits.append(None)
    return _collect(fits, point.weights, alpha, B)


@dataclass
class Coverage:
    coverage: np.ndarray  # (H, d)
    avg_width: np.ndarray  # (H, d)
    n_trials: int

    @property
    def pooled_coverage(self) -> float:
        return float(self.coverage.mean())

    @property
    def pooled_width(self) -> float:
        return float(self.avg_width.mean())


def coverage_eval(trial_results) -> Coverage:
    """Coverage of the global estimate over trials of ``(results, global_weights)``."""
    trial_results = list(trial_results)
    if not trial_results:
        raise ValueError("need at least one trial")
    first_W = np.asarray(getattr(trial_results[0][1], "weights", trial_results[0][1]))
    hits = np.zeros(first_W.shape)
    width = np.zeros(first_W.shape)
    for results, glob in trial_results:
        Wg = np.asarray(getattr(glob, "weights", glob))
        for r in results:
            h, j = r.parameter_id
            hits[h, j] += r.lower <= Wg[h, j] <= r.upper
            width[h, j] += r.upper - r.lower
    n = len(trial_results)
    return Coverage(hits / n, width / n, n)


def ci_table_csv(results, feature_names=(), class_names=()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "feature", "estimate", "lower", "upper", "width"])
    for r in results:
        h, j = r.parameter_id
        cname = class_names[h] if class_names else str(h)
        fname = feature_names[j] if feature_names else f"f{j}"
        w.writerow([cname, fname, repr(r.estimate), repr(r.lower), repr(r.upper), repr(r.width)])
    return buf.getvalue()

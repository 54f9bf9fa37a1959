"""Assessment: Monte-Carlo risk over sample sizes, sampling distributions and bootstrap CIs."""

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._errors import DomainError
from .models import ReplicateSet
from .numerics import RngStream, derive_stream_id
from .training import LossSpec

__all__ = [
    "RiskReport",
    "BootstrapResult",
    "assessment_loss",
    "evaluate_risk",
    "sampling_distribution",
    "block_bootstrap",
    "bootstrap_ci",
]


def _fmt(x):
    return format(float(x), ".17g")


@dataclass
class RiskReport:
    """Rows of (estimator, m, loss, risk, se, seconds).

    ``per_theta`` keeps the K_test inner averages behind every row, keyed
    by (estimator, m, loss), for paired comparisons.
    """

    rows: list = field(default_factory=list)
    per_theta: dict = field(default_factory=dict)

    def add(self, estimator, m, loss, risk, se, seconds, per=None):
        self.rows.append({"estimator": estimator, "m": int(m), "loss": loss,
                          "risk": float(risk), "se": float(se), "seconds": float(seconds)})
        if per is not None:
            self.per_theta[(estimator, int(m), loss)] = np.asarray(per)

    def get(self, estimator, m, loss):
        for r in self.rows:
            if r["estimator"] == estimator and r["m"] == m and r["loss"] == loss:
                return r
        raise KeyError((estimator, m, loss))

    def paired_se(self, a, b, m, loss):
        """Standard error of the risk difference a - b over shared test parameters."""
        d = self.per_theta[(a, m, loss)] - self.per_theta[(b, m, loss)]
        return float(np.std(d, ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "m", "loss", "risk", "se", "seconds"])
            for r in self.rows:
                w.writerow([r["estimator"], r["m"], r["loss"], _fmt(r["risk"]), _fmt(r["se"]),
                            _fmt(r["seconds"])])


def assessment_loss(kind, prior, scaled=False):
    """A :class:`LossSpec` for assessment.

    The zero-one loss is relative (10%) except at true values of zero,
    where the tolerance is 10% of the prior width (or 0.1 for unbounded
    marginals).
    """
    shift, scale = prior.scaling() if scaled else (None, None)
    zero_tol = None
    if kind == "zero_one":
        widths = []
        for lo, hi in prior.bounds():
            widths.append(hi - lo if math.isfinite(hi - lo) else 1.0)
        zero_tol = 0.1 * np.array(widths)
        shift = scale = None
    return LossSpec(kind, shift=shift, scale=scale, zero_tol=zero_tol)


def _apply(est, sets, thetas=None):
    if hasattr(est, "estimate_many"):
        return np.asarray(est.estimate_many(sets), dtype=np.float64)
    if thetas is not None and getattr(est, "wants_truth", False):
        return np.array([np.atleast_1d(est(s, t)) for s, t in zip(sets, thetas)])
    return np.array([np.atleast_1d(est(s)) for s in sets], dtype=np.float64)


def evaluate_risk(estimators, model, m_grid, K_test, losses=("absolute",), rng=None, *,
                  J=1, seed=0, scaled=False, vartheta=None):
    """Risk of each estimator at each sample size on shared test data.

    ``estimators`` maps names to estimators (objects with ``estimate_many``
    or plain callables ``f(Z)``; callables with ``wants_truth = True`` are
    called as ``f(Z, theta)``). Every estimator sees the same parameter
    draws and data sets.
    """
    if K_test < 1:
        raise DomainError("K_test must be >= 1")
    rng = rng or RngStream(seed, derive_stream_id("test_theta"))
    if vartheta is None:
        vartheta = model.prior.sample(K_test, rng)
    K = vartheta.shape[1]
    specs = {kind: assessment_loss(kind, model.prior, scaled) for kind in losses}
    report = RiskReport()
    for m in m_grid:
        drng = RngStream(rng.seed, derive_stream_id("test_data", rng.stream_id, int(m)))
        data = model.simulate_batch(vartheta, [[int(m)] * J] * K, drng)
        flat = [s for group in data for s in group]
        truth = np.repeat(vartheta.T, J, axis=0)
        for name, est in estimators.items():
            t0 = time.perf_counter()
            th = _apply(est, flat, truth)
            secs = time.perf_counter() - t0
            for kind, spec in specs.items():
                losses_ = spec.value(th, truth).reshape(K, J)
                per = np.array([math.fsum(row) / J for row in losses_])
                risk = math.fsum(per) / K
                se = float(np.std(per, ddof=1) / math.sqrt(K)) if K > 1 else 0.0
                report.add(name, m, kind, risk, se, secs, per)
    return report


def sampling_distribution(estimator, theta, model, m, n_datasets, rng):
    """p x n_datasets estimates from independent data sets simulated at ``theta``."""
    if n_datasets < 1:
        raise DomainError("n_datasets must be >= 1")
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, 1)
    sets = model.simulate_batch(theta, [[int(m)] * n_datasets], rng)[0]
    return _apply(estimator, sets).T


def block_bootstrap(rs, block_labels, B, rng):
    """Pseudo data sets built by resampling whole blocks with replacement.

    Blocks are drawn uniformly until the concatenation holds at least
    ``m`` replicates; all drawn blocks are kept, so sizes can exceed m.
    """
    Z = rs.data if isinstance(rs, ReplicateSet) else np.atleast_2d(rs)
    labels = np.asarray(block_labels)
    if labels.size == 0:
        raise DomainError("block labels are empty")
    if labels.size != Z.shape[1]:
        raise DomainError(f"{labels.size} labels for {Z.shape[1]} replicates")
    uniq, inv = np.unique(labels, return_inverse=True)
    members = [np.flatnonzero(inv == b) for b in range(uniq.size)]
    m = Z.shape[1]
    out = []
    for _ in range(int(B)):
        idx, total = [], 0
        while total < m:
            blk = members[int(rng.integers(0, uniq.size))]
            idx.append(blk)
            total += blk.size
        cols = np.concatenate(idx)
        data = Z[:, cols]
        if isinstance(rs, ReplicateSet):
            out.append(ReplicateSet(data, rs.model_id, rs.transform))
        else:
            out.append(data)
    return out


@dataclass
class BootstrapResult:
    """Bootstrap estimates (p x B) and percentile confidence limits.

    Percentiles use linear interpolation between order statistics
    (``numpy.quantile`` default): for sorted values x_(1..B) and level a
    the position is a*(B - 1) from 0.
    """

    estimates: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    levels: tuple = (0.025, 0.975)

    @property
    def B(self):
        return self.estimates.shape[1]

    def covers(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return (self.lower <= theta) & (theta <= self.upper)

    def to_csv(self, path, param_names, point=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "estimate", "lo", "hi"])
            for k, name in enumerate(param_names):
                est = "" if point is None else _fmt(point[k])
                w.writerow([name, est, _fmt(self.lower[k]), _fmt(self.upper[k])])


def bootstrap_ci(estimator, pseudo_sets, levels=(0.025, 0.975)):
    """Percentile bootstrap intervals from estimates on each pseudo data set."""
    if len(pseudo_sets) < 2:
        raise DomainError("bootstrap needs at least two pseudo data sets")
    est = _apply(estimator, pseudo_sets).T
    lo, hi = np.quantile(est, levels, axis=1)
    return BootstrapResult(est, lo, hi, tuple(levels))

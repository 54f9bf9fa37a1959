"""Training neural Bayes estimators by minimising a Monte-Carlo Bayes risk.

The parameter vectors used for training and validation are drawn once and
kept fixed; the data simulated from them are either fixed, refreshed every
k epochs, or simulated afresh for every minibatch (``on_the_fly``). All
randomness flows from ``TrainConfig.seed`` through per-purpose streams, so
a run is a deterministic function of its configuration.
"""

import copy
import csv
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._errors import DomainError, TrainingDivergence
from .network import DeepSetsEstimator, PiecewiseEstimator, backward
from .numerics import RngStream, derive_stream_id

__all__ = [
    "LossSpec",
    "TrainConfig",
    "AdamState",
    "TrainingRun",
    "loss",
    "mc_bayes_risk",
    "sample_M",
    "adam_step",
    "train_epoch",
    "train",
    "pretrain_chain",
    "build_estimator",
]


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


@dataclass
class LossSpec:
    """Loss kind plus optional per-parameter affine scaling.

    With scaling, both arguments are mapped by ``(x - shift) / scale``
    before the elementwise loss is taken; the result is averaged over
    parameters.
    """

    kind: str = "absolute"
    tol: float = 0.10
    prob: float = 0.5
    shift: np.ndarray = None
    scale: np.ndarray = None
    zero_tol: np.ndarray = None  # absolute tolerance used when theta_j == 0

    def __post_init__(self):
        if self.kind not in ("absolute", "squared", "zero_one", "quantile"):
            raise DomainError(f"unknown loss kind {self.kind!r}")
        if not self.tol > 0:
            raise DomainError("zero-one tolerance must be positive")
        if not 0 < self.prob < 1:
            raise DomainError("quantile level must lie in (0, 1)")

    @property
    def differentiable(self):
        return self.kind != "zero_one"

    def _scale(self, x):
        if self.scale is None:
            return x if self.shift is None else x - self.shift
        shift = 0.0 if self.shift is None else self.shift
        return (x - shift) / self.scale

    def elementwise(self, theta_hat, theta):
        th = np.asarray(theta_hat, dtype=np.float64)
        t = np.asarray(theta, dtype=np.float64)
        if self.kind == "zero_one":
            tol = self.tol * np.abs(t)
            if self.zero_tol is not None:
                tol = np.where(t == 0, self.zero_tol, tol)
            return (np.abs(th - t) > tol).astype(np.float64)
        d = self._scale(th) - self._scale(t)
        if self.kind == "absolute":
            return np.abs(d)
        if self.kind == "squared":
            return d * d
        return d * ((d > 0) - self.prob)

    def value(self, theta_hat, theta):
        """Loss averaged over the last (parameter) axis."""
        return np.mean(self.elementwise(theta_hat, theta), axis=-1)

    def value_and_grad(self, theta_hat, theta):
        """Per-row loss and its derivative with respect to ``theta_hat``."""
        if not self.differentiable:
            raise DomainError("the zero-one loss is not differentiable; train with another loss")
        th = np.asarray(theta_hat, dtype=np.float64)
        t = np.asarray(theta, dtype=np.float64)
        d = self._scale(th) - self._scale(t)
        p = th.shape[-1]
        if self.kind == "absolute":
            vals, g = np.abs(d), np.sign(d)
        elif self.kind == "squared":
            vals, g = d * d, 2.0 * d
        else:
            ind = (d > 0).astype(np.float64)
            vals, g = d * (ind - self.prob), ind - self.prob
        if self.scale is not None:
            g = g / self.scale
        return vals.mean(axis=-1), g / p


def loss(spec, theta_hat, theta):
    return float(spec.value(np.atleast_1d(theta_hat), np.atleast_1d(theta)))


# ---------------------------------------------------------------------------
# Configuration and state
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    K_train: int = 10_000
    K_val: int = 2_000
    J: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    patience: int = 5
    refresh: str = "on_the_fly"  # "on_the_fly" | "fixed" | "every:k"
    m: object = 10  # int or [lo, hi] for a discrete uniform sample size
    max_epochs: int = 200
    seed: int = 0
    loss: str = "absolute"
    scale_loss: object = None  # None: scale by prior widths when p >= 3

    def __post_init__(self):
        for name in ("K_train", "K_val", "J", "batch_size", "patience", "max_epochs"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        self.refresh_period()
        if isinstance(self.m, (list, tuple)):
            lo, hi = (int(v) for v in self.m)
            if not 1 <= lo <= hi:
                raise DomainError(f"sample-size range must satisfy 1 <= lo <= hi, got {self.m}")
            self.m = (lo, hi)
        elif int(self.m) < 1:
            raise DomainError("m must be >= 1")
        else:
            self.m = int(self.m)
        LossSpec(self.loss)

    def refresh_period(self):
        """0 for fixed data, k for refresh every k epochs (1 = on the fly)."""
        r = self.refresh
        if r == "on_the_fly":
            return 1
        if r == "fixed":
            return 0
        if isinstance(r, str) and r.startswith("every:"):
            k = int(r.split(":", 1)[1])
            if k < 1:
                raise DomainError("refresh period must be >= 1")
            return k
        raise DomainError(f"unknown refresh mode {r!r}")

    def to_dict(self):
        d = asdict(self)
        d["m"] = list(self.m) if isinstance(self.m, tuple) else self.m
        return d


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = None
    v: list = None


def adam_step(state, params, grads):
    """One bias-corrected Adam update, in place on ``params``."""
    if len(params) != len(grads):
        raise DomainError("parameter and gradient lists differ in length")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DomainError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainingRun:
    epochs: list = field(default_factory=list)
    train_risk: list = field(default_factory=list)
    val_risk: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    @property
    def best_val_risk(self):
        return min(self.val_risk)

    def record(self, epoch, tr, va, sec):
        self.epochs.append(epoch)
        self.train_risk.append(tr)
        self.val_risk.append(va)
        self.seconds.append(sec)

    def epochs_to_reach(self, target):
        """First epoch whose validation risk is <= target, or None."""
        for e, v in zip(self.epochs, self.val_risk):
            if v <= target:
                return e
        return None

    def records(self):
        """(epoch, train_risk, val_risk) triples, omitting wall time."""
        return list(zip(self.epochs, self.train_risk, self.val_risk))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_risk", "val_risk", "seconds"])
            for e, tr, va, s in zip(self.epochs, self.train_risk, self.val_risk, self.seconds):
                w.writerow([e, _fmt(tr), _fmt(va), _fmt(s)])


def _fmt(x):
    return "nan" if x is None else format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Risk and sample sizes
# ---------------------------------------------------------------------------


def sample_M(dist, rng):
    """A sample size: the fixed ``dist`` or uniform on {lo, ..., hi}."""
    if isinstance(dist, (tuple, list)):
        lo, hi = int(dist[0]), int(dist[1])
        if lo > hi:
            raise DomainError("sample-size range needs lo <= hi")
        return int(rng.integers(lo, hi + 1))
    return int(dist)


def _estimate(estimator, sets):
    if hasattr(estimator, "estimate_many"):
        return np.asarray(estimator.estimate_many(sets), dtype=np.float64)
    return np.array([np.atleast_1d(estimator(s)) for s in sets], dtype=np.float64)


def mc_bayes_risk(estimator, vartheta, datasets, spec, *, return_per_theta=False):
    """Monte-Carlo Bayes risk: mean over theta of the mean over its J data sets.

    ``vartheta`` is p x K and ``datasets[k]`` holds the data sets simulated
    at column k. Returns ``(risk, standard_error)`` where the error is taken
    across the K outer terms. Sums use :func:`math.fsum`, so the result does
    not depend on the order of the parameter vectors or data sets.
    """
    vartheta = np.atleast_2d(np.asarray(vartheta, dtype=np.float64))
    K = vartheta.shape[1]
    if K == 0 or len(datasets) != K or any(len(d) == 0 for d in datasets):
        raise DomainError("mc_bayes_risk needs K >= 1 aligned, nonempty data-set lists")
    flat = [s for group in datasets for s in group]
    owner = np.repeat(np.arange(K), [len(g) for g in datasets])
    est = _estimate(estimator, flat)
    losses = spec.value(est, vartheta.T[owner])
    per = np.empty(K)
    start = 0
    for k, group in enumerate(datasets):
        stop = start + len(group)
        per[k] = math.fsum(losses[start:stop]) / len(group)
        start = stop
    risk = math.fsum(per) / K
    se = math.sqrt(math.fsum((per - risk) ** 2) / (K - 1) / K) if K > 1 else 0.0
    if return_per_theta:
        return risk, se, per
    return risk, se


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def loss_spec_for(model, config):
    scale_on = config.scale_loss if config.scale_loss is not None else model.p >= 3
    if scale_on:
        shift, scale = model.prior.scaling()
        return LossSpec(config.loss, shift=shift, scale=scale)
    return LossSpec(config.loss)


def build_estimator(model, rng, *, q=64, psi_widths=(128, 128), phi_widths=(128,),
                    expert_spec=None):
    """A freshly initialised DeepSets estimator sized for ``model``.

    The fixed output map centres estimates on the prior median and, for
    uniform marginals, scales them by the prior width.
    """
    _, scale = model.prior.scaling()
    return DeepSetsEstimator.build(
        model.n, model.p, rng, q=q, psi_widths=psi_widths, phi_widths=phi_widths,
        expert_spec=expert_spec, output_shift=model.prior.median(), output_scale=scale,
        param_names=model.param_names,
    )


class _DataSource:
    """Deterministic data sets for a fixed array of parameter vectors.

    Each request simulates its parameter columns together from one stream
    keyed by (purpose, generation, tag). With ``keep=True`` sets are cached
    per column and generation so fixed or periodically refreshed data are
    reused exactly.
    """

    def __init__(self, model, vartheta, config, purpose, keep=False):
        self.model = model
        self.vartheta = vartheta
        self.config = config
        self.purpose = purpose
        self.keep = keep
        self._cache = {}

    def batch(self, idx, generation, tag):
        idx = [int(k) for k in idx]
        todo = [k for k in idx if (k, generation) not in self._cache]
        fresh = {}
        if todo:
            rng = RngStream(self.config.seed, derive_stream_id(self.purpose, generation, tag))
            ms = [[sample_M(self.config.m, rng) for _ in range(self.config.J)] for _ in todo]
            sims = self.model.simulate_batch(self.vartheta[:, todo], ms, rng)
            fresh = dict(zip(todo, sims))
            if self.keep:
                for k, v in fresh.items():
                    self._cache[(k, generation)] = v
        return [fresh[k] if k in fresh else self._cache[(k, generation)] for k in idx]

    def forget_before(self, generation):
        for key in [key for key in self._cache if key[1] < generation]:
            del self._cache[key]


def _generation(config, epoch):
    period = config.refresh_period()
    return 0 if period == 0 else (epoch - 1) // period


def train_epoch(estimator, vartheta, model, config, adam, *, epoch=1, source=None, spec=None):
    """One pass over the training parameter vectors; returns the mean training risk."""
    spec = spec or loss_spec_for(model, config)
    cache_data = config.refresh_period() != 1
    source = source or _DataSource(model, vartheta, config, "train", keep=cache_data)
    K = vartheta.shape[1]
    gen = _generation(config, epoch)
    order = RngStream(config.seed, derive_stream_id("shuffle", epoch)).permutation(K)
    params = estimator.params()
    risks, weights = [], []
    for start in range(0, K, config.batch_size):
        idx = order[start:start + config.batch_size]
        sets, thetas = [], []
        for k, ks in zip(idx, source.batch(idx, gen, (epoch, start))):
            sets += ks
            thetas += [vartheta[:, k]] * len(ks)
        value, grads = backward(estimator, sets, np.array(thetas), spec)
        if not (math.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads)):
            raise TrainingDivergence(f"non-finite training risk in epoch {epoch}")
        adam_step(adam, params, grads)
        risks.append(value)
        weights.append(len(sets))
    if cache_data:
        source.forget_before(gen)
    return float(np.average(risks, weights=weights))


def train(estimator, model, config, *, prior=None, val_data=None, verbose=False):
    """Train ``estimator`` in place and return it with its :class:`TrainingRun`.

    Stops when the validation risk has not improved for ``patience``
    consecutive epochs or after ``max_epochs``; the weights of the best
    epoch are restored. Epoch 0 records the risk before training.
    """
    if prior is not None and prior is not model.prior:
        model = copy.copy(model)
        model.prior = prior
    if estimator.n != model.n or estimator.p != model.p:
        raise DomainError(
            f"estimator is ({estimator.n}, {estimator.p}) but model is ({model.n}, {model.p})"
        )
    spec = loss_spec_for(model, config)
    prng = RngStream(config.seed, derive_stream_id("vartheta"))
    vt_train = model.prior.sample(config.K_train, prng)
    if val_data is None:
        val_data = validation_data(model, config)
    vt_val, val_sets = val_data

    source = _DataSource(model, vt_train, config, "train", keep=config.refresh_period() != 1)
    adam = AdamState(lr=config.learning_rate)
    run = TrainingRun()
    t0 = time.perf_counter()
    best, _ = mc_bayes_risk(estimator, vt_val, val_sets, spec)
    best_params = [p.copy() for p in estimator.params()]
    run.record(0, None, best, time.perf_counter() - t0)
    run.best_epoch = 0
    run.stop_reason = "max_epochs"
    for epoch in range(1, config.max_epochs + 1):
        tr = train_epoch(estimator, vt_train, model, config, adam,
                         epoch=epoch, source=source, spec=spec)
        va, _ = mc_bayes_risk(estimator, vt_val, val_sets, spec)
        if not math.isfinite(va):
            raise TrainingDivergence(f"non-finite validation risk in epoch {epoch}")
        run.record(epoch, tr, va, time.perf_counter() - t0)
        if verbose:
            print(f"epoch {epoch:3d}  train {tr:.5f}  val {va:.5f}")
        if va < best:
            best = va
            run.best_epoch = epoch
            best_params = [p.copy() for p in estimator.params()]
        elif epoch - run.best_epoch >= config.patience:
            run.stop_reason = "patience"
            break
    estimator.set_params(best_params)
    return estimator, run


def validation_data(model, config):
    """Fixed validation parameters (p x K_val) and their J data sets each."""
    prng = RngStream(config.seed, derive_stream_id("vartheta_val"))
    vt_val = model.prior.sample(config.K_val, prng)
    src = _DataSource(model, vt_val, config, "val")
    chunk = 256
    sets = []
    for start in range(0, config.K_val, chunk):
        idx = range(start, min(start + chunk, config.K_val))
        sets += src.batch(idx, 0, start)
    return vt_val, sets


def pretrain_chain(model, sizes, changepoints, config, *, estimator=None, rng=None,
                   arch=None, verbose=False):
    """Train one sub-estimator per sample size, each warm-started from the last.

    Returns the assembled :class:`PiecewiseEstimator` and the list of runs.
    """
    sizes = [int(s) for s in sizes]
    if any(a >= b for a, b in zip(sizes, sizes[1:])):
        raise DomainError("training sample sizes must be strictly increasing")
    if len(changepoints) != len(sizes) - 1:
        raise DomainError("need one fewer changepoint than training sizes")
    for s, c in zip(sizes, changepoints):
        if s > c:
            raise DomainError(f"training size {s} exceeds its changepoint {c}")
    if estimator is None:
        rng = rng or RngStream(config.seed, derive_stream_id("init"))
        estimator = build_estimator(model, rng, **(arch or {}))
    subs, runs = [], []
    current = estimator
    for k, m in enumerate(sizes):
        cfg = _with_m(config, m)
        current = current.copy()
        current, run = train(current, model, cfg, verbose=verbose)
        subs.append(current)
        runs.append(run)
    return PiecewiseEstimator(subs, changepoints, sizes), runs


def _with_m(config, m):
    d = config.to_dict()
    d["m"] = m
    return TrainConfig(**d)

"""Command-line interface: ``nbe {simulate,train,assess,estimate,bootstrap}``.

Experiments are described by one JSON document (``--config``); command-line
flags override its fields and the merged configuration is written to
``<out>/effective_config.json``. Exit codes: 0 success, 2 invalid
configuration, 3 simulation failure, 4 training divergence, 5 checkpoint or
data mismatch.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import assess, likelihood, models, network, training
from ._errors import CheckpointError, DomainError, SimulationError, TrainingDivergence
from .numerics import RngStream, derive_stream_id

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_DIVERGENCE = 4
EXIT_MISMATCH = 5

DEFAULT_ARCH = {"q": 64, "psi_widths": [128, 128], "phi_widths": [128], "expert_stats": None}


class ConfigError(Exception):
    pass


def _fmt(x):
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


_TOP_KEYS = {"model", "model_config", "prior", "architecture", "train", "piecewise", "seed",
             "threads", "paths", "assess"}


class Experiment:
    """A validated experiment: model, architecture, training and piecewise settings."""

    def __init__(self, cfg):
        unknown = set(cfg) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        self.cfg = cfg
        name = cfg.get("model", "uniform_theta")
        try:
            self.model = models.get_model(name, cfg.get("prior"), **cfg.get("model_config", {}))
        except TypeError as exc:
            raise ConfigError(f"bad model_config: {exc}") from exc
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        arch = dict(DEFAULT_ARCH)
        arch.update(cfg.get("architecture") or {})
        unknown = set(arch) - set(DEFAULT_ARCH)
        if unknown:
            raise ConfigError(f"unknown architecture keys: {sorted(unknown)}")
        if int(arch["q"]) < 1 or any(int(w) < 1 for w in arch["psi_widths"] + arch["phi_widths"]):
            raise ConfigError("layer widths must be >= 1")
        es = arch["expert_stats"]
        if es is not None and not all(0 <= float(p) <= 1 for p in es):
            raise ConfigError("expert_stats must list probabilities in [0, 1]")
        self.arch = arch
        tcfg = dict(cfg.get("train") or {})
        tcfg.setdefault("seed", int(cfg.get("seed", 0)))
        try:
            self.train = training.TrainConfig(**tcfg)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from exc
        except (DomainError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        pw = cfg.get("piecewise")
        self.sizes = self.changepoints = None
        if pw:
            self.sizes = [int(s) for s in pw.get("sizes", [])]
            self.changepoints = [int(c) for c in pw.get("changepoints", [])]
            if not self.sizes or any(s < 1 for s in self.sizes):
                raise ConfigError("piecewise sizes must be positive")
            if any(a >= b for a, b in zip(self.sizes, self.sizes[1:])):
                raise ConfigError("piecewise sizes must be strictly increasing")
            if len(self.changepoints) != len(self.sizes) - 1:
                raise ConfigError("need one fewer changepoint than piecewise sizes")
            if any(a >= b for a, b in zip(self.changepoints, self.changepoints[1:])):
                raise ConfigError("changepoints must be strictly increasing")
            if any(s > c for s, c in zip(self.sizes, self.changepoints)):
                raise ConfigError("each training size must not exceed its changepoint")

    def build_estimator(self, rng):
        a = self.arch
        return training.build_estimator(
            self.model, rng, q=int(a["q"]), psi_widths=tuple(a["psi_widths"]),
            phi_widths=tuple(a["phi_widths"]), expert_spec=a["expert_stats"],
        )


def _merge(cfg, args):
    cfg = json.loads(json.dumps(cfg))
    if args.seed is not None:
        cfg["seed"] = args.seed
        cfg.setdefault("train", {})["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    if getattr(args, "model", None):
        cfg["model"] = args.model
    return cfg


def _echo(out, cfg, args):
    os.makedirs(out, exist_ok=True)
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    with open(os.path.join(out, "effective_config.json"), "w") as fh:
        json.dump({"config": cfg, "flags": flags}, fh, indent=2, sort_keys=True, default=str)


def _parse_floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list {text!r}") from exc


def _parse_ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer list {text!r}") from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(args, cfg):
    exp = Experiment(cfg)
    if args.m is None or args.m < 1:
        raise ConfigError("--m must be a positive integer")
    seed = int(cfg.get("seed", 0))
    rng = RngStream(seed, derive_stream_id("cli_simulate"))
    if args.theta is not None:
        theta = np.array(_parse_floats(args.theta))
        if theta.size != exp.model.p:
            raise ConfigError(f"--theta needs {exp.model.p} values for {exp.model.name}")
    elif args.from_prior:
        theta = exp.model.prior.sample(1, rng)[:, 0]
    else:
        raise ConfigError("give --theta or --from-prior")
    _echo(args.out, cfg, args)
    try:
        raw = exp.model.simulate_raw(theta, args.m, rng)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    rs = models.ReplicateSet(models.apply_transform(exp.model.transform, raw),
                             exp.model.model_id, exp.model.transform)
    path = os.path.join(args.out, args.data_name)
    rs.save(path)
    with open(os.path.join(args.out, "theta.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value"])
        for name, v in zip(exp.model.param_names, theta):
            w.writerow([name, _fmt(v)])
    print(f"wrote {path}: n={rs.n} m={rs.m} seed={seed}")
    return EXIT_OK


def cmd_train(args, cfg):
    exp = Experiment(cfg)
    _echo(args.out, cfg, args)
    seed = exp.train.seed
    if args.init_checkpoint:
        est = network.load_checkpoint(args.init_checkpoint, expect_n=exp.model.n,
                                      expect_p=exp.model.p, expect_names=exp.model.param_names)
        if isinstance(est, network.PiecewiseEstimator):
            est = est.estimators[-1]
    else:
        est = exp.build_estimator(RngStream(seed, derive_stream_id("init")))
    if exp.sizes:
        result, runs = training.pretrain_chain(exp.model, exp.sizes, exp.changepoints,
                                               exp.train, estimator=est, verbose=args.verbose)
    else:
        result, run = training.train(est, exp.model, exp.train, verbose=args.verbose)
        runs = [run]
    ckpt = os.path.join(args.out, "checkpoint")
    network.save_checkpoint(result, ckpt)
    for k, run in enumerate(runs):
        name = "training_run.csv" if len(runs) == 1 else f"training_run_stage{k + 1}.csv"
        run.to_csv(os.path.join(args.out, name))
    print(f"best validation risk: {_fmt(runs[-1].best_val_risk)}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


class _OracleEstimator:
    def __init__(self, model):
        self.f = model.bayes_estimator()

    def __call__(self, Z):
        return self.f(Z)


class _OaatUniform:
    def __init__(self, model):
        a, b = model.prior.marginals[0].a, model.prior.marginals[0].b
        self.alpha, self.beta = a, b

    def __call__(self, Z):
        z = np.asarray(Z)
        return np.array([np.mean(models.uniform_single_rep_bayes(z, self.alpha, self.beta))])


class _TruthStartMap:
    wants_truth = True

    def __init__(self, problem):
        self.est = likelihood.MapEstimator(problem)

    def __call__(self, Z, theta):
        return self.est.estimate(Z, init=theta)


def _baselines(names, model):
    out = {}
    for b in names:
        if b == "oracle":
            if model.bayes_estimator() is None:
                raise ConfigError(f"no closed-form estimator for {model.name}")
            out["oracle"] = _OracleEstimator(model)
        elif b == "oaat":
            if model.name != "uniform_theta":
                raise ConfigError("the one-at-a-time baseline is defined for uniform_theta")
            out["one_at_a_time"] = _OaatUniform(model)
        elif b == "map":
            if model.name != "gp":
                raise ConfigError("the MAP baseline is available for the gp model")
            out["map"] = _TruthStartMap(likelihood.gp_map_problem(model))
        elif b == "pmap":
            if model.name != "schlather":
                raise ConfigError("the PMAP baseline is available for the schlather model")
            out["pmap"] = _TruthStartMap(likelihood.schlather_pmap_problem(model))
        else:
            raise ConfigError(f"unknown baseline {b!r}")
    return out


def cmd_assess(args, cfg):
    exp = Experiment(cfg)
    m_grid = _parse_ints(args.m_grid)
    if not m_grid or any(m < 1 for m in m_grid):
        raise ConfigError("--m-grid needs positive sample sizes")
    losses = [s.strip() for s in args.losses.split(",") if s.strip()]
    for kind in losses:
        if kind not in ("absolute", "squared", "zero_one", "quantile"):
            raise ConfigError(f"unknown loss {kind!r}")
    if args.K_test < 1:
        raise ConfigError("--K-test must be >= 1")
    baselines = _baselines([b for b in (args.baseline or []) if b], exp.model)
    _echo(args.out, cfg, args)
    ests = {}
    for k, path in enumerate(args.checkpoint or []):
        est = network.load_checkpoint(path, expect_n=exp.model.n, expect_p=exp.model.p,
                                      expect_names=exp.model.param_names)
        ests[f"nbe{k + 1}"] = est
    ests.update(baselines)
    if not ests:
        raise ConfigError("nothing to assess: give --checkpoint and/or --baseline")
    rep = assess.evaluate_risk(ests, exp.model, m_grid, args.K_test, losses,
                               seed=int(cfg.get("seed", 0)), J=args.J)
    path = os.path.join(args.out, "risk.csv")
    rep.to_csv(path)
    print(f"wrote {path} ({len(rep.rows)} rows)")
    return EXIT_OK


def _load_pair(args):
    rs = models.ReplicateSet.load(args.data)
    est = network.load_checkpoint(args.checkpoint, expect_n=rs.n)
    return est, rs


def cmd_estimate(args, cfg):
    est, rs = _load_pair(args)
    _echo(args.out, cfg, args)
    t0 = time.perf_counter()
    theta = est.estimate(rs)
    secs = time.perf_counter() - t0
    path = os.path.join(args.out, "estimates.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "estimate"])
        for name, v in zip(est.param_names, theta):
            w.writerow([name, _fmt(v)])
    print(f"estimated {len(theta)} parameters from m={rs.m} replicates in {secs:.6f} s")
    return EXIT_OK


def _read_blocks(path, m):
    with open(path) as fh:
        labels = [line.strip() for line in fh if line.strip()]
    if len(labels) != m:
        raise CheckpointError(f"blocks file has {len(labels)} labels for {m} replicates")
    return labels


def cmd_bootstrap(args, cfg):
    if args.B < 2:
        raise ConfigError("--B must be >= 2")
    est, rs = _load_pair(args)
    labels = _read_blocks(args.blocks, rs.m) if args.blocks else list(range(rs.m))
    _echo(args.out, cfg, args)
    rng = RngStream(int(cfg.get("seed", 0)), derive_stream_id("cli_bootstrap"))
    t0 = time.perf_counter()
    point = est.estimate(rs)
    pseudo = assess.block_bootstrap(rs, labels, args.B, rng)
    res = assess.bootstrap_ci(est, pseudo)
    secs = time.perf_counter() - t0
    path = os.path.join(args.out, "bootstrap.csv")
    res.to_csv(path, est.param_names, point)
    print(f"bootstrap with B={args.B} finished in {secs:.3f} s; wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--out", default=".", help="output directory")

    parser = argparse.ArgumentParser(prog="nbe", description="Neural Bayes estimation toolkit",
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a data file")
    p.add_argument("--model", help="model name (overrides config)")
    p.add_argument("--theta", help="comma-separated parameter vector")
    p.add_argument("--from-prior", action="store_true", help="draw theta from the prior")
    p.add_argument("--m", type=int, help="number of replicates")
    p.add_argument("--data-name", default="data.nbes")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train an estimator")
    p.add_argument("--model", help="model name (overrides config)")
    p.add_argument("--init-checkpoint", help="start from these weights")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("assess", parents=[common], help="Monte-Carlo risk report")
    p.add_argument("--model", help="model name (overrides config)")
    p.add_argument("--checkpoint", action="append", help="checkpoint directory (repeatable)")
    p.add_argument("--m-grid", default="1,10,30")
    p.add_argument("--losses", default="absolute")
    p.add_argument("--K-test", type=int, default=500)
    p.add_argument("--J", type=int, default=1)
    p.add_argument("--baseline", action="append",
                   help="oracle | oaat | map | pmap (repeatable)")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("estimate", parents=[common], help="point estimates for a data file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bootstrap", parents=[common], help="block-bootstrap confidence intervals")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--blocks", help="file with one block label per replicate")
    p.add_argument("--B", type=int, default=400)
    p.set_defaults(func=cmd_bootstrap)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge(load_config(args.config), args)
        return args.func(args, cfg)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CheckpointError as exc:
        print(f"mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())

"""Dense networks, the DeepSets estimator and the piecewise sample-size router.

Data sets enter as ``n x m`` arrays (columns are replicates). A batch of
sets is processed in one pass: all replicates are stacked row-wise, pushed
through the inner network ``psi``, averaged per set, concatenated with any
expert statistics, and mapped by the outer network ``phi`` to estimates.
Gradients are exact reverse-mode derivatives of the same computation.
"""

import bisect
import json
import math
import os

import numpy as np

from ._errors import CheckpointError, DomainError

CHECKPOINT_VERSION = 1

__all__ = [
    "DenseLayer",
    "MLP",
    "DeepSetsEstimator",
    "PiecewiseEstimator",
    "mlp_forward",
    "expert_stats",
    "deepsets_forward",
    "backward",
    "piecewise_estimate",
    "save_checkpoint",
    "load_checkpoint",
]


def relu(x):
    return np.maximum(x, 0.0)


class DenseLayer:
    """Affine map followed by ``relu`` or ``identity``."""

    def __init__(self, weights, bias, activation="relu"):
        self.W = np.asarray(weights, dtype=np.float64)
        self.b = np.asarray(bias, dtype=np.float64)
        if activation not in ("relu", "identity"):
            raise DomainError(f"unknown activation {activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DomainError("layer weight/bias shapes are inconsistent")
        self.activation = activation

    @classmethod
    def init(cls, fan_in, fan_out, activation, rng, dtype=np.float64):
        lim = math.sqrt(6.0 / fan_in)
        W = (2.0 * rng.uniform01((fan_out, fan_in)) - 1.0) * lim
        return cls(W.astype(dtype), np.zeros(fan_out, dtype=dtype), activation)

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]

    def forward(self, X):
        A = X @ self.W.T + self.b
        return relu(A) if self.activation == "relu" else A

    def copy(self):
        return DenseLayer(self.W.copy(), self.b.copy(), self.activation)


class MLP:
    """A chain of dense layers acting on the rows of a matrix."""

    def __init__(self, layers):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DomainError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @classmethod
    def build(cls, widths, rng, final_activation="relu", dtype=np.float64):
        """``widths = [in, h1, ..., out]``; hidden layers are relu."""
        layers = []
        for k, (i, o) in enumerate(zip(widths[:-1], widths[1:])):
            act = final_activation if k == len(widths) - 2 else "relu"
            layers.append(DenseLayer.init(i, o, act, rng, dtype))
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    def params(self):
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def forward(self, X, cache=None):
        """Rows of ``X`` through the network; stores layer inputs in ``cache``."""
        H = X
        for layer in self.layers:
            A = H @ layer.W.T + layer.b
            if cache is not None:
                cache.append((H, A))
            H = relu(A) if layer.activation == "relu" else A
        return H

    def backward(self, dOut, cache):
        """Gradients [dW1, db1, ...] and the gradient w.r.t. the input."""
        grads = []
        G = dOut
        for layer, (H, A) in zip(reversed(self.layers), reversed(cache)):
            if layer.activation == "relu":
                G = G * (A > 0)
            grads.append(G.sum(axis=0))
            grads.append(G.T @ H)
            G = G @ layer.W
        grads.reverse()
        return grads, G

    def copy(self):
        return MLP([layer.copy() for layer in self.layers])


def mlp_forward(mlp, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mlp.input_dim:
        raise DomainError(f"input has length {x.shape[-1]}, network expects {mlp.input_dim}")
    return mlp.forward(x)


# ---------------------------------------------------------------------------
# Expert statistics
# ---------------------------------------------------------------------------


def expert_stats(Z, spec):
    """Permutation-invariant summaries of an ``n x m`` data set.

    ``spec`` is ``None`` (no statistics) or a sequence of probabilities; in
    the latter case the per-dimension sample quantiles (linear
    interpolation) are returned, dimension-major.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    if not spec:
        return np.zeros(0)
    q = np.quantile(Z, np.asarray(spec, dtype=np.float64), axis=1)
    return q.T.reshape(-1)


def n_expert_stats(n, spec):
    return 0 if not spec else n * len(spec)


# ---------------------------------------------------------------------------
# DeepSets
# ---------------------------------------------------------------------------


def _as_sets(sets):
    if isinstance(sets, np.ndarray) and sets.ndim == 2:
        return [sets]
    out = []
    for s in sets:
        d = getattr(s, "data", s)
        d = np.asarray(d, dtype=np.float64)
        out.append(d[None, :] if d.ndim == 1 else d)
    return out


class DeepSetsEstimator:
    """theta_hat = shift + scale * phi([mean_i psi(Z_i), S(Z)]).

    ``output_shift`` and ``output_scale`` are fixed (not trained) and put
    the network's raw output on the scale of the parameters; by default
    they are 0 and 1.
    """

    def __init__(self, psi, phi, expert_spec=None, output_shift=None, output_scale=None,
                 param_names=None, clamp_bounds=None):
        self.psi = psi
        self.phi = phi
        self.expert_spec = list(expert_spec) if expert_spec else None
        n_s = n_expert_stats(psi.input_dim, self.expert_spec)
        if phi.input_dim != psi.output_dim + n_s:
            raise DomainError(
                f"phi expects {phi.input_dim} inputs but psi gives {psi.output_dim} + {n_s} stats"
            )
        p = phi.output_dim
        self.output_shift = np.zeros(p) if output_shift is None else np.asarray(output_shift, float)
        self.output_scale = np.ones(p) if output_scale is None else np.asarray(output_scale, float)
        self.param_names = list(param_names) if param_names else [f"theta{k + 1}" for k in range(p)]
        self.clamp_bounds = clamp_bounds

    @classmethod
    def build(cls, n, p, rng, *, q=64, psi_widths=(128, 128), phi_widths=(128,),
              expert_spec=None, output_shift=None, output_scale=None, param_names=None,
              dtype=np.float64):
        psi = MLP.build([n, *psi_widths, q], rng, final_activation="relu", dtype=dtype)
        n_s = n_expert_stats(n, expert_spec)
        phi = MLP.build([q + n_s, *phi_widths, p], rng, final_activation="identity", dtype=dtype)
        return cls(psi, phi, expert_spec, output_shift, output_scale, param_names)

    @property
    def n(self):
        return self.psi.input_dim

    @property
    def p(self):
        return self.phi.output_dim

    @property
    def q(self):
        return self.psi.output_dim

    def params(self):
        return self.psi.params() + self.phi.params()

    def set_params(self, values):
        for dst, src in zip(self.params(), values):
            dst[...] = src

    def copy(self):
        return DeepSetsEstimator(
            self.psi.copy(), self.phi.copy(), self.expert_spec, self.output_shift.copy(),
            self.output_scale.copy(), self.param_names, self.clamp_bounds,
        )

    def _check(self, sets):
        for s in sets:
            if s.shape[0] != self.n:
                raise DomainError(f"data have n={s.shape[0]}, estimator expects n={self.n}")
            if s.shape[1] < 1:
                raise DomainError("a data set needs at least one replicate")

    def _forward(self, sets, cache=None):
        sets = _as_sets(sets)
        self._check(sets)
        ms = np.array([s.shape[1] for s in sets])
        X = np.concatenate([s.T for s in sets], axis=0)
        psi_cache = [] if cache is not None else None
        H = self.psi.forward(X, psi_cache)
        offsets = np.concatenate([[0], np.cumsum(ms)[:-1]])
        T = np.add.reduceat(H, offsets, axis=0) / ms[:, None]
        if self.expert_spec:
            S = np.stack([expert_stats(s, self.expert_spec) for s in sets])
            T = np.concatenate([T, S], axis=1)
        phi_cache = [] if cache is not None else None
        out = self.phi.forward(T, phi_cache)
        if cache is not None:
            cache.update(ms=ms, psi=psi_cache, phi=phi_cache)
        return self.output_shift + self.output_scale * out

    def estimate_many(self, sets):
        """A (num_sets, p) array of estimates."""
        est = self._forward(sets)
        if self.clamp_bounds is not None:
            lo = np.array([b[0] for b in self.clamp_bounds])
            hi = np.array([b[1] for b in self.clamp_bounds])
            est = np.clip(est, lo, hi)
        return est

    def estimate(self, Z):
        """Estimate from a single data set (array or ReplicateSet)."""
        return self.estimate_many([Z])[0]

    __call__ = estimate

    def gradients(self, sets, dtheta_hat):
        """Backpropagate ``dL/dtheta_hat`` (num_sets x p) to every weight and bias."""
        cache = {}
        self._forward(sets, cache)
        return self._backward(cache, dtheta_hat)

    def _backward(self, cache, dtheta_hat):
        dout = np.asarray(dtheta_hat) * self.output_scale
        g_phi, dT = self.phi.backward(dout, cache["phi"])
        ms = cache["ms"]
        dT = dT[:, : self.q] / ms[:, None]
        dH = np.repeat(dT, ms, axis=0)
        g_psi, _ = self.psi.backward(dH, cache["psi"])
        return g_psi + g_phi


def deepsets_forward(est, rs):
    return est.estimate(rs)


def backward(est, sets, thetas, loss):
    """Batch-mean loss and its gradients with respect to every weight.

    ``loss`` must provide ``value_and_grad(theta_hat, theta)`` returning the
    per-set losses and their derivative with respect to ``theta_hat``.
    """
    cache = {}
    th = est._forward(sets, cache)
    thetas = np.asarray(thetas, dtype=np.float64).reshape(th.shape)
    vals, d = loss.value_and_grad(th, thetas)
    B = th.shape[0]
    grads = est._backward(cache, d / B)
    return float(np.mean(vals)), grads


# ---------------------------------------------------------------------------
# Piecewise estimator
# ---------------------------------------------------------------------------


class PiecewiseEstimator:
    """Routes a data set of size m to sub-estimator k where m_{k-1} < m <= m_k."""

    def __init__(self, estimators, changepoints=(), train_sizes=None):
        self.estimators = list(estimators)
        self.changepoints = [int(c) for c in changepoints]
        if len(self.estimators) != len(self.changepoints) + 1:
            raise DomainError("need exactly one more sub-estimator than changepoints")
        if any(a >= b for a, b in zip(self.changepoints, self.changepoints[1:])):
            raise DomainError("changepoints must be strictly increasing")
        first = self.estimators[0]
        for e in self.estimators[1:]:
            if (e.n, e.p) != (first.n, first.p):
                raise DomainError("sub-estimators must share (n, p)")
        self.train_sizes = list(train_sizes) if train_sizes else None

    @property
    def n(self):
        return self.estimators[0].n

    @property
    def p(self):
        return self.estimators[0].p

    @property
    def param_names(self):
        return self.estimators[0].param_names

    def route(self, m):
        """0-based index of the sub-estimator used for sample size ``m``."""
        return bisect.bisect_left(self.changepoints, int(m))

    def estimate(self, Z):
        m = getattr(Z, "m", None) or np.atleast_2d(getattr(Z, "data", Z)).shape[1]
        return self.estimators[self.route(m)].estimate(Z)

    __call__ = estimate

    def estimate_many(self, sets):
        sets = _as_sets(sets)
        out = np.empty((len(sets), self.p))
        routes = np.array([self.route(s.shape[1]) for s in sets])
        for k in np.unique(routes):
            idx = np.flatnonzero(routes == k)
            out[idx] = self.estimators[k].estimate_many([sets[i] for i in idx])
        return out


def piecewise_estimate(pw, rs):
    return pw.estimate(rs)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _layer_manifest(mlp):
    return [{"in": l.in_dim, "out": l.out_dim, "activation": l.activation} for l in mlp.layers]


def save_checkpoint(estimator, path):
    """Write a manifest and one weight blob per sub-estimator into directory ``path``."""
    pw = estimator if isinstance(estimator, PiecewiseEstimator) else PiecewiseEstimator([estimator])
    first = pw.estimators[0]
    os.makedirs(path, exist_ok=True)
    blobs = []
    subs = []
    for k, est in enumerate(pw.estimators):
        name = f"sub{k + 1}.bin"
        flat = np.concatenate([np.asarray(a, dtype="<f8").reshape(-1) for a in est.params()])
        with open(os.path.join(path, name), "wb") as fh:
            fh.write(flat.tobytes())
        blobs.append(name)
        subs.append({
            "psi": _layer_manifest(est.psi),
            "phi": _layer_manifest(est.phi),
            "output_shift": est.output_shift.tolist(),
            "output_scale": est.output_scale.tolist(),
            "n_values": int(flat.size),
        })
    manifest = {
        "version": CHECKPOINT_VERSION,
        "kind": "piecewise" if isinstance(estimator, PiecewiseEstimator) else "deepsets",
        "n": first.n,
        "p": first.p,
        "q": first.q,
        "param_names": list(first.param_names),
        "expert_spec": first.expert_spec,
        "changepoints": pw.changepoints,
        "train_sizes": pw.train_sizes,
        "blobs": blobs,
        "sub_estimators": subs,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def load_checkpoint(path, expect_n=None, expect_p=None, expect_names=None):
    """Inverse of :func:`save_checkpoint`; bit-exact on every weight.

    ``expect_n``, ``expect_p`` and ``expect_names`` guard against loading an
    estimator trained for a different model.
    """
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as fh:
            man = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint manifest {mpath}: {exc}") from exc
    if man.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {man.get('version')}")
    if expect_n is not None and man["n"] != expect_n:
        raise CheckpointError(f"checkpoint expects n={man['n']}, data have n={expect_n}")
    if expect_p is not None and man["p"] != expect_p:
        raise CheckpointError(f"checkpoint has p={man['p']}, expected p={expect_p}")
    if expect_names is not None and list(man.get("param_names") or []) != list(expect_names):
        raise CheckpointError(f"checkpoint estimates {man.get('param_names')}, expected {list(expect_names)}")
    ests = []
    for blob, sub in zip(man["blobs"], man["sub_estimators"]):
        with open(os.path.join(path, blob), "rb") as fh:
            raw = fh.read()
        if len(raw) != 8 * sub["n_values"]:
            raise CheckpointError(f"weight blob {blob} is truncated or padded")
        flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        pos = 0
        nets = []
        for key in ("psi", "phi"):
            layers = []
            for spec in sub[key]:
                nw = spec["out"] * spec["in"]
                W = flat[pos:pos + nw].reshape(spec["out"], spec["in"]).copy()
                pos += nw
                b = flat[pos:pos + spec["out"]].copy()
                pos += spec["out"]
                layers.append(DenseLayer(W, b, spec["activation"]))
            nets.append(MLP(layers))
        ests.append(DeepSetsEstimator(
            nets[0], nets[1], man.get("expert_spec"), sub["output_shift"], sub["output_scale"],
            man.get("param_names"),
        ))
        if ests[-1].n != man["n"] or ests[-1].p != man["p"]:
            raise CheckpointError("layer shapes disagree with manifest n/p")
    if man["kind"] == "deepsets":
        return ests[0]
    return PiecewiseEstimator(ests, man["changepoints"], man.get("train_sizes"))

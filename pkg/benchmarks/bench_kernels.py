"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case is run on identical inputs with both backends; the table reports
the best-of-``repeat`` wall time and the largest relative difference
between the two outputs.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from nbe import _pykernels

try:
    from nbe import _kernels
except ImportError:
    _kernels = None


def _spd(n, rng):
    x = rng.uniform(0, 8, (n, 2))
    d = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    return np.exp(-d / 3.0) + 1e-6 * np.eye(n)


def cases(rng):
    x = rng.uniform(1e-3, 20.0, 4096)
    p = rng.uniform(1e-10, 1 - 1e-10, 4096)
    y = rng.normal(size=4096)
    A = _spd(64, rng)
    L = np.linalg.cholesky(A)
    B = rng.normal(size=(64, 256))
    return {
        "bessel_k(nu=1.5)": lambda k: k.bessel_k(1.5, x),
        "bessel_k(nu=0.3)": lambda k: k.bessel_k(0.3, x),
        "gamma_pq": lambda k: k.gamma_pq(np.full_like(x, 2.5), x),
        "gamma_quantile": lambda k: k.gamma_quantile(np.full_like(p, 0.7), p, 1.0 - p),
        "norm_quantile": lambda k: k.norm_quantile(p),
        "delta_laplace_quantile": lambda k: k.delta_laplace_quantile(p, 0.0, 1.0, 1.4),
        "gauss_to_delta_laplace": lambda k: k.gauss_to_delta_laplace(y, 0.2, 1.1, 0.8),
        "cholesky(64)": lambda k: k.cholesky(A),
        "forward_solve(64x256)": lambda k: k.forward_solve(L, B),
    }


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=3)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    results = []
    print(f"{'kernel':<26}{'python ms':>12}{'cython ms':>12}{'speed-up':>10}{'max rel diff':>14}")
    for name, fn in cases(rng).items():
        t = {}
        for label, mod in (("python", _pykernels), ("cython", _kernels)):
            t[label] = min(timeit.repeat(lambda: fn(mod), number=args.number, repeat=args.repeat)) / args.number
        diff = _rel(fn(_kernels), fn(_pykernels))
        results.append({"kernel": name, "python_s": t["python"], "cython_s": t["cython"],
                        "speedup": t["python"] / t["cython"], "max_rel_diff": diff})
        print(f"{name:<26}{1e3 * t['python']:>12.3f}{1e3 * t['cython']:>12.3f}"
              f"{t['python'] / t['cython']:>9.1f}x{diff:>14.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())

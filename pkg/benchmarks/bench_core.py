"""Compare the compiled core with the numpy fallback.

Times the pairwise-distance kernels and the ADMM inner loop on both
backends, and checks that they agree.

    python benchmarks/bench_core.py --n 200 400 800 --repeat 5
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from cfdbal._backend import get_backend


def _admm_inputs(n: int, seed: int = 0):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, 10))
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    P = np.exp(-d2 / np.median(d2)) / n**2
    A = np.zeros((2, n))
    A[0, : n // 2] = 1
    A[1, n // 2:] = 1
    sigma, ra, rb = 1e-6, 10.0, 0.1
    Minv = np.linalg.inv(P + (sigma + rb) * np.eye(n) + ra * A.T @ A)
    Minv = 0.5 * (Minv + Minv.T)  # the compiled loop reads one triangle
    args = dict(Minv=Minv, A=A, q=-P.sum(1) / n, lA=A.sum(1), uA=A.sum(1),
                lB=np.zeros(n), uB=np.full(n, np.inf), rho_a=ra, rho_b=rb,
                sigma=sigma, alpha=1.6)
    return args


def _fresh_state(n: int) -> dict:
    return dict(x=np.ones(n), zA=np.zeros(2), zB=np.ones(n), yA=np.zeros(2),
                yB=np.zeros(n), dyA=np.zeros(2), dyB=np.zeros(n))


def bench(n: int, repeat: int, iters: int) -> list[tuple]:
    py = get_backend("python")
    try:
        cc = get_backend("compiled")
    except ImportError:
        cc = None
    X = np.random.default_rng(1).normal(size=(n, 10))
    rows = []
    for name in ("pairwise_sqeuclidean", "pairwise_cityblock"):
        t_py = min(timeit.repeat(lambda: getattr(py, name)(X), number=1, repeat=repeat))
        t_cc = diff = float("nan")
        if cc is not None:
            t_cc = min(timeit.repeat(lambda: getattr(cc, name)(X), number=1, repeat=repeat))
            diff = float(np.abs(getattr(cc, name)(X) - getattr(py, name)(X)).max())
        rows.append((name, n, t_py, t_cc, diff))
    args = _admm_inputs(n)
    results = {}

    def run(mod):
        s = _fresh_state(n)
        mod.admm_run(**args, **s, n_iter=iters)
        results[mod.BACKEND] = s["x"]

    t_py = min(timeit.repeat(lambda: run(py), number=1, repeat=repeat))
    t_cc = diff = float("nan")
    if cc is not None:
        t_cc = min(timeit.repeat(lambda: run(cc), number=1, repeat=repeat))
        diff = float(np.abs(results["compiled"] - results["python"]).max())
    rows.append((f"admm_run x{iters}", n, t_py, t_cc, diff))
    return rows


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[200, 400, 800])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--iters", type=int, default=200, help="ADMM iterations per call")
    args = p.parse_args(argv)
    print(f"{'kernel':<22}{'n':>6}{'python ms':>12}{'compiled ms':>13}{'speedup':>9}{'max diff':>11}")
    for n in args.n:
        for name, nn, t_py, t_cc, diff in bench(n, args.repeat, args.iters):
            print(f"{name:<22}{nn:>6}{1e3 * t_py:>12.2f}{1e3 * t_cc:>13.2f}"
                  f"{t_py / t_cc:>9.1f}{diff:>11.1e}")


if __name__ == "__main__":
    main()

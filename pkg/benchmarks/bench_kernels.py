"""Compare the numba and numpy variants of the inner kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run once to trigger compilation, then timed; the two
variants must agree before timings are reported.
"""

import argparse
import time

import numpy as np

from gsfcalc import kernels


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def case_rk4(rng):
    B, S, n, c = 20, 1000, 2, 2
    A = rng.normal(size=(n, n)) * 0.3
    M = np.broadcast_to(A, (B, 2 * S + 1, n, n)).copy()
    Y0 = rng.normal(size=(B, n, c))
    h = 1e-3
    return (lambda: kernels.rk4_linear_numba(M, Y0, h),
            lambda: kernels.rk4_linear_numpy(M, Y0, h))


def case_christoffel(rng):
    m, d = 20000, 3
    L = rng.normal(size=(m, d, d)) * 0.2
    g = np.eye(d) + L @ np.swapaxes(L, 1, 2)
    dg = rng.normal(size=(m, d, d, d))
    dg = 0.5 * (dg + np.swapaxes(dg, 1, 2))
    return (lambda: kernels.christoffel_symbols_numba(g, dg),
            lambda: kernels.christoffel_symbols_numpy(g, dg))


def case_hermite(rng):
    t = np.linspace(0.0, 7.0, 7001)
    J = np.sin(t)[:, None, None] * np.ones((1, 1, 1))
    D = np.cos(t)[:, None, None] * np.ones((1, 1, 1))
    return (lambda: kernels.hermite_det_roots_numba(t, J, D, 0.01),
            lambda: kernels.hermite_det_roots_numpy(t, J, D, 0.01))


CASES = {"rk4_linear": case_rk4, "christoffel": case_christoffel, "hermite_roots": case_hermite}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, make in CASES.items():
        fast, slow = make(rng)
        a, b = fast(), slow()
        if not np.allclose(a, b, rtol=1e-10, atol=1e-12):
            raise SystemExit(f"{name}: numba and numpy variants disagree")
        tf, ts = _best(fast, args.repeat), _best(slow, args.repeat)
        print(f"{name:<16}{tf:>12.4f}{ts:>12.4f}{ts / tf:>10.1f}")


if __name__ == "__main__":
    main()

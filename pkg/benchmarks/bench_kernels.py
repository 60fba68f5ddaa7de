"""Time each inner-loop kernel on its numba and numpy paths.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Sizes match the reference configuration (N = 128, 11 delay rows,
451-atom dictionary).  The first numba call compiles, so it is excluded.
"""

import argparse
import timeit

import numpy as np

from afdm_isac import _kernels as K


def cases(rng):
    N, rows, atoms = 128, 11, 451
    c = lambda *s: rng.standard_normal(s) + 1j * rng.standard_normal(s)
    G = rng.standard_normal((3, 3))
    ells = np.arange(rows)
    return {
        "column_inner_real": (c(N, atoms), c(N, atoms)),
        "echo_time_domain": (c(N + 12), 12, np.array([1, 2, 5]), np.array([-0.002, 0.005, 0.004]),
                             c(3)),
        "kappa_sweep": (G @ G.T, rng.standard_normal(3), np.zeros(3), 0.05, True),
        "delta_update": (rng.exponential(size=atoms), 1e-4, 1e-12),
        "lagged_gram": (c(N), ells, c(rows, 2 * N - 1)),
        "lagged_quadratic": (c(N), ells, c(N, N)),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy us':>12}{'numba us':>12}{'speedup':>9}")
    for name, a in cases(rng).items():
        fn_np, fn_nb = getattr(K, name + "_numpy"), getattr(K, name + "_numba")
        fn_nb(*a)
        t_np = min(timeit.repeat(lambda: fn_np(*a), number=1, repeat=args.repeat)) * 1e6
        t_nb = min(timeit.repeat(lambda: fn_nb(*a), number=1, repeat=args.repeat)) * 1e6
        print(f"{name:<20}{t_np:>12.1f}{t_nb:>12.1f}{t_np / t_nb:>9.1f}")


if __name__ == "__main__":
    main()

"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--units 5000] [--periods 10] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from staggerdid import _kernels


def unbalanced_panel(rng, n_units, n_periods, drop=0.2):
    unit = np.repeat(np.arange(n_units), n_periods)
    pos = np.tile(np.arange(n_periods), n_units)
    keep = rng.random(unit.size) >= drop
    return unit[keep], pos[keep]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--units", type=int, default=5000)
    ap.add_argument("--periods", type=int, default=10)
    ap.add_argument("--columns", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    unit, pos = unbalanced_panel(rng, args.units, args.periods)
    x = rng.normal(size=(unit.size, args.columns))
    ok = rng.random(unit.size) > 0.05
    n_u, n_t = args.units, args.periods

    cases = {
        "demean_two_way": (
            lambda: _kernels._demean_two_way_np(x, unit, pos, n_u, n_t, 1e-10, 10_000),
            lambda: _kernels._demean_two_way_nb(x, unit, pos, n_u, n_t, 1e-10, 10_000),
        ),
        "group_sum": (
            lambda: _kernels._group_sum_np(x, unit, n_u),
            lambda: _kernels._group_sum_nb(x, unit, n_u),
        ),
        "longest_runs": (
            lambda: _kernels._longest_runs_np(unit, pos, ok, n_u),
            lambda: _kernels._longest_runs_nb(unit, pos, ok, n_u),
        ),
    }
    print(f"{unit.size} rows, {n_u} units, {n_t} periods, {args.columns} columns; best of {args.repeat}")
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, (np_fn, nb_fn) in cases.items():
        nb_fn()  # compile outside the timing
        t_np = min(timeit.repeat(np_fn, number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(nb_fn, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()

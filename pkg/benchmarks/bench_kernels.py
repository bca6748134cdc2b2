"""Time the numba and numpy paths of every kernel on workloads shaped like real use.

    python3 benchmarks/bench_kernels.py [--scale 1.0] [--repeat 5]

Both paths are called once first (this also triggers JIT compilation) and
their outputs compared; the table reports the best of ``--repeat`` runs.
"""

import argparse
import time

import numpy as np

from mintrec import kernels


def _groups(rng, n_groups, mean_size):
    sizes = rng.poisson(mean_size, size=n_groups) + 1
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


def workloads(scale, seed=0):
    rng = np.random.default_rng(seed)
    m = int(4000 * scale)

    ptr = _groups(rng, m, 12)
    n = int(ptr[-1])
    values = rng.integers(0, 300, size=n)
    times = np.sort(rng.integers(0, 10**8, size=n))
    vals = rng.random(n)
    yield "running_distinct", (ptr, values, 300), {}
    yield "value_at_time", (ptr, times, vals, 5 * 10**7), {}

    # negative sampling: 16k draws against per-seeker positive lists
    n_slots = int(3800 * scale)
    pos_ptr = _groups(rng, m, 5)
    pos = np.concatenate([np.sort(rng.choice(n_slots, size=pos_ptr[i + 1] - pos_ptr[i], replace=False))
                          for i in range(m)])
    rows = rng.integers(0, m, size=int(16000 * scale))
    free = n_slots - np.diff(pos_ptr)[rows]
    r = (rng.random(len(rows)) * free).astype(np.int64)
    yield "nth_complement", (rows, r, pos_ptr, pos), {}

    scores = np.round(rng.normal(size=(int(2000 * scale), 3800)), 3)
    cols = rng.integers(0, scores.shape[1], size=scores.shape[0])
    yield "rank_of_target", (scores, cols), {}


def best_time(fn, args, kwargs, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not kernels.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, a, kw in workloads(args.scale):
        fn = getattr(kernels, name)
        ref = fn(*a, backend="numpy", **kw)
        got = fn(*a, backend="numba", **kw)
        if not np.array_equal(ref, got):
            raise SystemExit(f"{name}: backends disagree")
        t_np = best_time(fn, a, dict(kw, backend="numpy"), args.repeat)
        t_nb = best_time(fn, a, dict(kw, backend="numba"), args.repeat)
        print(f"{name:<18}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the pure-Python reference versions.

    python benchmarks/bench_kernels.py [--repeat N]

Both backends get identical inputs; outputs are checked for bit equality
before timing.
"""

import argparse
import timeit

import numpy as np

from edgesched import _pykernels

try:
    from edgesched import _ckernels
except ImportError:
    _ckernels = None


def adam_case(n):
    rng = np.random.default_rng(0)
    p, g = rng.normal(size=n), rng.normal(size=n)
    m, v = np.zeros(n), np.zeros(n)

    def run(mod):
        mod.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
    return run, lambda: (p.copy(), m.copy(), v.copy())


def polyak_case(n):
    rng = np.random.default_rng(1)
    t, s = rng.normal(size=n), rng.normal(size=n)

    def run(mod):
        mod.polyak_update(t, s, 0.005)
    return run, lambda: (t.copy(),)


def schedule_case(n_batches, per_batch=8, groups=6):
    rng = np.random.default_rng(2)
    batch_group = rng.integers(0, groups, n_batches).astype(np.int64)
    batch_tm = rng.integers(5_000, 60_000, n_batches).astype(np.int64)
    group_mc = rng.integers(1, 9, groups).astype(np.int64)
    req_batch = np.repeat(np.arange(n_batches, dtype=np.int64), per_batch)
    arrivals = rng.integers(0, 100_000, len(req_batch)).astype(np.int64)
    slo = rng.uniform(50_000, 150_000, len(req_batch))
    out = {}

    def run(mod):
        out["r"] = mod.slot_schedule(100_000, arrivals, req_batch, batch_group, batch_tm,
                                     group_mc, 3100, slo)
    return run, lambda: tuple(np.asarray(a).copy() for a in out["r"])


CASES = [
    ("adam_update n=20k", lambda: adam_case(20_000), 200),
    ("polyak_update n=20k", lambda: polyak_case(20_000), 500),
    ("slot_schedule 48 batches", lambda: schedule_case(48), 500),
    ("slot_schedule 512 batches", lambda: schedule_case(512), 50),
]


def check_equal(make):
    results = []
    for mod in (_pykernels, _ckernels):
        run, snapshot = make()
        run(mod)
        results.append(snapshot())
    return all(np.array_equal(a, b) for a, b in zip(*results))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e .` first")
    print(f"{'kernel':28s} {'python us':>11s} {'cython us':>11s} {'speedup':>8s}  equal")
    for name, make, number in CASES:
        equal = check_equal(make)
        times = {}
        for label, mod in (("py", _pykernels), ("c", _ckernels)):
            run, _ = make()
            best = min(timeit.repeat(lambda: run(mod), number=number, repeat=args.repeat))
            times[label] = best / number * 1e6
        print(f"{name:28s} {times['py']:11.2f} {times['c']:11.2f} "
              f"{times['py'] / times['c']:7.1f}x  {equal}")


if __name__ == "__main__":
    main()

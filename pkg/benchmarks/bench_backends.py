"""Compiled core versus numpy fallback on the hot kernels.

Both cores must agree bit for bit; the script checks that before timing.

    python benchmarks/bench_backends.py [--n 4000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from kinetic_mv import _backend

THETA5 = (0.5, 0.233, 0.267, 0.333, 0.3)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernels(core, n):
    ids = np.arange(n, dtype=np.int64)
    g = np.random.default_rng(0)
    x0 = g.normal(size=n)
    y0 = g.normal(size=n)
    vals = g.normal(size=n) * 10.0 ** g.integers(-8, 8, size=n)

    def em_steps(steps=100):
        x, y = x0.copy(), y0.copy()
        for s in range(steps):
            core.fhn_em_step(x, y, ids, THETA5, 0.2 * np.sqrt(1e-3), 1e-3, 7, s, 1)
        return x, y

    return {
        "normals": lambda: core.normals(7, ids, 3, 2, 0),
        "exact_sum": lambda: core.exact_sum(vals),
        "moment_table(8)": lambda: core.moment_table(x0, y0, 8),
        "fhn_em_step x100": em_steps,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = _backend.available()
    if "compiled" not in names:
        print("compiled core not built; only the fallback is available")
    cores = {name: _backend.get(name) for name in names}
    results = {name: kernels(core, args.n) for name, core in cores.items()}
    if len(cores) == 2:
        for key in results["python"]:
            a = results["python"][key]()
            b = results["compiled"][key]()
            same = all(np.array_equal(u, v) for u, v in zip(np.atleast_1d(a) if not isinstance(a, tuple) else a,
                                                            np.atleast_1d(b) if not isinstance(b, tuple) else b))
            if not same:
                raise SystemExit(f"backends disagree on {key}")
        print("bit-identical: yes")
    print(f"N = {args.n}, best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{name:>14}" for name in cores) + ("      speedup" if len(cores) == 2 else ""))
    for key in results[names[0]]:
        row = {name: best_of(results[name][key], args.repeat) for name in cores}
        line = f"{key:<20}" + "".join(f"{row[name] * 1e3:>11.3f} ms" for name in cores)
        if len(cores) == 2:
            line += f"{row['python'] / row['compiled']:>12.1f}x"
        print(line)


if __name__ == "__main__":
    main()

"""Time each accel kernel under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--scale 1.0] [--repeat 5]

Inputs are seeded and shared by both backends. The numba kernels are
called once before timing so compilation is not counted. Each row reports
the best of ``--repeat`` runs and whether the two backends agree.
"""

import argparse
import time

import numpy as np

from usemetrics import accel


def random_csr(rng, n, density):
    a = (rng.random((n, n)) < density).astype(np.float64)
    np.fill_diagonal(a, 0)
    rows, cols = np.nonzero(a)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))]).astype(np.int64)
    w = np.ones(len(cols))
    out = np.repeat(a.sum(axis=1), np.diff(indptr))
    return indptr, cols.astype(np.int64), w / np.where(out > 0, out, 1)


def cases(scale, rng):
    n_ev = int(1_000_000 * scale)
    groups = max(1, int(20_000 * scale))
    group = rng.integers(0, groups, n_ev).astype(np.int64)
    ts = np.sort(rng.integers(0, 365 * 86400, n_ev)).astype(np.int64)
    yield "sessionize", (group, ts, np.int64(1800), np.int64(86400), np.int64(groups))

    session = np.sort(rng.integers(0, max(1, n_ev // 5), n_ev)).astype(np.int64)
    key = rng.integers(0, 10_000, n_ev).astype(np.int64)
    yield "consecutive_pairs", (session, key, key % 20, ts, np.int64(10), False)

    n = max(10, int(300 * scale ** 0.5))
    indptr, indices, w = random_csr(rng, n, 0.05)
    yield "all_pairs_bfs", (indptr, indices, np.int64(n))

    n = max(10, int(2000 * scale ** 0.5))
    indptr, indices, w = random_csr(rng, n, 0.01)
    yield "pagerank", (indptr, indices, w, np.int64(n), 0.85, 1e-12, np.int64(10_000))

    x = rng.normal(size=(max(10, int(200_000 * scale)), 2))
    yield "kmeans_assign", (x, rng.normal(size=(8, 2)))


def best_time(fn, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and np.allclose(a, b, rtol=1e-9, atol=1e-12)
    return abs(a - b) <= 1e-9 * max(1.0, abs(a)) if isinstance(a, float) else a == b


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="input size multiplier")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18} {'numba s':>10} {'numpy s':>10} {'speedup':>8}  agree")
    for name, call_args in cases(args.scale, rng):
        nb, np_ = accel.kernel(name, "numba"), accel.kernel(name, "numpy")
        nb(*call_args)  # compile
        t_nb, out_nb = best_time(nb, call_args, args.repeat)
        t_np, out_np = best_time(np_, call_args, args.repeat)
        if name == "pagerank":  # iteration counts may differ by one step
            ok = np.allclose(out_nb[0], out_np[0], atol=1e-12)
        else:
            ok = agree(out_nb, out_np)
        print(f"{name:<18} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}x  {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()

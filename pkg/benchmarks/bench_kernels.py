"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly, so the comparison does not depend on
which one ``ticketprune.kernels`` selected.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from ticketprune import _kernels_py

try:
    from ticketprune import _kernels
except ImportError:
    _kernels = None


def cases(gen: np.random.Generator):
    k = 200_000
    w, u = gen.uniform(-1, 1, k), gen.uniform(-1, 1, k)
    yield "select_candidate k=2e5", lambda m: m.select_candidate(w, u, 0.3, 0.05, 1.0)

    nnz, n_rows, n_cols = 50_000, 5_000, 200_000
    rows = gen.integers(0, n_rows, nnz).astype(np.int64)
    cols = gen.integers(0, n_cols, nnz).astype(np.int64)
    vals = gen.uniform(-1, 1, nnz)
    x_t = gen.uniform(-1, 1, (n_cols, 64))
    yield "coo_matmul nnz=5e4 batch=64", lambda m: m.coo_matmul(rows, cols, vals, x_t, n_rows)

    shapes = np.array([[3, 2], [1, 3]], dtype=np.int64)
    flat = np.ascontiguousarray(gen.uniform(-1, 1, 9))
    pts = np.ascontiguousarray(gen.uniform(-1, 1, (200, 2)))
    tgt = np.ascontiguousarray(pts[:, :1] * 0.4)
    yield "brute_force_sup 9 weights x 200 pts", lambda m: m.brute_force_sup(shapes, flat, pts, tgt)

    shapes = np.array([[4, 3], [1, 4]], dtype=np.int64)
    flat = np.ascontiguousarray(gen.uniform(-1, 1, 16))
    pts = np.ascontiguousarray(gen.uniform(-1, 1, (100, 3)))
    tgt = np.ascontiguousarray(pts[:, :1] * 0.4)
    yield "brute_force_sup 16 weights x 100 pts", lambda m: m.brute_force_sup(shapes, flat, pts, tgt)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    backends = [("python", _kernels_py)] + ([("cython", _kernels)] if _kernels is not None else [])
    if _kernels is None:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':40s}" + "".join(f"{name:>12s}" for name, _ in backends) + f"{'speedup':>10s}")
    for label, fn in cases(np.random.default_rng(args.seed)):
        best = []
        for _, mod in backends:
            number = 1
            best.append(min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number)
        speed = f"{best[0] / best[1]:9.1f}x" if len(best) == 2 else ""
        print(f"{label:40s}" + "".join(f"{t * 1e3:10.2f}ms" for t in best) + speed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

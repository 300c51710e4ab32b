"""Benchmark the partial-attention kernel backends against each other.

Runs the same chunk-attention workload through the pure-numpy kernel
and, when built, the compiled extension, reporting per-call time and
relative throughput. Shapes default to decode-like sizes (few queries,
long KV chunks).

Usage:
    python benchmarks/kernel_speed.py [--n 4096] [--n-q 8] [--heads 8]
                                      [--kv-heads 2] [--d 128] [--repeat 30]
"""
from __future__ import annotations

import argparse
import math
import time

import numpy as np

from prefixdec import _kernels_py

try:
    from prefixdec import _kernels
except ImportError:
    _kernels = None


def make_inputs(n_q, h_q, h_kv, d, n, seed):
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(d)
    q = rng.standard_normal((n_q, h_q, d)) * scale
    k = rng.standard_normal((n, h_kv, d)) * scale
    v = rng.standard_normal((n, h_kv, d)) * scale
    visible = np.full(n_q, n, dtype=np.int64)
    return q, k, v, visible, scale


def run_python(q, k, v, visible, scale):
    return _kernels_py.pac_kernel(q, k, v, visible, scale)


def run_compiled(q, k, v, visible, scale):
    n_q, h_q, d = q.shape
    out = np.empty((n_q, h_q, d), dtype=q.dtype)
    m = np.empty((n_q, h_q), dtype=q.dtype)
    s = np.empty((n_q, h_q), dtype=q.dtype)
    _kernels.pac_kernel(q, k, v, visible, scale, out, m, s)
    return out, m, s


def bench(fn, args, repeat):
    fn(*args)  # warm up
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=4096, help="KV chunk length")
    parser.add_argument("--n-q", type=int, default=8, help="query count")
    parser.add_argument("--heads", type=int, default=8, help="query heads")
    parser.add_argument("--kv-heads", type=int, default=2, help="KV heads")
    parser.add_argument("--d", type=int, default=128, help="head dimension")
    parser.add_argument("--repeat", type=int, default=30, help="timing repetitions")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    q, k, v, visible, scale = make_inputs(
        args.n_q, args.heads, args.kv_heads, args.d, args.n, args.seed
    )
    inputs = (q, k, v, visible, scale)
    rows = args.n_q * args.heads * args.n

    t_py = bench(run_python, inputs, args.repeat)
    print(f"shape: n_q={args.n_q} h_q={args.heads} h_kv={args.kv_heads} "
          f"d={args.d} n={args.n}")
    print(f"python   : {t_py * 1e3:9.3f} ms/call  "
          f"{rows / t_py / 1e6:8.1f} M score-rows/s")

    if _kernels is None:
        print("compiled : not built (pip install -e . compiles it)")
        return 0

    t_c = bench(run_compiled, inputs, args.repeat)
    print(f"compiled : {t_c * 1e3:9.3f} ms/call  "
          f"{rows / t_c / 1e6:8.1f} M score-rows/s")
    print(f"speedup  : {t_py / t_c:9.2f}x")

    out_p, m_p, s_p = run_python(*inputs)
    out_c, m_c, s_c = run_compiled(*inputs)
    worst = max(
        float(np.max(np.abs(out_p - out_c))),
        float(np.max(np.abs(m_p - m_c))),
        float(np.max(np.abs(s_p - s_c))),
    )
    print(f"backend max abs diff: {worst:.3e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

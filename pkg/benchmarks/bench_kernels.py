"""Forward/backward timing of the compiled and numpy RNN kernels.

    python benchmarks/bench_kernels.py [--batch 32] [--length 200] [--skills 110] [--hidden 64]
"""

import argparse
import timeit

import numpy as np

from dktgen import kernels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--length", type=int, default=200)
    ap.add_argument("--skills", type=int, default=110)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=20)
    a = ap.parse_args()

    rng = np.random.default_rng(0)
    S, H = a.skills, a.hidden
    args = (
        rng.normal(0, 0.1, (H, 2 * S)), rng.normal(0, 0.1, (H, H)), rng.normal(0, 0.1, (S, H)),
        np.zeros(H), np.zeros(S), np.zeros(H),
        rng.integers(0, 2 * S, (a.batch, a.length)), rng.integers(0, S, (a.batch, a.length)),
    )
    dlogits = rng.normal(size=(a.batch, a.length))
    print(f"B={a.batch} L={a.length} S={S} H={H}; best of {a.repeat}, milliseconds")
    print(f"{'backend':10s} {'forward':>9s} {'backward':>9s} {'total':>9s}")
    results = {}
    for name, mod in kernels.available_backends().items():
        hs, _ = mod.forward(*args)
        fwd = min(timeit.repeat(lambda: mod.forward(*args), number=1, repeat=a.repeat)) * 1e3
        bwd = min(timeit.repeat(lambda: mod.backward(*args, hs, dlogits), number=1, repeat=a.repeat)) * 1e3
        results[name] = fwd + bwd
        print(f"{name:10s} {fwd:9.2f} {bwd:9.2f} {fwd + bwd:9.2f}")
    if len(results) == 2:
        print(f"speedup (python / compiled): {results['python'] / results['compiled']:.2f}x")
    print(f"active backend: {kernels.BACKEND}")


if __name__ == "__main__":
    main()

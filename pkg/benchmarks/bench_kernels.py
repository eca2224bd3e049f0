"""Compare the compiled and numpy kernel backends on warp and feature matching.

    python benchmarks/bench_kernels.py [--size 256] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from covos.kernels import backends


def warp_inputs(rng, size, channels=3):
    H = W = size
    refs = rng.random((2, H, W, channels))
    vec = lambda: rng.integers(-64, 65, size=(H, W)).astype(np.int32)
    fwd_slot = np.zeros((H, W), dtype=np.int32)
    bwd_slot = np.where(rng.random((H, W)) < 0.5, 1, -1).astype(np.int32)
    return refs, fwd_slot, vec(), vec(), bwd_slot, vec(), vec()


def match_inputs(rng, size, sites=400, channels=8, objects=3):
    H = W = size // 4
    n = min(sites, H * W)
    flat = rng.choice(H * W, size=n, replace=False)
    p = rng.random((H, W, objects))
    p /= p.sum(axis=2, keepdims=True)
    return (flat // W).astype(np.int64), (flat % W).astype(np.int64), \
        rng.random((H, W, channels)), rng.random((H, W, channels)), p


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    w_in = warp_inputs(rng, args.size)
    m_in = match_inputs(rng, args.size)
    cases = [
        ("warp nearest", lambda b: b.warp(*w_in, 4, False)),
        ("warp bilinear", lambda b: b.warp(*w_in, 4, True)),
        ("feature_match full", lambda b: b.feature_match(*m_in, -1)),
        ("feature_match w=4", lambda b: b.feature_match(*m_in, 4)),
    ]
    impls = backends()
    print(f"{'kernel':<20}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for label, fn in cases:
        times = {name: min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1000
                 for name, b in impls.items()}
        row = f"{label:<20}" + "".join(f"{t:10.2f}ms" for t in times.values())
        if "cython" in times:
            row += f"{times['numpy'] / times['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()

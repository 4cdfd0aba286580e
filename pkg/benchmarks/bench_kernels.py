#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times im2col/col2im on representative layer shapes of the canonical model
(batch 8, 4-second clips) and a full conv2d forward+backward, then a whole
training step on each backend. Run after building the extension:

    python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from disfluent import kernels
from disfluent.kernels import numpy_backend

try:
    from disfluent.kernels import _speedups
except ImportError:
    _speedups = None

# (label, C, N, H, W, kh, kw, sh, sw, ph, pw) for the costliest conv layers
LAYER_SHAPES = [
    ("stem 7x7/64",   1, 8, 256, 448, 7, 7, 1, 1, 3, 3),
    ("block1 conv1",  64, 8, 256, 448, 3, 3, 2, 2, 1, 1),
    ("block1 conv3",  64, 8, 128, 224, 3, 3, 1, 1, 1, 1),
    ("block2 conv3", 128, 8, 64, 112, 3, 3, 1, 1, 1, 1),
    ("block3 conv3", 128, 8, 64, 56, 3, 3, 1, 1, 1, 1),
]


def timeit(fn, repeats):
    fn()
    best = float("inf")
    for _ in range(repeats):
        t = time.time()
        fn()
        best = min(best, time.time() - t)
    return best


def bench_kernels(repeats):
    rows = []
    for label, c, n, h, w, kh, kw, sh, sw, ph, pw in LAYER_SHAPES:
        rng = np.random.default_rng(0)
        x = rng.standard_normal((c, n, h, w)).astype(np.float32)
        cols_np = numpy_backend.im2col_cnhw(x, kh, kw, sh, sw, ph, pw)
        backends = [("numpy", numpy_backend)]
        if _speedups is not None:
            backends.append(("cython", _speedups))
        entry = {"label": label, "gb": 2 * (x.nbytes + cols_np.nbytes) / 1e9}
        for name, mod in backends:
            t_i = timeit(lambda m=mod: m.im2col_cnhw(x, kh, kw, sh, sw, ph, pw),
                         repeats)
            t_c = timeit(lambda m=mod: m.col2im_cnhw(cols_np, c, n, h, w,
                                                     kh, kw, sh, sw, ph, pw),
                         repeats)
            entry[name] = (t_i, t_c)
        rows.append(entry)

    print(f"{'layer':15s} {'im2col np':>10s} {'im2col cy':>10s} "
          f"{'col2im np':>10s} {'col2im cy':>10s} {'speedup':>8s}")
    for e in rows:
        np_i, np_c = e["numpy"]
        if "cython" in e:
            cy_i, cy_c = e["cython"]
            speed = (np_i + np_c) / (cy_i + cy_c)
            print(f"{e['label']:15s} {np_i*1e3:9.1f}ms {cy_i*1e3:9.1f}ms "
                  f"{np_c*1e3:9.1f}ms {cy_c*1e3:9.1f}ms {speed:7.2f}x")
        else:
            print(f"{e['label']:15s} {np_i*1e3:9.1f}ms {'-':>10s} "
                  f"{np_c*1e3:9.1f}ms {'-':>10s} {'-':>8s}")


def bench_training_step(repeats):
    import os
    from disfluent import nn
    from disfluent.model import ModelConfig, build_model
    from disfluent.optim import RmsProp

    print(f"\nactive kernel backend: {kernels.BACKEND}")
    model = build_model(ModelConfig(), rng_seed=0)
    opt = RmsProp(model.params)
    rng = np.random.default_rng(1)
    feats = rng.standard_normal((8, 1, 257, 398)).astype(np.float32)
    labels = np.array([0, 1, 0, 1, 1, 0, 1, 0])

    def step():
        opt.zero_grad()
        logits = model.forward_logits(feats, "train", rng)
        loss = nn.softmax_cross_entropy(logits, labels)
        loss.backward()
        opt.step()

    best = timeit(step, repeats)
    print(f"full training step (batch 8, canonical clips): {best:.2f}s")
    print("set DISFLUENT_KERNELS=numpy and rerun to compare backends")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="fewer repeats, skip the full-step benchmark")
    args = parser.parse_args()
    repeats = 1 if args.quick else 3
    bench_kernels(repeats)
    if not args.quick:
        bench_training_step(repeats)


if __name__ == "__main__":
    main()

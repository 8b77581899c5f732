#!/usr/bin/env python3
"""Benchmark the compiled kernel extension against the numpy fallback.

Times the four spatial hot kernels (3x3 convolution and per-location
filtering, forward and backward) at a few sizes, then an end-to-end
training step with each backend active. Run from the repo root:

    python benchmarks/bench_kernels.py [--sizes 16,32,64] [--batch 8]
"""

import argparse
import time

import numpy as np

from stegalift import align, backend
from stegalift import config as config_mod
from stegalift import detector, hider, trainer
from stegalift.tensor import Tensor, gradient_of


def _time(fn, *args, repeat=20):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def bench_kernels(sizes, batch, channels):
    rng = np.random.default_rng(0)
    names = ("conv3x3_fwd", "conv3x3_bwd", "filter3x3_fwd", "filter3x3_bwd")
    print("%-6s %-16s" % ("size", "kernel"), end="")
    for bk in backend.available_backends():
        print(" %12s" % bk, end="")
    print()
    for size in sizes:
        x = rng.standard_normal((batch, channels, size, size))
        w = rng.standard_normal((channels, channels, 3, 3))
        gy = rng.standard_normal((batch, channels, size, size))
        wts = rng.standard_normal((batch, 9, size, size))
        arg_map = {
            "conv3x3_fwd": (x, w),
            "conv3x3_bwd": (x, w, gy),
            "filter3x3_fwd": (x, wts),
            "filter3x3_bwd": (x, wts, gy),
        }
        for name in names:
            print("%-6d %-16s" % (size, name), end="")
            for bk in backend.available_backends():
                mod = backend.get_kernels(bk)
                ms = _time(getattr(mod, name), *arg_map[name])
                print(" %10.3fms" % ms, end="")
            print()


def bench_training_step(batch):
    cfg = config_mod.RunConfig(batch=batch).validate()
    rng = np.random.default_rng(0)
    secrets = rng.uniform(0.1, 0.9, (batch, 1, cfg.image_size, cfg.image_size))
    covers = rng.uniform(0.1, 0.9, (batch, 1, cfg.image_size, cfg.image_size))
    labels = np.arange(batch) % 2
    acfg = align.preset("fa_l2+aa_sda")
    print("\nfull training step (stage 3, %dx%d, batch %d):"
          % (cfg.image_size, cfg.image_size, batch))
    for bk in backend.available_backends():
        backend.set_backend(bk)
        det = detector.init_detector(np.random.default_rng(0), cfg.detector_config())
        hcfg = cfg.hider_config()
        hp = hider.HiderParams.from_config(hcfg)

        def step():
            losses = trainer.compute_stage_losses(
                3, Tensor(secrets), Tensor(covers), labels, det, hcfg, hp,
                acfg, mu_value=0.5)
            params = trainer._trainable_params(det, det.names_m(), hp)
            gradient_of(losses["L_total"], list(params.values()))

        print("  %-8s %8.1f ms" % (bk, _time(step, repeat=5)))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="16,32,64")
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--channels", type=int, default=16)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    print("available backends: %s (active: %s)"
          % (", ".join(backend.available_backends()), backend.active_backend()))
    bench_kernels(sizes, args.batch, args.channels)
    bench_training_step(args.batch)


if __name__ == "__main__":
    main()

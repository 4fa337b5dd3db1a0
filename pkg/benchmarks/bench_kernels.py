"""Benchmark the compiled kernels against the NumPy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeats 2000] [--train-steps 30]

Times each hot kernel on training-shaped inputs for both backends, then a
full training step end to end under each backend (the step benchmark
re-executes this script in a subprocess with AMFD_BACKEND pinned, since
the backend is chosen at import time).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def _kernel_cases(rng):
    c, p = 8, 576  # one stride-4 pyramid level of a 96 px scene
    x = np.ascontiguousarray(rng.normal(0, 1, (c, p)))
    w = np.ascontiguousarray(rng.normal(0, 1, (c, c)))
    b = rng.normal(0, 1, c)
    gy = np.ascontiguousarray(rng.normal(0, 1, (c, p)))
    v = rng.normal(0, 1, p)
    pr = np.abs(rng.normal(0, 1, p))
    pr /= pr.sum()
    flat_a = rng.normal(0, 1, c * p)
    flat_b = rng.normal(0, 1, c * p)
    weight = np.abs(rng.normal(0, 1, c * p))
    w1 = rng.normal(0, 1, c)
    g_c = rng.normal(0, 1, c)
    return [
        ("channel_mix_fwd", lambda k: k.channel_mix_fwd(w, b, x)),
        ("channel_mix_bwd_x", lambda k: k.channel_mix_bwd_x(w, gy)),
        ("channel_mix_bwd_w", lambda k: k.channel_mix_bwd_w(x, gy)),
        ("softmax1d_fwd", lambda k: k.softmax1d_fwd(v)),
        ("sq_diff_sum_fwd", lambda k: k.sq_diff_sum_fwd(flat_a, flat_b)),
        ("abs_diff_sum_fwd", lambda k: k.abs_diff_sum_fwd(flat_a, flat_b)),
        ("weighted_sq_diff_sum_fwd",
         lambda k: k.weighted_sq_diff_sum_fwd(weight, flat_a, flat_b)),
        ("mean_abs0_softmax_fwd", lambda k: k.mean_abs0_softmax_fwd(x)),
        ("mean_abs1_softmax_fwd", lambda k: k.mean_abs1_softmax_fwd(x)),
        ("context_pool_fwd", lambda k: k.context_pool_fwd(w1, 0.1, x)),
        ("context_pool_bwd", lambda k: k.context_pool_bwd(w1, x, pr, g_c)),
        ("pixel_weighted_sum_fwd", lambda k: k.pixel_weighted_sum_fwd(x, pr)),
    ]


def bench_kernels(repeats):
    from amfd import _kernels_py as pyk

    try:
        from amfd import _ckernels as ck
    except ImportError:
        ck = None
        print("compiled extension not available; showing NumPy backend only\n")

    rng = np.random.default_rng(0)
    cases = _kernel_cases(rng)
    print(f"{'kernel':<28}{'numpy us':>12}{'cython us':>12}{'speedup':>10}")
    for name, fn in cases:
        def timed(mod):
            fn(mod)  # warm up
            t0 = time.perf_counter()
            for _ in range(repeats):
                fn(mod)
            return (time.perf_counter() - t0) / repeats * 1e6

        t_py = timed(pyk)
        if ck is not None:
            t_cy = timed(ck)
            print(f"{name:<28}{t_py:>12.2f}{t_cy:>12.2f}{t_py / t_cy:>9.2f}x")
        else:
            print(f"{name:<28}{t_py:>12.2f}{'-':>12}{'-':>10}")


def bench_train_step(steps):
    """Executed in a child process with AMFD_BACKEND pinned."""
    from amfd import backend
    from amfd.mea import MEAConfig
    from amfd.scenes import SceneSpec
    from amfd.toynet import SyntheticDataset, TrainConfig, run_distillation

    spec = SceneSpec(train_scenes=8, test_scenes=0)
    data = SyntheticDataset.generate(spec)
    cfg = TrainConfig(iterations=steps, eval_every=0, seed=0, plan="amfd",
                      learning_rate=3e-3,
                      mea=MEAConfig(alpha1=0.03, alpha2=0.03, gamma1=0.03,
                                    gamma2=0.03, lambda1=3e-4, lambda2=3e-4))
    run_distillation(cfg, data)  # warm up caches
    t0 = time.perf_counter()
    run_distillation(cfg, data)
    dt = (time.perf_counter() - t0) / steps * 1e3
    print(f"backend={backend.BACKEND}: {dt:.2f} ms/train step")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=2000)
    parser.add_argument("--train-steps", type=int, default=30)
    parser.add_argument("--step-only", action="store_true",
                        help=argparse.SUPPRESS)  # child-process mode
    args = parser.parse_args()

    if args.step_only:
        bench_train_step(args.train_steps)
        return

    bench_kernels(args.repeats)
    print("\nfull training step, per backend:")
    for backend_name in ("python", "cython"):
        env = dict(os.environ, AMFD_BACKEND=backend_name)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--step-only",
             "--train-steps", str(args.train_steps)],
            env=env, capture_output=True, text=True)
        out = (proc.stdout + proc.stderr).strip()
        print(out if proc.returncode == 0
              else f"backend={backend_name}: unavailable ({out.splitlines()[-1]})")


if __name__ == "__main__":
    main()

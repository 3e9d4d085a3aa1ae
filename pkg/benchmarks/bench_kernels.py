#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Kernel-level timings run both implementations in-process; the end-to-end
training-step comparison re-launches this script under each WORDLM_KERNELS
setting so the backend choice happens at import time, as in normal use.

    python benchmarks/bench_kernels.py            # full comparison
    python benchmarks/bench_kernels.py --steps 0  # kernel table only
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from wordlm import kernels


def timeit(fn, *args, repeat=20, warmup=2):
    for _ in range(warmup):
        fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_table():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4096, 768)).astype(np.float32)
    gout = rng.standard_normal((4096, 768)).astype(np.float32)
    gamma = rng.standard_normal(768).astype(np.float32)
    beta = rng.standard_normal(768).astype(np.float32)
    logits = rng.standard_normal((256, 30_000)).astype(np.float32)
    targets = rng.integers(0, 30_000, size=256)
    tvec = rng.standard_normal(256).astype(np.float32)
    param = rng.standard_normal(2_000_000).astype(np.float32)
    grad = rng.standard_normal(2_000_000).astype(np.float32)
    table_grad = np.zeros((50_000, 256), np.float32)
    ids = rng.integers(0, 50_000, size=8_192)
    rows = rng.standard_normal((8_192, 256)).astype(np.float32)

    y_ln, mean, inv = kernels.NUMPY_IMPLS["layer_norm_fwd"](x, gamma, beta, np.float32(1e-5))
    probs = kernels.NUMPY_IMPLS["softmax_rows"](x)

    cases = {
        "gelu_erf_fwd": (x,),
        "gelu_erf_bwd": (x, gout),
        "layer_norm_fwd": (x, gamma, beta, np.float32(1e-5)),
        "layer_norm_bwd": (x, gamma, mean, inv, gout),
        "softmax_rows": (x,),
        "softmax_rows_bwd": (probs, gout),
        "cross_entropy_rows_fwd": (logits, targets),
        "cross_entropy_rows_bwd": (logits, targets, tvec),
    }

    print(f"{'kernel':28s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, args in cases.items():
        t_np = timeit(kernels.NUMPY_IMPLS[name], *args)
        if kernels.USE_NUMBA:
            t_nb = timeit(kernels.ACTIVE_IMPLS[name], *args)
            print(f"{name:28s} {t_np*1e3:9.2f}ms {t_nb*1e3:9.2f}ms {t_np/t_nb:7.1f}x")
        else:
            print(f"{name:28s} {t_np*1e3:9.2f}ms {'-':>10s} {'-':>8s}")

    # stateful kernels: time on fresh copies each call
    def adam_np():
        kernels.NUMPY_IMPLS["adam_update"](
            param.copy(), grad, np.zeros_like(param), np.zeros_like(param),
            1, 1e-3, 0.9, 0.999, 1e-8,
        )

    def adam_nb():
        kernels.ACTIVE_IMPLS["adam_update"](
            param.copy(), grad, np.zeros_like(param), np.zeros_like(param),
            1, 1e-3, 0.9, 0.999, 1e-8,
        )

    def scat_np():
        kernels.NUMPY_IMPLS["scatter_add_rows"](table_grad, ids, rows)

    def scat_nb():
        kernels.ACTIVE_IMPLS["scatter_add_rows"](table_grad, ids, rows)

    for name, f_np, f_nb in (("adam_update", adam_np, adam_nb),
                             ("scatter_add_rows", scat_np, scat_nb)):
        t_np = timeit(f_np, repeat=10)
        if kernels.USE_NUMBA:
            t_nb = timeit(f_nb, repeat=10)
            print(f"{name:28s} {t_np*1e3:9.2f}ms {t_nb*1e3:9.2f}ms {t_np/t_nb:7.1f}x")
        else:
            print(f"{name:28s} {t_np*1e3:9.2f}ms {'-':>10s} {'-':>8s}")


def train_steps(n_steps):
    """Time n training steps of a small model under the active backend."""
    from wordlm.model import ModelConfig, WordBertModel
    from wordlm.training import TrainConfig, train
    from wordlm.vocab import build_vocabulary

    words = [f"w{i:03d}" for i in range(400)]
    rng = np.random.default_rng(1)
    lines = [" ".join(rng.choice(words, size=24)) for _ in range(300)]
    vocab = build_vocabulary({w: 5 for w in words}, k=400)
    model = WordBertModel(
        ModelConfig(vocab_size=vocab.size, num_layers=2, num_heads=4, hidden=128,
                    embed_dim=128, max_positions=32, dropout=0.0),
        seed=2,
    )
    cfg = TrainConfig(peak_lr=1e-3, warmup_steps=10, total_steps=max(n_steps, 11),
                      batch_size=16, seed=3, sample_size=200, max_length=28)
    train(lines, vocab, model, cfg, num_steps=2)  # warm the JIT before timing
    t0 = time.perf_counter()
    train(lines, vocab, model, cfg, start_step=2, num_steps=n_steps)
    return time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=30,
                        help="training steps for the end-to-end comparison (0 skips it)")
    parser.add_argument("--train-only", action="store_true",
                        help="print one end-to-end timing for the active backend and exit")
    args = parser.parse_args()

    if args.train_only:
        dt = train_steps(args.steps)
        print(f"{kernels.BACKEND}: {args.steps} steps in {dt:.2f}s "
              f"({dt / args.steps * 1e3:.1f} ms/step)")
        return

    print(f"active backend: {kernels.BACKEND}\n")
    kernel_table()

    if args.steps > 0:
        print(f"\nend-to-end: {args.steps} training steps, 2-layer H=128 model")
        sys.stdout.flush()
        for backend in ("numpy", "numba") if kernels.USE_NUMBA else ("numpy",):
            env = dict(os.environ, WORDLM_KERNELS=backend)
            subprocess.run(
                [sys.executable, __file__, "--train-only", "--steps", str(args.steps)],
                env=env, check=True,
            )


if __name__ == "__main__":
    main()

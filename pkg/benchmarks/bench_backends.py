#!/usr/bin/env python3
"""Benchmark the compiled recurrent kernels against the NumPy fallback.

Times one forward+backward pass over a batch of windows at the production
geometry (default 16x72 windows) for both cell kinds, plus a full
model-level training step, and prints the speedup.

Run: python benchmarks/bench_backends.py [--batch 16] [--seq 72] [--hidden 64]
"""

import argparse
import time

import numpy as np

from smogcast.neuro import kernels, kernels_py

try:
    from smogcast.neuro import _ckernels
except ImportError:
    _ckernels = None


def time_fn(fn, repeats):
    fn()  # warmup
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return min(samples) * 1000.0


def bench_cell(backend, kind, batch, seq, n_in, hidden, repeats):
    rng = np.random.default_rng(0)
    gates = 4 if kind == "lstm" else 3
    x = rng.standard_normal((batch, seq, n_in))
    w_ih = rng.standard_normal((gates * hidden, n_in)) * 0.3
    w_hh = rng.standard_normal((gates * hidden, hidden)) * 0.3
    b_ih = rng.standard_normal(gates * hidden) * 0.1
    b_hh = rng.standard_normal(gates * hidden) * 0.1
    h0 = np.zeros((batch, hidden))
    c0 = np.zeros((batch, hidden))
    g = rng.standard_normal((batch, seq, hidden))

    if kind == "lstm":
        fwd = lambda: backend.lstm_seq_forward(x, w_ih, w_hh, b_ih, b_hh, h0, c0)
        h_seq, cache = fwd()
        bwd = lambda: backend.lstm_seq_backward(x, w_ih, w_hh, h_seq, cache, g)
    else:
        fwd = lambda: backend.gru_seq_forward(x, w_ih, w_hh, b_ih, b_hh, h0)
        h_seq, cache = fwd()
        bwd = lambda: backend.gru_seq_backward(x, w_ih, w_hh, h_seq, cache, g)

    return time_fn(fwd, repeats), time_fn(bwd, repeats)


def bench_training_step(batch, seq, hidden, repeats):
    """One full HGRU forward/loss/backward/Adam step per backend."""
    from smogcast.models import ModelSpec, build
    from smogcast.train import Adam, mse_l2

    rng = np.random.default_rng(1)
    x = rng.random((batch, seq, 10))
    y = rng.random((batch, 24, 4))

    def step_fn():
        model.zero_grad()
        pred = model.forward(x)
        _, grad = mse_l2(pred, y, model.params(), 1e-6)
        model.backward(grad)
        opt.step()

    model = build(ModelSpec("HGRU", 2, hidden, n_features=10), seed=0)
    opt = Adam(model.params(), 1e-3)
    return time_fn(step_fn, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--seq", type=int, default=72)
    parser.add_argument("--n-in", type=int, default=10)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    print(f"active backend: {kernels.backend()}")
    if _ckernels is None:
        print("compiled extension not built; nothing to compare")
        return

    geo = (args.batch, args.seq, args.n_in, args.hidden)
    print(f"geometry: batch={args.batch} seq={args.seq} in={args.n_in} hidden={args.hidden}\n")
    print(f"{'kernel':<14}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for kind in ("lstm", "gru"):
        py_f, py_b = bench_cell(kernels_py, kind, *geo, args.repeats)
        ck_f, ck_b = bench_cell(_ckernels, kind, *geo, args.repeats)
        print(f"{kind + ' fwd':<14}{py_f:>10.3f}{ck_f:>11.3f}{py_f / ck_f:>8.2f}x")
        print(f"{kind + ' bwd':<14}{py_b:>10.3f}{ck_b:>11.3f}{py_b / ck_b:>8.2f}x")

    import os
    import subprocess
    import sys

    step_ck = bench_training_step(args.batch, args.seq, args.hidden, args.repeats)
    print(f"\nHGRU train step ({kernels.backend()}): {step_ck:.2f} ms")
    if kernels.backend() == "cython":
        code = (
            "from benchmarks.bench_backends import bench_training_step;"
            f"print(bench_training_step({args.batch},{args.seq},{args.hidden},{args.repeats}))"
        )
        out = subprocess.run(
            [sys.executable, "-c", code],
            env=dict(os.environ, SMOGCAST_BACKEND="python"),
            capture_output=True, text=True, cwd=os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
        )
        if out.returncode == 0:
            step_py = float(out.stdout.strip().splitlines()[-1])
            print(f"HGRU train step (numpy):  {step_py:.2f} ms  ({step_py / step_ck:.2f}x slower)")


if __name__ == "__main__":
    main()

"""Head-to-head timing of the compiled and pure NumPy kernel backends.

Times each kernel on encoder-realistic shapes, then a full training step
with either backend patched into the dispatch module.  Run from the repo
root after installing the package:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --batch 32 --seq 128 --repeats 50
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

import attnaug.kernels as dispatch
from attnaug.encoder import (
    BatchItem,
    EncoderConfig,
    Optimizer,
    TrainConfig,
    init_model,
    train_step,
)
from attnaug.kernels import available_backends
from attnaug.tokenizer import CLS_ID, SEP_ID, TokenSequence

KERNEL_NAMES = (
    "masked_softmax",
    "masked_softmax_backward",
    "layer_norm",
    "layer_norm_backward",
    "gelu",
    "gelu_backward",
)


def _time(fn, repeats: int) -> float:
    """Median wall time per call in microseconds."""
    fn()  # warm up caches and any lazy allocation
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e6)
    return statistics.median(samples)


def kernel_cases(batch: int, seq: int, dim: int, ffn: int, heads: int, rng):
    """(name, callable-per-backend) pairs on encoder-shaped inputs."""
    scores = rng.standard_normal((batch, heads * seq, seq))
    mask = np.ones((batch, seq))
    mask[:, seq - seq // 4 :] = 0.0  # realistic padding tail
    probs_src = rng.random((batch, heads * seq, seq))
    probs = probs_src / probs_src.sum(axis=-1, keepdims=True)
    dprobs = rng.standard_normal(probs.shape)
    x2d = rng.standard_normal((batch * seq, dim))
    gamma = rng.standard_normal(dim)
    beta = rng.standard_normal(dim)
    dy2d = rng.standard_normal((batch * seq, dim))
    h = rng.standard_normal((batch, seq, ffn))
    dh = rng.standard_normal((batch, seq, ffn))

    def cases(backend):
        _, mean, rstd = backend.layer_norm(x2d, gamma, beta)
        return {
            "masked_softmax": lambda: backend.masked_softmax(scores, mask),
            "masked_softmax_backward": lambda: backend.masked_softmax_backward(
                probs, dprobs
            ),
            "layer_norm": lambda: backend.layer_norm(x2d, gamma, beta),
            "layer_norm_backward": lambda: backend.layer_norm_backward(
                dy2d, x2d, gamma, mean, rstd
            ),
            "gelu": lambda: backend.gelu(h),
            "gelu_backward": lambda: backend.gelu_backward(h, dh),
        }

    return cases


def _fake_tokens(rng, vocab_size: int, length: int) -> TokenSequence:
    body = [int(v) for v in rng.integers(4, vocab_size, size=length)]
    ids = [CLS_ID] + body + [SEP_ID]
    n_words = len(body)
    return TokenSequence(
        ids=ids,
        pieces=["[CLS]"] + [f"w{v}" for v in body] + ["[SEP]"],
        word_index=[-1] + list(range(n_words)) + [-1],
        special_mask=[True] + [False] * n_words + [True],
        words=[f"w{v}" for v in body],
    )


def bench_train_step(backend, batch: int, seq: int, dim: int, ffn: int,
                     heads: int, repeats: int, rng) -> float:
    """Median time of one full train step with ``backend`` patched in."""
    saved = {name: getattr(dispatch, name) for name in KERNEL_NAMES}
    for name in KERNEL_NAMES:
        setattr(dispatch, name, getattr(backend, name))
    try:
        cfg = EncoderConfig(
            layers=2, heads=heads, model_dim=dim, ffn_dim=ffn,
            max_len=seq + 2, vocab_size=256, seed=7,
        )
        model = init_model(cfg)
        optimizer = Optimizer(model, TrainConfig(learning_rate=1e-4, optimizer="adam"))
        items = [
            BatchItem(
                q_tokens=_fake_tokens(rng, cfg.vocab_size, seq // 4),
                pos_tokens=_fake_tokens(rng, cfg.vocab_size, seq - 2),
            )
            for _ in range(batch)
        ]
        return _time(lambda: train_step(model, items, optimizer), repeats)
    finally:
        for name, fn in saved.items():
            setattr(dispatch, name, fn)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--seq", type=int, default=96)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--ffn", type=int, default=64)
    parser.add_argument("--heads", type=int, default=2)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    backends = available_backends()
    rng = np.random.default_rng(0)
    cases = kernel_cases(args.batch, args.seq, args.dim, args.ffn, args.heads, rng)
    per_backend = {name: cases(mod) for name, mod in backends.items()}

    print(f"backends: {', '.join(sorted(backends))}   "
          f"shapes: B={args.batch} S={args.seq} d={args.dim} ffn={args.ffn} "
          f"H={args.heads}   repeats={args.repeats} (median us/call)")
    header = f"{'kernel':<26}" + "".join(f"{name:>12}" for name in sorted(backends))
    if len(backends) > 1:
        header += f"{'pure/c':>10}"
    print(header)
    for kernel in KERNEL_NAMES:
        times = {
            name: _time(per_backend[name][kernel], args.repeats)
            for name in sorted(backends)
        }
        row = f"{kernel:<26}" + "".join(f"{times[name]:>12.1f}" for name in sorted(times))
        if "c" in times and "pure" in times and times["c"] > 0:
            row += f"{times['pure'] / times['c']:>9.2f}x"
        print(row)

    print()
    step_times = {}
    for name in sorted(backends):
        step_times[name] = bench_train_step(
            backends[name], args.batch, args.seq, args.dim, args.ffn,
            args.heads, max(5, args.repeats // 3), rng,
        )
        print(f"train_step[{name}]: {step_times[name] / 1000:.2f} ms")
    if "c" in step_times and "pure" in step_times and step_times["c"] > 0:
        print(f"train_step speedup (pure/c): {step_times['pure'] / step_times['c']:.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

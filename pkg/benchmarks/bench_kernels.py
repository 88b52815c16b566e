"""Compare the compiled row kernels against the numpy fallback.

Run ``python benchmarks/bench_kernels.py`` after building the extension.
Prints per-kernel median wall time for both backends, the speed-up, and
the largest absolute difference between their outputs. A final row times
one full training step of the default model under each backend.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from varmae.diffcore import _kernels_py as py

try:
    from varmae.diffcore import _ckernels as cy
except ImportError:
    cy = None


def _cases(rows: int, width: int, rng):
    x = rng.normal(size=(rows, width))
    gy = rng.normal(size=(rows, width))
    gamma, beta = rng.normal(size=width), rng.normal(size=width)
    y = py.softmax_fwd(x)
    _, xhat, rstd = py.layernorm_fwd(x, gamma, beta, 1e-12)
    targets = rng.integers(width, size=rows)
    grow = rng.random(rows)
    return {
        "softmax_fwd": (x,),
        "softmax_bwd": (y, gy),
        "layernorm_fwd": (x, gamma, beta, 1e-12),
        "layernorm_bwd": (gy, xhat, rstd, gamma),
        "gelu_fwd": (x,),
        "gelu_bwd": (x, gy),
        "ce_fwd": (x, targets),
        "ce_bwd": (y, targets, grow),
    }


def _max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_max_diff(u, v) for u, v in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _median_time(fn, args, repeat: int) -> float:
    t = timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)
    return float(np.median(t))


STEP_SNIPPET = """
import time, numpy as np
from varmae.corpus import build_vocab, tokenize
from varmae.diffcore import Rng, BACKEND
from varmae.encoder import EncoderConfig
from varmae.cul import CULConfig
from varmae.model import VarMAEModel
from varmae.pretrain import TrainConfig, pretrain
from varmae.synth import chain_corpus, word_list
lines = chain_corpus(64, word_list(100), np.random.default_rng(0))
v = build_vocab(lines)
seqs = [tokenize(l, v) for l in lines]
m = VarMAEModel(EncoderConfig(vocab_size=len(v)), CULConfig(), Rng(0))
cfg = TrainConfig(epochs=1000, learning_rate=1e-3, batch_size=64, grad_accum_steps=1, max_steps=5,
                  freeze_policy="none", log_every=1)
pretrain(seqs, m, cfg, rng=Rng(1), epochs=1)
t = time.perf_counter()
pretrain(seqs, m, cfg, rng=Rng(1))
print(BACKEND, (time.perf_counter() - t) / 5)
"""


def step_time(backend: str) -> tuple[str, float]:
    env = dict(os.environ, VARMAE_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, capture_output=True, text=True, check=True)
    name, seconds = out.stdout.split()
    return name, float(seconds)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=4096)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--no-step", action="store_true", help="skip the end-to-end training-step timing")
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled kernels are not built; only the numpy fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"rows={args.rows} width={args.width} repeat={args.repeat}")
    print(f"{'kernel':<14} {'numpy ms':>10} {'cython ms':>10} {'speed-up':>9} {'max |diff|':>11}")
    for name, fargs in _cases(args.rows, args.width, rng).items():
        tp = _median_time(getattr(py, name), fargs, args.repeat)
        tc = _median_time(getattr(cy, name), fargs, args.repeat)
        diff = _max_diff(getattr(py, name)(*fargs), getattr(cy, name)(*fargs))
        print(f"{name:<14} {tp * 1e3:10.3f} {tc * 1e3:10.3f} {tp / tc:8.2f}x {diff:11.2e}")
    if not args.no_step:
        (_, tp), (_, tc) = step_time("python"), step_time("cython")
        print(f"{'train step':<14} {tp * 1e3:10.1f} {tc * 1e3:10.1f} {tp / tc:8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

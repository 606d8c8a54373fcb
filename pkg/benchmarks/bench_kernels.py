"""Compiled vs numpy kernels: per-kernel timings and one full training step.

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 64] [--size 32]

The per-kernel table imports both backends directly. The training step is
timed in a child process per backend (the backend is chosen at import time,
so ``FATIGUENET_PURE_PYTHON=1`` must be set before the package loads).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fatiguenet.nn import _kernels_py as pyk

try:
    from fatiguenet.nn import _ckernels as ck
except ImportError:
    ck = None

STEP = """
import time, numpy as np
from fatiguenet.model import IADAN, total_loss
from fatiguenet.nn import kernels
n, size, reps = {batch}, {size}, {repeat}
m = IADAN(9)
x = np.random.default_rng(0).random((n, 6, size, size)).astype(np.float32)
y, d = np.arange(n) % 3, np.arange(n) % 9
def step():
    m.zero_grad()
    o = m.forward(x, 0.1, True)
    l = total_loss(o.fatigue_logits, o.domain_logits, o.embedding, y, d)
    m.backward(l.grads["embedding"], l.grads["fatigue"], l.grads["domain"])
step()
t = time.perf_counter()
for _ in range(reps):
    step()
print(kernels.BACKEND, (time.perf_counter() - t) / reps)
"""


def kernel_cases(batch, size):
    rng = np.random.default_rng(0)
    x1 = rng.random((batch, 6, 2 * size, 2 * size)).astype(np.float32)   # first conv input
    x2 = rng.random((batch, 64, size // 2, size // 2)).astype(np.float32)  # inception input
    xp = rng.random((batch, 32, 2 * size, 2 * size)).astype(np.float32)

    def cases(mod):
        c1 = mod.im2col(x1, 7, 2, 1, 6)
        c2 = mod.im2col(x2, 5, 1, 1, 2)
        out, arg = mod.maxpool_forward(xp, 2, 2)
        return {
            "im2col K7 D2 (first conv)": lambda: mod.im2col(x1, 7, 2, 1, 6, out=c1),
            "col2im K7 D2 (first conv)": lambda: mod.col2im(c1, x1.shape, 7, 2, 1, 6),
            "im2col K5 (inception)": lambda: mod.im2col(x2, 5, 1, 1, 2, out=c2),
            "col2im K5 (inception)": lambda: mod.col2im(c2, x2.shape, 5, 1, 1, 2),
            "maxpool 2x2 forward": lambda: mod.maxpool_forward(xp, 2, 2),
            "maxpool 2x2 backward": lambda: mod.maxpool_backward(out, arg, xp.shape, 2, 2),
            "maxpool 3x3 s1 forward": lambda: mod.maxpool_forward(x2, 3, 1, 1),
        }
    return cases


def time_step(pure, args):
    env = dict(os.environ)
    if pure:
        env["FATIGUENET_PURE_PYTHON"] = "1"
    else:
        env.pop("FATIGUENET_PURE_PYTHON", None)
    code = STEP.format(batch=args.batch, size=args.size, repeat=max(1, args.repeat // 5))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    return out[0], float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--size", type=int, default=32, help="network input size (images are size x size)")
    args = ap.parse_args()

    make = kernel_cases(args.batch, args.size // 2)
    py_cases = make(pyk)
    c_cases = make(ck) if ck is not None else {}
    print(f"{'kernel':30s} {'numpy ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for name, fn in py_cases.items():
        t_py = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        if name in c_cases:
            t_c = min(timeit.repeat(c_cases[name], number=1, repeat=args.repeat)) * 1e3
            print(f"{name:30s} {t_py:10.2f} {t_c:10.2f} {t_py / t_c:8.1f}x")
        else:
            print(f"{name:30s} {t_py:10.2f} {'n/a':>10s}")

    print(f"\nfull training step, batch {args.batch}, {args.size}x{args.size} input:")
    results = {}
    for pure in (True, False):
        backend, sec = time_step(pure, args)
        results[backend] = sec
        print(f"  {backend:7s} {sec:.3f} s/step")
    if "cython" in results and "python" in results:
        print(f"  speed-up {results['python'] / results['cython']:.2f}x")


if __name__ == "__main__":
    main()

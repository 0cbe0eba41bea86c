"""Compare the compiled and numpy loss/gradient kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Prints per-call timings for a few batch shapes, then the wall time of one
end-to-end experiment under each backend (run in a subprocess so the backend
is chosen at import).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fedlesam import _kernels_py

try:
    from fedlesam import _kernels
except ImportError:
    _kernels = None

SHAPES = [  # (batch, in_dim, hidden, n_classes)
    (16, 2, 8, 10),
    (16, 2, 0, 10),
    (500, 2, 8, 10),
    (64, 32, 64, 10),
]

END_TO_END = """
import time
from fedlesam.config import parse_config
from fedlesam.kernels import BACKEND
from fedlesam.server import run_experiment
text = open({path!r}).read()
t0 = time.perf_counter()
run_experiment(parse_config(text).experiment)
print(BACKEND, time.perf_counter() - t0)
"""


def bench_shape(n, in_dim, hidden, n_cls, repeat):
    rng = np.random.default_rng(0)
    n_params = (in_dim * hidden + hidden + hidden * n_cls + n_cls) if hidden else in_dim * n_cls + n_cls
    w = rng.standard_normal(n_params)
    X = rng.standard_normal((n, in_dim))
    y = rng.integers(0, n_cls, n).astype(np.int64)
    g = np.empty(n_params)
    row = {}
    for name, mod in (("numpy", _kernels_py), ("cython", _kernels)):
        if mod is None:
            continue
        t = min(timeit.repeat(lambda: mod.dense_loss_grad(w, X, y, in_dim, hidden, n_cls, g), number=repeat, repeat=5))
        row[name] = t / repeat * 1e6
    return row


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=2000)
    parser.add_argument("--config", default=os.path.join(os.path.dirname(__file__), "..", "configs", "fedlesam.toml"))
    args = parser.parse_args(argv)

    if _kernels is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'batch':>6} {'in':>4} {'hidden':>6} {'classes':>7} {'numpy us':>10} {'cython us':>10} {'speedup':>8}")
    for shape in SHAPES:
        row = bench_shape(*shape, args.repeat)
        cy = row.get("cython")
        speed = f"{row['numpy'] / cy:7.1f}x" if cy else "      -"
        print(f"{shape[0]:>6} {shape[1]:>4} {shape[2]:>6} {shape[3]:>7} {row['numpy']:>10.1f} "
              f"{cy if cy else float('nan'):>10.1f} {speed:>8}")

    print("\nend-to-end run of", os.path.normpath(args.config))
    for pure in ("0", "1"):
        env = dict(os.environ, FEDLESAM_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", END_TO_END.format(path=args.config)], env=env,
                             capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:>7}: {float(seconds):.2f}s")


if __name__ == "__main__":
    main()

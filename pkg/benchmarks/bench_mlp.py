"""Time the compiled and numpy MLP kernels on the same inputs.

    python3 benchmarks/bench_mlp.py [--rows 540] [--hidden 40] [--repeat 5]

Reports the best-of-N wall time per kernel call and for a short full
training run, plus the speedup of the compiled backend where it is built.
"""

import argparse
import time

import numpy as np

from pinna_n1._backend import available_backends
from pinna_n1.anthro import Normalizer
from pinna_n1.predictors import ModelSpec, init_params, train_mlp


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rows", type=int, default=540)
    ap.add_argument("--hidden", type=int, default=40)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    sizes = [9, args.hidden, args.hidden, args.hidden, 1]
    theta0 = init_params(sizes, rng)
    X = rng.normal(size=(args.rows, 9))
    y = 8.0 + np.tanh(X[:, 0]) + 0.5 * X[:, 1] * X[:, 2]
    order = np.arange(args.rows, dtype=np.int64)
    spec = ModelSpec(hidden_units=args.hidden, max_epochs=args.epochs, patience=args.epochs)
    norm = Normalizer(np.zeros(9), np.ones(9))
    nval = max(1, args.rows // 4)

    backends = available_backends()
    results = {}
    for name, k in sorted(backends.items()):
        def epoch():
            t = theta0.copy()
            k.adam_epoch(t, np.zeros_like(t), np.zeros_like(t), sizes, X, y, order, 32,
                         1e-3, 0.9, 0.999, 1e-8, 0, 1)

        results[name] = {
            "forward": best_of(lambda: k.forward(theta0, sizes, X, 1), args.repeat),
            "loss_grad": best_of(lambda: k.loss_grad(theta0, sizes, X, y, 1), args.repeat),
            "adam_epoch": best_of(epoch, args.repeat),
            f"train {args.epochs} ep": best_of(
                lambda: train_mlp(X, y * 1000, X[:nval], y[:nval] * 1000, spec, norm, kernels=k), 1),
        }

    print(f"rows {args.rows}, layers {sizes}, best of {args.repeat}")
    names = sorted(results)
    header = f"{'kernel':<16}" + "".join(f"{n:>14}" for n in names)
    if "cython" in results:
        header += f"{'speedup':>10}"
    print(header)
    for op in results[names[0]]:
        line = f"{op:<16}" + "".join(f"{results[n][op] * 1e3:>12.3f}ms" for n in names)
        if "cython" in results:
            line += f"{results['python'][op] / results['cython'][op]:>9.1f}x"
        print(line)
    if "cython" not in results:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()

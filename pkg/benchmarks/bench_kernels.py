"""Time the compiled kernels against the numpy fallback on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each row reports the best-of-N wall time per call for both backends, the
speedup and the max absolute difference between their outputs.
"""

import argparse
import timeit

import numpy as np

from dualnlg import kernels


def _cases(rng):
    x = rng.normal(size=(32, 73, 80))
    cols = rng.normal(size=(32, 35, 5, 80))
    hid = 80
    z = rng.normal(size=(32, 4 * hid))
    c_prev = rng.normal(size=(32, hid))
    dh, dc = rng.normal(size=(32, hid)), rng.normal(size=(32, hid))
    idx = rng.integers(0, 500, size=32 * 20).astype(np.int64)
    src = rng.normal(size=(idx.size, 80))

    def lstm_bwd(mod):
        _, _, gates, tanh_c = mod.lstm_forward(z, c_prev)
        return lambda: mod.lstm_backward(dh, dc, c_prev, gates, tanh_c)

    return {
        "im2col": lambda mod: lambda: mod.im2col(x, 5, 2),
        "col2im": lambda mod: lambda: mod.col2im(cols, 73, 2),
        "lstm_forward": lambda mod: lambda: mod.lstm_forward(z, c_prev),
        "lstm_backward": lstm_bwd,
        "scatter_add_rows": lambda mod: lambda: mod.scatter_add_rows(500, idx, src),
    }


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(u, v) for u, v in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=50)
    args = ap.parse_args(argv)

    mods = kernels.backends()
    if len(mods) < 2:
        print("compiled extension not built; only the numpy fallback is available")
    names = [m.BACKEND for m in mods]
    print(f"{'kernel':<18}" + "".join(f"{n + ' (us)':>16}" for n in names) + f"{'speedup':>10}{'max diff':>12}")
    for name, make in _cases(np.random.default_rng(0)).items():
        fns = [make(m) for m in mods]
        times = [min(timeit.repeat(f, number=args.number, repeat=args.repeat)) / args.number * 1e6 for f in fns]
        speed = times[0] / times[-1]
        diff = _max_diff(fns[0](), fns[-1]())
        print(f"{name:<18}" + "".join(f"{t:>16.1f}" for t in times) + f"{speed:>9.2f}x{diff:>12.1e}")


if __name__ == "__main__":
    main()

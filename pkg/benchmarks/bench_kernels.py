"""Compare the compiled kernels with the NumPy fallback.

Run with ``python benchmarks/bench_kernels.py``. Timings are medians over
repeated calls on shapes taken from the desk-scale Monte Carlo.
"""

import argparse
import timeit

import numpy as np

from kldisac import _kernels_py
from kldisac.scenario import build_constellation

try:
    from kldisac import _ckernels
except ImportError:
    _ckernels = None


def _quadform_case(rng, B=500, N=20, L=100):
    Y = rng.standard_normal((B, N, L)) + 1j * rng.standard_normal((B, N, L))
    A = rng.standard_normal((B, N, N)) + 1j * rng.standard_normal((B, N, N))
    A = A + np.conj(np.swapaxes(A, 1, 2))
    return (Y, A)


def _demod_case(rng, K=3, n=100_000):
    con = build_constellation(4)
    tx = rng.integers(0, 4, size=(K, n))
    z = con.symbols[tx] + 0.3 * (rng.standard_normal((K, n)) + 1j * rng.standard_normal((K, n)))
    return (z, tx, 4, float(np.angle(con.symbols[0])), con.labels)


def _median(fn, args, number, repeat):
    return float(np.median(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat))) / number


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=7)
    p.add_argument("--number", type=int, default=5)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    cases = {
        "quadform_mean": _quadform_case(rng),
        "psk_bit_errors": _demod_case(rng),
    }
    print(f"{'kernel':16s} {'numpy (ms)':>11s} {'cython (ms)':>12s} {'speedup':>8s}")
    for name, case in cases.items():
        t_py = _median(getattr(_kernels_py, name), case, args.number, args.repeat)
        if _ckernels is None:
            print(f"{name:16s} {1e3 * t_py:11.3f} {'n/a':>12s} {'n/a':>8s}")
            continue
        fast = getattr(_ckernels, name)
        a, b = fast(*case), getattr(_kernels_py, name)(*case)
        if not np.allclose(a, b, rtol=1e-10, atol=1e-9):
            raise SystemExit(f"{name}: backends disagree")
        t_c = _median(fast, case, args.number, args.repeat)
        print(f"{name:16s} {1e3 * t_py:11.3f} {1e3 * t_c:12.3f} {t_py / t_c:7.2f}x")


if __name__ == "__main__":
    main()

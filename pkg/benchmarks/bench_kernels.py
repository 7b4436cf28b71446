"""Time the numba kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``. Each kernel is
called once per backend before timing so JIT compilation is excluded, and the
two backends' outputs are checked for agreement on the same inputs.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from cohortparity.kernels import numba_impl, numpy_impl


def _csr(rng, n_rows, n_features, nnz_per_row):
    indptr = np.arange(0, (n_rows + 1) * nnz_per_row, nnz_per_row, dtype=np.int64)
    indices = np.sort(rng.integers(0, n_features, size=(n_rows, nnz_per_row)), axis=1).ravel()
    data = rng.random(n_rows * nnz_per_row)
    return indptr, indices.astype(np.int64), data


def cases(rng):
    F, C, B = 4096, 5, 64
    indptr, indices, data = _csr(rng, B, F, 10)
    W = rng.normal(size=(F, C))
    G = rng.normal(size=(B, C))
    X, Cen = rng.normal(size=(2000, 32)), rng.normal(size=(4, 32))
    H = 64
    z = rng.normal(size=(32, 4 * H))
    c_prev = rng.normal(size=(32, H))
    logits = rng.normal(size=(32 * 35, 400))
    targets = rng.integers(-1, 400, size=32 * 35)
    return {
        "sparse_matmul": (indptr, indices, data, W),
        "sparse_matmul_t": (indptr, indices, data, G, F),
        "nearest_centroid": (X, Cen),
        "lstm_pointwise_forward": (z, c_prev),
        "lstm_pointwise_backward": None,  # built from the forward outputs below
        "softmax_xent": (logits, targets),
    }


def _agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return bool(np.allclose(a, b, rtol=1e-10, atol=1e-12))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    if numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    table = cases(rng)
    gates, _, _, tanh_c = numpy_impl.lstm_pointwise_forward(*table["lstm_pointwise_forward"])
    c_prev = table["lstm_pointwise_forward"][1]
    table["lstm_pointwise_backward"] = (gates, c_prev, tanh_c, rng.normal(size=c_prev.shape),
                                        rng.normal(size=c_prev.shape))

    print(f"{'kernel':<26}{'numpy us':>12}{'numba us':>12}{'speedup':>10}  agree")
    for name, call_args in table.items():
        f_np, f_nb = getattr(numpy_impl, name), getattr(numba_impl, name)
        same = _agree(f_np(*call_args), f_nb(*call_args))  # also warms the JIT
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=args.repeat, repeat=3))
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=args.repeat, repeat=3))
        us_np, us_nb = 1e6 * t_np / args.repeat, 1e6 * t_nb / args.repeat
        print(f"{name:<26}{us_np:>12.1f}{us_nb:>12.1f}{us_np / us_nb:>9.2f}x  {same}")


if __name__ == "__main__":
    main()

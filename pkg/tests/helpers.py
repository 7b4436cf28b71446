"""Finite-difference utilities shared by the gradient tests."""

from __future__ import annotations

import numpy as np

# Relative error uses max(|a|, |n|, FLOOR) as the denominator so coordinates
# whose true gradient is (numerically) zero are judged by absolute error.
FLOOR = 1e-6


def rel_error(analytic: float, numeric: float, floor: float = FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def central_difference(f, arrays, which, index, h):
    """``(f(x + h e) - f(x - h e)) / 2h`` for one coordinate of ``arrays[which]``."""
    arr = arrays[which]
    old = arr[index]
    arr[index] = old + h
    up = f()
    arr[index] = old - h
    down = f()
    arr[index] = old
    return (up - down) / (2.0 * h)


def sample_coordinates(rng, arrays, n):
    """``n`` random (array, index) pairs, weighted by array size."""
    sizes = np.array([a.size for a in arrays], dtype=float)
    picks = rng.choice(len(arrays), size=n, p=sizes / sizes.sum())
    return [(int(w), np.unravel_index(int(rng.integers(arrays[w].size)), arrays[w].shape))
            for w in picks]

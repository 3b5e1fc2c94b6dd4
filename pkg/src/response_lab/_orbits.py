"""Compiled orbit loops for Birkhoff averages."""

import numba
import numpy as np

# the bundled TBB is too old for numba; pick a layer without the warning
numba.config.THREADING_LAYER = "workqueue"


@numba.njit(cache=True)
def cusp_tent_step(x, eps):
    if x < 0.5:
        s = 1.5 * x + 0.25 * (1.0 - (1.0 - 2.0 * x) ** 0.125)
    else:
        s = 1.5 * (1.0 - x) + 0.25 * (1.0 - (2.0 * x - 1.0) ** 0.125)
    return (1.0 - eps) * s


@numba.njit(cache=True)
def tent_step(x, eps):
    return (1.0 - eps) * min(2.0 * x, 2.0 - 2.0 * x)


@numba.njit
def _observe(code, x):
    if code == 0:
        return 1.0
    if code == 1:
        return x
    if code == 2:
        return x * x
    return np.cos(2.0 * np.pi * x)


@numba.njit(parallel=True)
def _orbit_sums(step, eps, starts, orbit_len, burn_in, code, c):
    n = starts.size
    sums = np.zeros(n)
    hits = np.zeros(n, dtype=np.int64)
    for i in numba.prange(n):
        x = starts[i]
        acc = 0.0
        for k in range(burn_in + orbit_len):
            if x == c:
                x += 1e-15
                hits[i] += 1
            x = step(x, eps)
            if k >= burn_in:
                acc += _observe(code, x)
        sums[i] = acc
    return sums, hits


def orbit_sums(step, eps, starts, orbit_len, burn_in, code, c, threads=None):
    if threads is not None:
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    sums, hits = _orbit_sums(step, float(eps), np.asarray(starts, dtype=float), int(orbit_len), int(burn_in),
                             int(code), float(c))
    return sums, int(hits.sum())

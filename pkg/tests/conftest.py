"""Shared test helpers: finite-difference gradient checking.

Central differences with step h = 1e-5, compared at randomly chosen
coordinates. Relative error uses max(|numeric|, |analytic|, floor) as the
denominator so near-zero gradients do not blow up the ratio.
"""

import numpy as np


def numeric_grad(f, x, flat_index, h=1e-5):
    """Central finite difference of scalar f at one coordinate of x."""
    xp = x.copy()
    xp.flat[flat_index] += h
    xm = x.copy()
    xm.flat[flat_index] -= h
    return (f(xp) - f(xm)) / (2.0 * h)


def check_grad(f, x, analytic, rng, n_coords=20, h=1e-5, tol=1e-4):
    """Compare analytic gradient of scalar f against central differences.

    Args:
        f: maps an array like x to a float.
        x: evaluation point (not modified).
        analytic: gradient array, same shape as x.
        rng: numpy Generator used to pick coordinates.
        n_coords: number of coordinates to probe.
    """
    assert analytic.shape == x.shape
    n = min(n_coords, x.size)
    idx = rng.choice(x.size, size=n, replace=False)
    for i in idx:
        num = numeric_grad(f, x, i, h)
        ana = analytic.flat[i]
        denom = max(abs(num), abs(ana), 1e-8)
        rel = abs(num - ana) / denom
        assert rel < tol, (
            f"gradient mismatch at flat index {i}: "
            f"numeric {num:.10g} vs analytic {ana:.10g} (rel {rel:.3g})")


def integer_tensor(rng, shape, low=-4, high=5):
    """Random integer-valued float64 tensor.

    Sums of products of small integers are exact in float64 regardless of
    summation order, so oracle comparisons on these inputs can assert
    bit-for-bit equality even when the implementation uses BLAS.
    """
    return rng.integers(low, high, size=shape).astype(np.float64)

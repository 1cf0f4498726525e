"""Pure-numpy implementations of the Monte Carlo hot kernels.

Mirrors the signatures of the compiled module ``_kernels_c``; one of the
two is selected at import time by :mod:`dpfair.kernels`.

All kernels take 1-D float64 arrays of raw uniforms in ``[0, 1)``
produced by the caller's ``numpy.random.Generator``, so the random
stream is owned by one place regardless of backend.
"""

import numpy as np

# Smallest kept argument of the log in the inverse CDF.  Draws at the
# exact end points of [0, 1) would otherwise map to +/-inf; the clamp
# truncates the Laplace tail at ~36.7 scales (mass ~6e-17).
_TINY = 2.0**-53

BACKEND = "python"


def laplace_from_uniform(u, scale):
    """Map uniforms in [0, 1) to Laplace(0, scale) via the inverse CDF."""
    half = np.asarray(u, dtype=np.float64) - 0.5
    t = 1.0 - 2.0 * np.abs(half)
    np.maximum(t, _TINY, out=t)
    res = np.log(t, out=t)
    res *= -scale
    res *= np.sign(half)
    return res


def clipped_laplace_moments(x, level, scale, u):
    """Sum and sum of squares of max(level, x + eta) over draws eta."""
    v = laplace_from_uniform(u, scale)
    v += x
    np.maximum(v, level, out=v)
    s1 = float(v.sum())
    s2 = float((v * v).sum())
    return s1, s2


def threshold_flip_count(x, level, strict, scale, u):
    """Count draws where the thresholded noisy value disagrees with the true one."""
    v = laplace_from_uniform(u, scale)
    v += x
    noisy = (v > level) if strict else (v >= level)
    true = (x > level) if strict else (x >= level)
    return int(np.count_nonzero(noisy != true))


def stochastic_round_from_uniform(z, u):
    """Round each z to a straddling integer, up with probability frac(z)."""
    z = np.asarray(z, dtype=np.float64)
    lo = np.floor(z)
    return lo + (np.asarray(u) < (z - lo))

"""Backend selection for the Monte Carlo hot kernels.

The compiled extension is preferred when present; the pure-numpy
fallback is used when the extension is missing (source checkout without
a build) or when ``DPFAIR_PURE_PYTHON`` is set in the environment.
Both backends are deterministic given the same uniforms; they may
differ in the last ulp because of different log implementations.
"""

import os

if os.environ.get("DPFAIR_PURE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels_c as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
laplace_from_uniform = _impl.laplace_from_uniform
clipped_laplace_moments = _impl.clipped_laplace_moments
threshold_flip_count = _impl.threshold_flip_count
stochastic_round_from_uniform = _impl.stochastic_round_from_uniform

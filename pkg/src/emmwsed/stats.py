"""Numerical primitives shared by the sensing, consensus and HMM code."""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize, special

LOG_2PI = math.log(2.0 * math.pi)

# Q(z) underflows to exactly zero beyond this, so the root bracket stays finite.
_Z_BRACKET = 38.5


def rng_stream(seed: int, *stream_id: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *stream_id)``.

    Equal keys give bitwise-equal draws regardless of how many other
    streams were created before, which keeps Monte Carlo trials
    order-independent.
    """
    if seed < 0 or any(s < 0 for s in stream_id):
        raise ValueError("seed and stream ids must be non-negative")
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream_id))
    return np.random.Generator(np.random.Philox(seq))


def q_function(z):
    """Gaussian tail probability P(Z > z) for a standard normal Z."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("q_function needs a finite argument")
    out = 0.5 * special.erfc(z / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def _q_inverse_scalar(p: float) -> float:
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise ValueError(f"q_inverse needs p in (0, 1), got {p!r}")
    if p == 0.5:
        return 0.0
    return optimize.brentq(
        lambda z: float(q_function(z)) - p,
        -_Z_BRACKET,
        _Z_BRACKET,
        xtol=1e-15,
        rtol=4 * np.finfo(float).eps,
        maxiter=500,
    )


def q_inverse(p):
    """Inverse of :func:`q_function`, found by bracketed root finding."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 0:
        return _q_inverse_scalar(float(arr))
    return np.array([_q_inverse_scalar(float(v)) for v in arr.ravel()]).reshape(arr.shape)


def gaussian_logpdf(x, mean, variance):
    """Log density of N(mean, variance) evaluated at ``x`` (broadcasting)."""
    variance = np.asarray(variance, dtype=float)
    if np.any(~(variance > 0)):
        raise ValueError("variance must be positive")
    x = np.asarray(x, dtype=float)
    out = -0.5 * (LOG_2PI + np.log(variance) + (x - mean) ** 2 / variance)
    return float(out) if np.ndim(out) == 0 else out

"""Shared grid and transform helpers.

Conventions fixed here and used everywhere else:

* Circle functions are truncated to Fourier modes n = -N..N.  A mode vector
  lists coefficients in ascending mode order, so u(theta) = sum_n u[n+N] e^{i n theta}.
* A uniform grid of J points with spacing dx carries the discrete frequencies
  ``2*pi*fftfreq(J, dx)`` reordered ascending; for odd J these are symmetric.
* Multiplier <-> convolution-kernel conversion is exact on the retained band:
  a Toeplitz row built from ``kernel_from_multiplier`` reproduces the
  multiplier on periodic data.
"""

from __future__ import annotations

import numpy as np


def theta_grid(n_points: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_points) / n_points


def mode_range(cutoff: int) -> np.ndarray:
    return np.arange(-cutoff, cutoff + 1)


def values_to_modes(values: np.ndarray, cutoff: int, axis: int = -1) -> np.ndarray:
    """Fourier coefficients -N..N from samples on a uniform theta grid.

    Exact when the sampled function is a trigonometric polynomial of degree
    <= (n_points - 1) // 2.
    """
    n_points = values.shape[axis]
    if n_points < 2 * cutoff + 1:
        raise ValueError("theta grid too coarse for the requested mode cutoff")
    coeff = np.fft.fft(values, axis=axis) / n_points
    idx = np.fft.fftfreq(n_points, 1.0 / n_points).astype(int)
    out_shape = list(values.shape)
    out_shape[axis] = 2 * cutoff + 1
    out = np.zeros(out_shape, dtype=complex)
    for pos, n in enumerate(idx):
        if -cutoff <= n <= cutoff:
            dest = [slice(None)] * values.ndim
            dest[axis] = n + cutoff
            src = [slice(None)] * values.ndim
            src[axis] = pos
            out[tuple(dest)] = coeff[tuple(src)]
    return out


def modes_to_values(modes: np.ndarray, angles: np.ndarray, axis: int = -1) -> np.ndarray:
    """Evaluate a mode vector at arbitrary angles (exact trig evaluation)."""
    cutoff = (modes.shape[axis] - 1) // 2
    n = mode_range(cutoff)
    phases = np.exp(1j * np.outer(angles, n))  # (A, 2N+1)
    moved = np.moveaxis(modes, axis, -1)
    vals = moved @ phases.T
    return np.moveaxis(vals, -1, axis)


def grid_freqs(n_points: int, spacing: float) -> np.ndarray:
    """Discrete frequencies of a length-n uniform grid, ascending."""
    return np.sort(2.0 * np.pi * np.fft.fftfreq(n_points, d=spacing))


def kernel_from_multiplier(mult: np.ndarray, freqs: np.ndarray, spacing: float,
                           lags: np.ndarray) -> np.ndarray:
    """Convolution kernel k[d] with sum_d k[d] e^{-i eta d dx} = mult(eta).

    ``mult`` has shape (F, ...) over the ascending frequency grid; the result
    has shape (len(lags), ...).  Exact for band-limited multipliers when
    ``lags`` covers the full periodic lag range.
    """
    n = len(freqs)
    phase = np.exp(1j * np.outer(lags * spacing, freqs))  # (D, F)
    flat = mult.reshape(n, -1)
    kern = (phase @ flat) / n
    return kern.reshape((len(lags),) + mult.shape[1:])


def multiplier_from_kernel(kern: np.ndarray, lags: np.ndarray, spacing: float,
                           freqs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`kernel_from_multiplier` (exact on the band)."""
    phase = np.exp(-1j * np.outer(freqs, lags * spacing))  # (F, D)
    flat = kern.reshape(len(lags), -1)
    mult = phase @ flat
    return mult.reshape((len(freqs),) + kern.shape[1:])


def smoothstep(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, strictly increasing between."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > 0) & (x < 1)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        a = np.where(inside, np.exp(-1.0 / np.clip(x, 1e-300, None)), 0.0)
        b = np.where(inside, np.exp(-1.0 / np.clip(1.0 - x, 1e-300, None)), 0.0)
        out = np.where(inside, a / (a + b), out)
    out = np.where(x >= 1, 1.0, out)
    return out


def ramp(x, lo: float, hi: float):
    """smoothstep rescaled to rise over [lo, hi]."""
    return smoothstep((np.asarray(x, dtype=float) - lo) / (hi - lo))


_BUMP_GRID = np.linspace(0.0, 1.0, 2001)


def _bump(x):
    inside = (x > 0) & (x < 1)
    out = np.zeros_like(x)
    with np.errstate(over="ignore", divide="ignore"):
        val = np.exp(-1.0 / np.clip(x * (1.0 - x), 1e-300, None))
    return np.where(inside, val, out)


_BUMP_CDF = np.concatenate([[0.0], np.cumsum((_bump(_BUMP_GRID)[1:] + _bump(_BUMP_GRID)[:-1]) / 2.0)])
_BUMP_CDF /= _BUMP_CDF[-1]


def bump_cdf(x):
    """Normalized integral of the standard bump exp(-1/(x(1-x))) on [0,1]."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return np.interp(x, _BUMP_GRID, _BUMP_CDF)


def angdiff(a, b):
    """Signed circle distance a - b wrapped into (-pi, pi]."""
    d = np.asarray(a) - np.asarray(b)
    return (d + np.pi) % (2.0 * np.pi) - np.pi


def cubic_interp_weights(grid: np.ndarray, x: float):
    """4-point Lagrange interpolation weights on a uniform grid.

    Returns (indices, weights).  Falls back to the nearest full window at the
    grid ends; callers are responsible for keeping x inside the grid span.
    """
    n = len(grid)
    dx = grid[1] - grid[0]
    j = int(np.floor((x - grid[0]) / dx))
    j = min(max(j, 1), n - 3)
    idx = np.array([j - 1, j, j + 1, j + 2])
    w = np.ones(4)
    xs = grid[idx]
    for a in range(4):
        for b in range(4):
            if a != b:
                w[a] *= (x - xs[b]) / (xs[a] - xs[b])
    return idx, w


def offband_norm(matrix: np.ndarray, cutoff: int, fiber_dim: int, bandwidth: int) -> float:
    """Max magnitude of entries coupling modes farther apart than ``bandwidth``."""
    dim = matrix.shape[0]
    t = 2 * cutoff + 1
    if dim != t * fiber_dim:
        raise ValueError("matrix dimension does not match the link space")
    blocks = matrix.reshape(t, fiber_dim, t, fiber_dim)
    n = mode_range(cutoff)
    sep = np.abs(n[:, None] - n[None, :])
    mask = sep > bandwidth
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(blocks[mask.nonzero()[0], :, mask.nonzero()[1], :])))

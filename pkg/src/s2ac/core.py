"""Shared numerical primitives: RBF kernel, bandwidth heuristic, RNG, finite differences."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

SIGMA_MIN = 1e-3


class S2acError(Exception):
    """Base class for all library errors."""


class InvalidBandwidthError(S2acError, ValueError):
    pass


class InsufficientParticlesError(S2acError, ValueError):
    pass


class OracleFailureError(S2acError, ArithmeticError):
    pass


class DimensionError(S2acError, ValueError):
    pass


def _check_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not sigma > 0.0 or not math.isfinite(sigma):
        raise InvalidBandwidthError(f"kernel bandwidth must be positive and finite, got {sigma!r}")
    return sigma


def rbf_kernel(a_i, a_j, sigma: float):
    """``exp(-||a_i - a_j||^2 / (2 sigma^2))`` over the last axis (broadcasts)."""
    sigma = _check_sigma(sigma)
    diff = np.asarray(a_i, dtype=float) - np.asarray(a_j, dtype=float)
    return np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * sigma**2))


def rbf_kernel_grad_wrt_first(a_i, a_j, sigma: float):
    """Gradient of :func:`rbf_kernel` with respect to ``a_i``: ``-(a_i - a_j) k / sigma^2``."""
    sigma = _check_sigma(sigma)
    diff = np.asarray(a_i, dtype=float) - np.asarray(a_j, dtype=float)
    k = np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * sigma**2))
    return -diff * (k / sigma**2)[..., None]


def pairwise_differences(particles: np.ndarray) -> np.ndarray:
    """``D[..., i, j, :] = a_i - a_j`` for particles of shape ``(..., m, d)``."""
    return particles[..., :, None, :] - particles[..., None, :, :]


def bandwidth_denominator(m: int) -> float:
    return 4.0 * (2.0 * math.log(m + 1.0))


def adaptive_bandwidth(particles, sigma_min: float = SIGMA_MIN):
    """Sum of squared pairwise distances over ordered pairs, divided by ``8 ln(m + 1)``.

    Works on a single particle set ``(m, d)`` or a batch ``(..., m, d)``; the
    result falls back to ``sigma_min`` whenever the formula drops below it
    (in particular when all particles coincide).
    """
    particles = np.asarray(particles, dtype=float)
    if particles.ndim < 2:
        raise DimensionError("particles must have shape (m, d)")
    m = particles.shape[-2]
    if m < 2:
        raise InsufficientParticlesError(f"adaptive bandwidth needs at least 2 particles, got {m}")
    diff = pairwise_differences(particles)
    total = np.sum(diff * diff, axis=(-3, -2, -1))
    return np.maximum(total / bandwidth_denominator(m), sigma_min)


def finite_diff_grad(f: Callable[[np.ndarray], float], a, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    a = np.asarray(a, dtype=float)
    grad = np.empty_like(a)
    for k in range(a.size):
        e = np.zeros_like(a)
        e.flat[k] = h
        fp, fm = float(f(a + e)), float(f(a - e))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise OracleFailureError(f"non-finite function value around coordinate {k}")
        grad.flat[k] = (fp - fm) / (2.0 * h)
    return grad


def finite_diff_jacobian(f: Callable[[np.ndarray], np.ndarray], a, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian ``J[r, c] = d f_r / d a_c`` of a vector function."""
    a = np.asarray(a, dtype=float)
    cols = []
    for k in range(a.size):
        e = np.zeros_like(a)
        e.flat[k] = h
        fp, fm = np.asarray(f(a + e), dtype=float), np.asarray(f(a - e), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise OracleFailureError(f"non-finite function value around coordinate {k}")
        cols.append(((fp - fm) / (2.0 * h)).ravel())
    return np.stack(cols, axis=-1)


def fd_step(a) -> float:
    """Step used by the Jacobian/Hessian oracles: ``1e-4 * max(1, ||a||_inf)``."""
    return 1e-4 * max(1.0, float(np.max(np.abs(a))) if np.size(a) else 1.0)


class RngStream:
    """Seeded counter-based stream (Philox); normals come from Box-Muller.

    One stream per logical thread of work; never share an instance.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, size=None) -> np.ndarray:
        """Uniform draws in the open-closed interval (0, 1]."""
        return 1.0 - self._gen.random(size)

    def normal(self, size=None) -> np.ndarray:
        shape = () if size is None else (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape, dtype=int))
        half = (n + 1) // 2
        u1 = self.uniform(half)
        u2 = self.uniform(half)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def integers(self, high: int, size=None) -> np.ndarray:
        return self._gen.integers(0, high, size=size)

    def child(self, index: int) -> "RngStream":
        """Independent stream derived from this stream's seed and ``index``."""
        state = np.random.SeedSequence([self.seed, int(index)]).generate_state(1, np.uint64)
        return RngStream(int(state[0]))

"""Particle dynamics for EBM sampling: SVGD, SGLD, DLD and HMC leapfrog.

All step functions are pure: a :class:`ParticleSet` goes in, a new one comes
out.  Deterministic samplers also return the per-particle drift ``h(a)`` of
the update ``a <- a + eps * h(a)`` so the entropy module can track densities.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import (
    SIGMA_MIN,
    InvalidBandwidthError,
    S2acError,
    adaptive_bandwidth,
    fd_step,
    pairwise_differences,
)


class DivergenceError(S2acError, FloatingPointError):
    def __init__(self, step: int, message: str = "non-finite gradient"):
        super().__init__(f"{message} at step {step}")
        self.step = step


class AllOutOfRangeError(S2acError, ValueError):
    pass


@dataclass(frozen=True)
class ParticleSet:
    """``m`` particles in R^d with their initial log-density and accumulated correction."""

    particles: np.ndarray
    log_q0: np.ndarray
    logdet_correction: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.particles, dtype=float))
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "log_q0", np.asarray(self.log_q0, dtype=float).reshape(p.shape[0]))
        object.__setattr__(
            self, "logdet_correction", np.asarray(self.logdet_correction, dtype=float).reshape(p.shape[0])
        )
        if not np.all(np.isfinite(p)):
            raise ValueError("particle positions must be finite")

    @classmethod
    def from_gaussian(cls, rng, m: int, mean, variance: float) -> "ParticleSet":
        """Draw ``m`` particles from the isotropic Gaussian ``N(mean, variance I)``."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        d = mean.size
        a = mean + np.sqrt(variance) * rng.normal((m, d))
        log_q0 = -0.5 * np.sum((a - mean) ** 2, axis=1) / variance - 0.5 * d * np.log(2 * np.pi * variance)
        return cls(a, log_q0, np.zeros(m))

    @property
    def m(self) -> int:
        return self.particles.shape[0]

    @property
    def d(self) -> int:
        return self.particles.shape[1]

    @property
    def log_q(self) -> np.ndarray:
        return self.log_q0 + self.logdet_correction

    def moved(self, particles, correction=None) -> "ParticleSet":
        return dataclasses.replace(
            self,
            particles=particles,
            logdet_correction=self.logdet_correction if correction is None else correction,
            step_index=self.step_index + 1,
        )


@dataclass(frozen=True)
class SamplerConfig:
    epsilon: float = 0.5
    steps: int = 200
    m: int = 200
    bandwidth: Union[float, str] = 5.0
    hmc_mass: float = 1.0
    range_t: float | None = None
    sigma_min: float = SIGMA_MIN

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.m < 1:
            raise ValueError("m must be positive")
        if self.bandwidth != "adaptive":
            if not float(self.bandwidth) > 0:
                raise InvalidBandwidthError(f"kernel bandwidth must be positive, got {self.bandwidth!r}")
        if not self.hmc_mass > 0:
            raise ValueError("hmc_mass must be positive")

    @property
    def adaptive(self) -> bool:
        return self.bandwidth == "adaptive"


def resolve_bandwidth(particles: np.ndarray, cfg: SamplerConfig):
    if cfg.adaptive:
        return adaptive_bandwidth(particles, cfg.sigma_min)
    return float(cfg.bandwidth)


def svgd_drift(particles, scores, sigma, alpha: float = 1.0, include_self: bool = True):
    """Kernelized Stein direction for every particle.

    ``drift_i = (alpha / m) sum_j [k(a_i, a_j) grad log p(a_j) + grad_{a_j} k(a_i, a_j)]``.
    Leading batch axes are allowed: ``particles``/``scores`` ``(..., m, d)``,
    ``sigma`` scalar or ``(...)``.  With ``alpha != 1`` and ``scores = grad Q / alpha``
    this is ``k grad Q + alpha grad k``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise InvalidBandwidthError("kernel bandwidth must be positive")
    m = particles.shape[-2]
    s2 = (sigma**2)[..., None, None]
    diff = pairwise_differences(particles)
    kern = np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * s2))
    if not include_self:
        kern = kern * (1.0 - np.eye(m))
    attract = kern @ scores
    repulse = np.sum(kern[..., None] * diff, axis=-2) / s2
    return alpha * (attract + repulse) / m


def _scores(target, a, step: int):
    g = np.asarray(target.grad_log_density(a), dtype=float)
    if not np.all(np.isfinite(g)):
        raise DivergenceError(step)
    return g


def svgd_step(ps: ParticleSet, target, cfg: SamplerConfig, alpha: float = 1.0):
    """One SVGD update; returns ``(new_particle_set, drift)``."""
    if cfg.m != ps.m:
        raise ValueError(f"config expects {cfg.m} particles, particle set has {ps.m}")
    sigma = resolve_bandwidth(ps.particles, cfg)
    drift = svgd_drift(ps.particles, _scores(target, ps.particles, ps.step_index), sigma, alpha)
    return ps.moved(ps.particles + cfg.epsilon * drift), drift


def dld_step(ps: ParticleSet, target, cfg: SamplerConfig):
    """Deterministic Langevin: plain gradient ascent on ``log p``."""
    drift = _scores(target, ps.particles, ps.step_index)
    return ps.moved(ps.particles + cfg.epsilon * drift), drift


def sgld_step(ps: ParticleSet, target, cfg: SamplerConfig, rng, noise=None) -> ParticleSet:
    """Stochastic Langevin: ``a + eps grad log p(a) + sqrt(2 eps) xi``.

    ``noise`` overrides the draw of ``xi`` (used to pin the stream in tests).
    """
    drift = _scores(target, ps.particles, ps.step_index)
    xi = rng.normal(ps.particles.shape) if noise is None else np.asarray(noise, dtype=float)
    return ps.moved(ps.particles + cfg.epsilon * drift + np.sqrt(2.0 * cfg.epsilon) * xi)


def sgld_collision(target, a1, a2, xi1, epsilon: float):
    """Noise ``xi2`` sending ``a2`` to the same SGLD output as ``(a1, xi1)``.

    Existence of such a pair for ``a1 != a2`` shows the stochastic step is not
    injective once the noise is treated as an input.
    """
    a1, a2 = np.atleast_2d(a1).astype(float), np.atleast_2d(a2).astype(float)
    shift = a1 + epsilon * target.grad_log_density(a1) - a2 - epsilon * target.grad_log_density(a2)
    return np.asarray(xi1, dtype=float) + shift / np.sqrt(2.0 * epsilon)


def hessian_trace_fd(target, a, step: int = 0) -> np.ndarray:
    """Trace of the Hessian of ``log p`` per particle by central differences of the gradient."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    h = fd_step(a)
    tr = np.zeros(a.shape[0])
    for k in range(a.shape[1]):
        e = np.zeros(a.shape[1])
        e[k] = h
        gp = _scores(target, a + e, step)[:, k]
        gm = _scores(target, a - e, step)[:, k]
        tr += (gp - gm) / (2.0 * h)
    return tr


@dataclass(frozen=True)
class HmcState:
    velocity: np.ndarray


def hmc_chain(ps: ParticleSet, target, cfg: SamplerConfig, rng, velocity=None):
    """``cfg.steps`` leapfrog steps from one momentum draw (no accept/reject).

    Returns ``(final_particle_set, hessian_traces)`` where ``hessian_traces[l]``
    holds ``Tr(grad^2 log p(a^l))`` for every particle before step ``l``.
    """
    eps = cfg.epsilon
    if velocity is None:
        velocity = rng.normal(ps.particles.shape) / np.sqrt(cfg.hmc_mass)
    state = HmcState(np.array(velocity, dtype=float))
    v = state.velocity
    a = ps.particles.copy()
    traces = np.zeros((cfg.steps, ps.m))
    g = _scores(target, a, 0)
    for l in range(cfg.steps):
        traces[l] = hessian_trace_fd(target, a, l)
        v_half = v + 0.5 * eps * g
        a = a + eps * v_half
        if not np.all(np.isfinite(a)):
            raise DivergenceError(l, "non-finite position")
        g = _scores(target, a, l + 1)
        v = v_half + 0.5 * eps * g
    out = dataclasses.replace(ps, particles=a, step_index=ps.step_index + cfg.steps)
    return out, traces


def select_in_range(points, mean, std, t: float, m: int) -> np.ndarray:
    """Indices of ``m`` pool rows inside ``mean +/- t std`` (componentwise).

    Takes qualifying rows in pool order; if fewer than ``m`` qualify, the
    qualifying row nearest the mean fills the remainder.
    """
    points = np.atleast_2d(points)
    inside = np.all(np.abs(points - mean) <= t * np.asarray(std), axis=-1)
    idx = np.flatnonzero(inside)
    if idx.size == 0:
        raise AllOutOfRangeError(f"no particle within {t} standard deviations of the mean")
    if idx.size >= m:
        return idx[:m]
    nearest = idx[np.argmin(np.sum((points[idx] - mean) ** 2, axis=-1))]
    return np.concatenate([idx, np.full(m - idx.size, nearest)])


def clamp_to_range(ps: ParticleSet, mean, std, t: float, oversample_pool: ParticleSet) -> ParticleSet:
    """Keep ``ps.m`` pool particles that lie within ``t`` standard deviations of ``mean``."""
    if oversample_pool.m < ps.m:
        raise ValueError("oversample pool must hold at least as many particles as requested")
    idx = select_in_range(oversample_pool.particles, mean, std, t, ps.m)
    return ParticleSet(
        oversample_pool.particles[idx],
        oversample_pool.log_q0[idx],
        oversample_pool.logdet_correction[idx],
        oversample_pool.step_index,
    )

"""Target densities: analytic Gaussians/mixtures and Q-network-backed policy targets."""

from __future__ import annotations

import math
from typing import Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import S2acError


class UnsupportedTargetError(S2acError, TypeError):
    pass


class TargetDensity(Protocol):
    dim: int

    def log_density(self, a: np.ndarray) -> np.ndarray: ...

    def grad_log_density(self, a: np.ndarray) -> np.ndarray: ...


def _as_spd(cov, dim: int) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (dim, dim):
        raise ValueError(f"covariance must be {dim}x{dim}, got {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as err:
        raise ValueError("covariance must be positive definite") from err
    return cov


class GaussianTarget:
    """Multivariate normal ``N(mean, covariance)`` with normalized log-density."""

    def __init__(self, mean, covariance):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.dim = self.mean.size
        self.covariance = _as_spd(covariance, self.dim)
        self.precision = np.linalg.inv(self.covariance)
        _, self._logdet = np.linalg.slogdet(self.covariance)
        self._log_norm = 0.5 * self.dim * math.log(2.0 * math.pi) + 0.5 * self._logdet

    @classmethod
    def isotropic(cls, mean, variance: float) -> "GaussianTarget":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(mean, float(variance) * np.eye(mean.size))

    def log_density(self, a):
        diff = np.asarray(a, dtype=float) - self.mean
        quad = np.einsum("...i,ij,...j->...", diff, self.precision, diff)
        return -0.5 * quad - self._log_norm

    def grad_log_density(self, a):
        diff = np.asarray(a, dtype=float) - self.mean
        return -diff @ self.precision

    def hessian_log_density(self, a):
        a = np.asarray(a, dtype=float)
        return np.broadcast_to(-self.precision, a.shape[:-1] + (self.dim, self.dim))

    def entropy(self) -> float:
        return 0.5 * self.dim * math.log(2.0 * math.pi * math.e) + 0.5 * self._logdet

    def sample(self, rng, n: int) -> np.ndarray:
        chol = np.linalg.cholesky(self.covariance)
        return self.mean + rng.normal((n, self.dim)) @ chol.T


class GmmTarget:
    """Finite Gaussian mixture; log-density via log-sum-exp over components."""

    def __init__(self, weights: Sequence[float], means, covariances):
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights <= 0) or np.any(self.weights > 1) or not math.isclose(self.weights.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("mixture weights must lie in (0, 1] and sum to 1")
        self.components = [GaussianTarget(mu, cov) for mu, cov in zip(means, covariances)]
        if len(self.components) != self.weights.size:
            raise ValueError("need one mean and covariance per weight")
        self.dim = self.components[0].dim
        self._log_w = np.log(self.weights)

    @classmethod
    def ring(cls, n_modes: int, radius: float = 3.0, variance: float = 0.1) -> "GmmTarget":
        """Equal-weight mixture with modes evenly spaced on a circle in 2-D."""
        angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
        means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        covs = [variance * np.eye(2)] * n_modes
        return cls(np.full(n_modes, 1.0 / n_modes), means, covs)

    def _component_logs(self, a):
        return np.stack([c.log_density(a) for c in self.components], axis=-1) + self._log_w

    def log_density(self, a):
        return logsumexp(self._component_logs(a), axis=-1)

    def grad_log_density(self, a):
        logs = self._component_logs(a)
        resp = np.exp(logs - logsumexp(logs, axis=-1, keepdims=True))
        grads = np.stack([c.grad_log_density(a) for c in self.components], axis=-2)
        return np.sum(resp[..., None] * grads, axis=-2)

    def entropy(self) -> float:
        raise UnsupportedTargetError("Gaussian mixtures have no closed-form entropy")


class QBackedTarget:
    """Unnormalized policy target ``exp(Q(s, a) / alpha)`` for a fixed state.

    ``critic`` must expose ``value``, ``action_grad`` and ``action_hvp`` taking
    ``(states, actions)`` batches (see :class:`s2ac.neural.QNetwork`).
    """

    def __init__(self, critic, state, alpha: float):
        if alpha <= 0:
            raise ValueError("temperature alpha must be positive")
        self.critic = critic
        self.state = np.atleast_1d(np.asarray(state, dtype=float))
        self.alpha = float(alpha)
        self.dim = critic.action_dim

    def _states(self, a):
        return np.broadcast_to(self.state, a.shape[:-1] + self.state.shape)

    def q_value(self, a):
        a = np.asarray(a, dtype=float)
        return self.critic.value(self._states(a), a)

    def q_grad(self, a):
        a = np.asarray(a, dtype=float)
        return self.critic.action_grad(self._states(a), a)

    def log_density(self, a):
        return self.q_value(a) / self.alpha

    def grad_log_density(self, a):
        return self.q_grad(a) / self.alpha

    def entropy(self) -> float:
        raise UnsupportedTargetError("Q-backed targets are unnormalized; no closed-form entropy")


def ground_truth_entropy(target) -> float:
    if not isinstance(target, GaussianTarget):
        raise UnsupportedTargetError(f"ground-truth entropy needs a Gaussian target, got {type(target).__name__}")
    return target.entropy()


# Entropy-evaluation target and initial distribution used throughout the experiments.
FIG4_TARGET_MEAN = (-0.69, 0.8)
FIG4_TARGET_COV = ((1.13, 0.82), (0.82, 3.39))
FIG4_INITIAL_VARIANCE = 6.0

"""Small fully-connected networks in plain numpy with hand-written reverse mode.

Parameters live in one flat float64 vector; per-layer weights and biases are
views into it, so optimizers and Polyak averaging work on the whole vector.
Inputs may carry any number of leading batch axes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DimensionError, S2acError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
ACTIVATIONS = ("relu", "elu")


class CheckpointError(S2acError, ValueError):
    pass


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _act_d1(z, kind):
    # subgradient 0 at the ReLU kink
    if kind == "relu":
        return z > 0
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _act_d2(z, kind):
    if kind == "relu":
        return np.zeros_like(z)
    return np.where(z > 0, 0.0, np.exp(np.minimum(z, 0.0)))


class MlpNetwork:
    """Affine layers with a hidden activation and a linear output layer."""

    def __init__(self, sizes: Sequence[int], activation: str = "relu", params=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise DimensionError(f"invalid layer sizes {self.sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        self.activation = activation
        self._shapes = list(zip(self.sizes[:-1], self.sizes[1:]))
        self.n_params = sum(i * o + o for i, o in self._shapes)
        self.params = np.zeros(self.n_params) if params is None else np.array(params, dtype=float)
        if self.params.shape != (self.n_params,):
            raise DimensionError(f"expected {self.n_params} parameters, got {self.params.shape}")

    @classmethod
    def initialized(cls, sizes, rng, activation: str = "relu") -> "MlpNetwork":
        """Uniform fan-in init: every weight and bias in ``+/- 1/sqrt(fan_in)``."""
        net = cls(sizes, activation)
        chunks = []
        for fan_in, fan_out in net._shapes:
            bound = 1.0 / math.sqrt(fan_in)
            chunks.append(bound * (2.0 * rng.uniform(fan_in * fan_out + fan_out) - 1.0))
        net.params = np.concatenate(chunks)
        return net

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def layers(self, params=None):
        """``[(W, b), ...]`` views with ``W`` of shape ``(fan_in, fan_out)``."""
        p = self.params if params is None else params
        out, pos = [], 0
        for i, o in self._shapes:
            w = p[pos : pos + i * o].reshape(i, o)
            pos += i * o
            out.append((w, p[pos : pos + o]))
            pos += o
        return out

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.sizes, self.activation, self.params.copy())

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.input_dim,):
            raise DimensionError(f"input last axis must be {self.input_dim}, got shape {x.shape}")
        return x

    @staticmethod
    def _flat(x):
        # 2-D matmuls hit BLAS; stacked ones do not
        return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))

    def _forward_cache(self, x):
        hs, zs = [x], []
        layers = self.layers()
        for k, (w, b) in enumerate(layers):
            z = hs[-1] @ w + b
            zs.append(z)
            hs.append(z if k == len(layers) - 1 else _act(z, self.activation))
        return hs, zs

    def forward(self, x):
        x = self._check(x)
        lead = x.shape[:-1]
        out = self._flat(x)
        layers = self.layers()
        for k, (w, b) in enumerate(layers):
            out = out @ w + b
            if k < len(layers) - 1:
                out = _act(out, self.activation)
        return out.reshape(lead + (self.output_dim,))

    __call__ = forward

    def backward(self, x, upstream):
        """Gradients of ``sum(upstream * forward(x))``.

        Returns ``(param_grad, input_grad)``; the parameter gradient is summed
        over all batch rows, the input gradient has the shape of ``x``.
        """
        x = self._check(x)
        lead = x.shape[:-1]
        hs, zs = self._forward_cache(self._flat(x))
        g = self._flat(np.broadcast_to(np.asarray(upstream, dtype=float), lead + (self.output_dim,)))
        grads = []
        layers = self.layers()
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            if k < len(layers) - 1:
                g = g * _act_d1(zs[k], self.activation)
            grads.append((hs[k].T @ g).ravel())
            grads.append(g.sum(axis=0))
            g = g @ w.T
        # grads were collected last layer first as (W, b) pairs
        pairs = [(grads[2 * i], grads[2 * i + 1]) for i in range(len(layers))][::-1]
        return np.concatenate([c for pair in pairs for c in pair]), g.reshape(x.shape)

    def input_grad(self, x, upstream):
        """Input gradient only; cheaper than :meth:`backward` when parameters are frozen."""
        x = self._check(x)
        lead = x.shape[:-1]
        layers = self.layers()
        zs, h = [], self._flat(x)
        for k, (w, b) in enumerate(layers[:-1]):
            z = h @ w + b
            zs.append(z)
            h = _act(z, self.activation)
        up = self._flat(np.broadcast_to(np.asarray(upstream, dtype=float), lead + (self.output_dim,)))
        g = up @ layers[-1][0].T
        for k in range(len(layers) - 2, -1, -1):
            g = (g * _act_d1(zs[k], self.activation)) @ layers[k][0].T
        return g.reshape(x.shape)

    def input_hvp(self, x, upstream, direction):
        """Directional derivative of the input gradient of ``upstream . f(x)`` along ``direction``.

        For a scalar output and ``upstream = 1`` this is the input Hessian
        times ``direction``.  Forward tangent pass followed by a tangent
        reverse pass (Pearlmutter's R-operator).
        """
        x = self._check(x)
        lead = x.shape[:-1]
        v = self._flat(np.broadcast_to(np.asarray(direction, dtype=float), x.shape))
        layers = self.layers()
        hs, zs = self._forward_cache(self._flat(x))
        dzs, dh = [], v
        for k, (w, _) in enumerate(layers):
            dz = dh @ w
            dzs.append(dz)
            dh = dz if k == len(layers) - 1 else _act_d1(zs[k], self.activation) * dz
        g = self._flat(np.broadcast_to(np.asarray(upstream, dtype=float), lead + (self.output_dim,)))
        dg = np.zeros_like(zs[-1])
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            if k < len(layers) - 1:
                d1 = _act_d1(zs[k], self.activation)
                dg = dg * d1 + g * _act_d2(zs[k], self.activation) * dzs[k]
                g = g * d1
            g = g @ w.T
            dg = dg @ w.T
        return dg.reshape(x.shape)

    def input_hessian(self, x):
        """Full input Hessian of a scalar-output network, shape ``(..., n_in, n_in)``."""
        if self.output_dim != 1:
            raise DimensionError("input_hessian needs a scalar-output network")
        x = self._check(x)
        cols = [self.input_hvp(x, 1.0, np.eye(self.input_dim)[k]) for k in range(self.input_dim)]
        return np.stack(cols, axis=-1)

    def save(self, path) -> None:
        header = {"sizes": list(self.sizes), "activation": self.activation, "n_params": self.n_params}
        with open(path, "wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
            fh.write(self.params.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "MlpNetwork":
        raw = Path(path).read_bytes()
        head, _, body = raw.partition(b"\n")
        try:
            header = json.loads(head)
        except json.JSONDecodeError as err:
            raise CheckpointError(f"{path}: bad checkpoint header") from err
        params = np.frombuffer(body, dtype="<f8").astype(float)
        if params.size != header.get("n_params"):
            raise CheckpointError(f"{path}: expected {header.get('n_params')} parameters, found {params.size}")
        return cls(header["sizes"], header["activation"], params)


@dataclass
class AdamState:
    n_params: int
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n_params)
        if self.v is None:
            self.v = np.zeros(self.n_params)
        if self.m.shape != (self.n_params,) or self.v.shape != (self.n_params,):
            raise DimensionError("Adam moments must match the parameter count")


def adam_step(state: AdamState, params, grad):
    """Bias-corrected Adam; returns ``(new_params, new_state)`` without mutating inputs."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != state.m.shape or grad.shape != state.m.shape:
        raise DimensionError("params, grad and Adam moments must have equal length")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(state.n_params, state.lr, state.beta1, state.beta2, state.eps, t, m, v)


def polyak_update(target_params, online_params, tau: float):
    target_params = np.asarray(target_params, dtype=float)
    online_params = np.asarray(online_params, dtype=float)
    if target_params.shape != online_params.shape:
        raise DimensionError("target and online parameter vectors differ in length")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return (1.0 - tau) * target_params + tau * online_params


class GaussianHead:
    """State-conditioned diagonal Gaussian ``N(mu(s), sigma(s)^2)``.

    One trunk whose final linear layer has ``2 d`` outputs: the first ``d``
    are the mean, the rest the raw log standard deviation, clamped to
    ``[LOG_STD_MIN, LOG_STD_MAX]``.
    """

    def __init__(self, net: MlpNetwork, action_dim: int):
        if net.output_dim != 2 * action_dim:
            raise DimensionError("trunk output must be twice the action dimension")
        self.net = net
        self.action_dim = action_dim

    @classmethod
    def initialized(cls, state_dim, action_dim, hidden, rng, activation="relu") -> "GaussianHead":
        sizes = [state_dim, *hidden, 2 * action_dim]
        return cls(MlpNetwork.initialized(sizes, rng, activation), action_dim)

    @property
    def params(self):
        return self.net.params

    @params.setter
    def params(self, value):
        self.net.params = np.asarray(value, dtype=float)

    def _split(self, out):
        d = self.action_dim
        return out[..., :d], out[..., d:]

    def mean_log_std(self, states):
        mu, raw = self._split(self.net.forward(states))
        return mu, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, states, xi):
        """Reparameterized draw ``mu + exp(log_std) * xi``; returns ``(a, mu, log_std)``."""
        mu, log_std = self.mean_log_std(states)
        xi = np.asarray(xi, dtype=float)
        if xi.ndim > mu.ndim:
            # extra particle axis just before the action axis
            return mu[..., None, :] + np.exp(log_std)[..., None, :] * xi, mu, log_std
        return mu + np.exp(log_std) * xi, mu, log_std

    def backward(self, states, grad_mu, grad_log_std):
        """Parameter gradient given upstream gradients on ``mu`` and the clamped ``log_std``."""
        _, raw = self._split(self.net.forward(states))
        inside = (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)
        upstream = np.concatenate([grad_mu, grad_log_std * inside], axis=-1)
        return self.net.backward(states, upstream)[0]


class QNetwork:
    """Critic ``Q(s, a)`` over the concatenated input ``[s, a]`` with a scalar output.

    With ``action_bounds = (low, high)`` the network reads ``clip(a)``, so the
    critic is flat outside the box exactly like an environment that clips
    its actions; gradients and Hessian products are masked accordingly.
    """

    def __init__(self, net: MlpNetwork, state_dim: int, action_dim: int, action_bounds=None):
        if net.input_dim != state_dim + action_dim or net.output_dim != 1:
            raise DimensionError("Q network must map state+action to a scalar")
        self.net = net
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.action_bounds = None if action_bounds is None else (float(action_bounds[0]), float(action_bounds[1]))

    @classmethod
    def initialized(cls, state_dim, action_dim, hidden, rng, activation="relu", action_bounds=None) -> "QNetwork":
        net = MlpNetwork.initialized([state_dim + action_dim, *hidden, 1], rng, activation)
        return cls(net, state_dim, action_dim, action_bounds)

    def copy(self) -> "QNetwork":
        return QNetwork(self.net.copy(), self.state_dim, self.action_dim, self.action_bounds)

    @property
    def params(self):
        return self.net.params

    @params.setter
    def params(self, value):
        self.net.params = np.asarray(value, dtype=float)

    def _inputs(self, states, actions):
        states = np.asarray(states, dtype=float)
        actions = np.asarray(actions, dtype=float)
        if self.action_bounds is not None:
            actions = np.clip(actions, *self.action_bounds)
        shape = np.broadcast_shapes(states.shape[:-1], actions.shape[:-1])
        return np.concatenate(
            [np.broadcast_to(states, shape + states.shape[-1:]), np.broadcast_to(actions, shape + actions.shape[-1:])],
            axis=-1,
        )

    def _mask(self, actions):
        if self.action_bounds is None:
            return 1.0
        low, high = self.action_bounds
        return ((actions >= low) & (actions <= high)).astype(float)

    def value(self, states, actions):
        return self.net.forward(self._inputs(states, actions))[..., 0]

    def action_grad(self, states, actions):
        x = self._inputs(states, actions)
        return self.net.input_grad(x, 1.0)[..., self.state_dim :] * self._mask(np.asarray(actions, dtype=float))

    def action_hvp(self, states, actions, direction):
        """Hessian of ``Q`` in the action times ``direction`` (zero a.e. for ReLU)."""
        x = self._inputs(states, actions)
        if self.net.activation == "relu":
            return np.zeros(x.shape[:-1] + (self.action_dim,))
        mask = self._mask(np.asarray(actions, dtype=float))
        direction = np.broadcast_to(np.asarray(direction, dtype=float) * mask, x.shape[:-1] + (self.action_dim,))
        v = np.concatenate([np.zeros(x.shape[:-1] + (self.state_dim,)), direction], axis=-1)
        return self.net.input_hvp(x, 1.0, v)[..., self.state_dim :] * mask

    def param_grad(self, states, actions, upstream):
        """Parameter gradient of ``sum(upstream * Q(s, a))``."""
        x = self._inputs(states, actions)
        return self.net.backward(x, np.asarray(upstream, dtype=float)[..., None])[0]

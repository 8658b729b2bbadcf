"""Actor-critic with an SVGD-refined, entropy-tracked policy.

The policy draws particles from a state-conditioned Gaussian, moves them with
``L`` SVGD steps on ``exp(Q(s, .) / alpha)`` and carries each particle's
log-density along in closed form.  The actor gradient is back-propagated by
hand through every SVGD step (including the adaptive bandwidth and the
entropy correction).  With ``L = 0`` everything collapses to Gaussian SAC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from .core import S2acError, adaptive_bandwidth, bandwidth_denominator, pairwise_differences
from .entropy import EntropyEstimate
from .neural import AdamState, GaussianHead, MlpNetwork, QNetwork, adam_step, polyak_update
from .samplers import DivergenceError, ParticleSet


class NumericAbortError(S2acError, FloatingPointError):
    def __init__(self, message: str, checkpoint: Optional[str] = None):
        super().__init__(message if checkpoint is None else f"{message} (checkpoint: {checkpoint})")
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class AgentConfig:
    alpha: float = 1.0
    gamma: float = 0.8
    lr: float = 3e-4
    batch_size: int = 100
    tau: float = 0.005
    hidden: tuple = (256, 256)
    activation: str = "relu"
    epsilon: float = 0.01
    svgd_steps: int = 10
    particles: int = 10
    range_t: Optional[float] = 3.0
    bandwidth: object = "adaptive"
    sigma_min: float = 1e-3
    init_variance: float = 0.3
    buffer_capacity: int = 1_000_000
    amortized: bool = False
    action_low: float = -1.0
    action_high: float = 1.0
    critic_clip: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.svgd_steps < 0 or self.particles < 1 or self.batch_size < 1:
            raise ValueError("svgd_steps >= 0, particles >= 1 and batch_size >= 1 required")
        if self.bandwidth != "adaptive" and not float(self.bandwidth) > 0:
            raise ValueError("bandwidth must be 'adaptive' or positive")
        if self.svgd_steps > 0 and self.bandwidth == "adaptive" and self.particles < 2:
            raise ValueError("adaptive bandwidth needs at least 2 particles")


# --------------------------------------------------------------------------- replay


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return self.r.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring buffer; oldest transitions are evicted first."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._s = np.zeros((capacity, state_dim))
        self._a = np.zeros((capacity, action_dim))
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, state_dim))
        self._d = np.zeros(capacity)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition) -> None:
        values = (t.s, t.a, t.r, t.s_next, float(t.done))
        if not all(np.all(np.isfinite(v)) for v in values):
            raise ValueError("transition contains non-finite values")
        i = self._next
        self._s[i], self._a[i], self._r[i], self._s2[i], self._d[i] = values
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _ordered(self):
        start = self._next if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def contents(self) -> Batch:
        """All stored transitions, oldest first."""
        return self._take(self._ordered())

    def _take(self, idx) -> Batch:
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx])

    def sample(self, rng, n: int) -> Batch:
        if self.size < n:
            raise ValueError(f"buffer holds {self.size} transitions, batch of {n} requested")
        return self._take(rng.integers(self.size, n))


# --------------------------------------------------------------------------- agent


class S2acAgent:
    def __init__(self, state_dim: int, action_dim: int, cfg: AgentConfig, rng):
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        hidden = tuple(cfg.hidden)
        bounds = (cfg.action_low, cfg.action_high) if cfg.critic_clip else None
        self.q = QNetwork.initialized(state_dim, action_dim, hidden, rng, cfg.activation, bounds)
        self.q_target = self.q.copy()
        self.head = GaussianHead.initialized(state_dim, action_dim, hidden, rng, cfg.activation)
        # start near N(0, init_variance I) whatever the state
        w, b = self.head.net.layers()[-1]
        w *= 1e-2
        b[:action_dim] = 0.0
        b[action_dim:] = 0.5 * math.log(cfg.init_variance)
        self.amortized = (
            MlpNetwork.initialized([state_dim + action_dim, *hidden, action_dim], rng, cfg.activation)
            if cfg.amortized
            else None
        )
        self.q_opt = AdamState(self.q.net.n_params, cfg.lr)
        self.head_opt = AdamState(self.head.net.n_params, cfg.lr)
        self.amortized_opt = AdamState(self.amortized.n_params, cfg.lr) if cfg.amortized else None
        self.last_entropy = float("nan")

    def networks(self) -> dict:
        nets = {"q": self.q.net, "q_target": self.q_target.net, "head": self.head.net}
        if self.amortized is not None:
            nets["amortized"] = self.amortized
        return nets

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, net in self.networks().items():
            net.save(directory / f"{name}.bin")

    def load(self, directory) -> None:
        for name, net in self.networks().items():
            loaded = MlpNetwork.load(Path(directory) / f"{name}.bin")
            if loaded.sizes != net.sizes:
                raise ValueError(f"checkpoint {name} has sizes {loaded.sizes}, agent expects {net.sizes}")
            net.params = loaded.params


@dataclass
class PolicyBatch:
    """Particles for a batch of states: ``(B, m, d)`` final positions and log-densities."""

    particles: np.ndarray
    log_q0: np.ndarray
    log_q: np.ndarray
    noise: np.ndarray
    mu: np.ndarray
    log_std: np.ndarray
    tape: list = field(default_factory=list, repr=False)

    @property
    def entropy(self) -> np.ndarray:
        return -np.mean(self.log_q, axis=-1)


def draw_noise(cfg: AgentConfig, batch: int, action_dim: int, rng) -> np.ndarray:
    """Standard-normal draws, range-selected when ``range_t`` is set.

    Oversamples ``2 m`` candidates per state and keeps ``m`` inside
    ``+/- t`` standard deviations; a state with no candidate inside gets
    all-zero noise, i.e. every particle at the mean.
    """
    m = cfg.particles
    if cfg.range_t is None:
        return rng.normal((batch, m, action_dim))
    pool = rng.normal((batch, 2 * m, action_dim))
    return _range_select(pool, cfg.range_t, m)


def _range_select(pool, t: float, m: int):
    """Batched :func:`select_in_range` around mean 0 / std 1 with the all-out fallback to zero."""
    inside = np.all(np.abs(pool) <= t, axis=-1)
    order = np.argsort(~inside, axis=-1, kind="stable")[:, :m]
    count = inside.sum(axis=-1)
    dist = np.where(inside, np.sum(pool**2, axis=-1), np.inf)
    nearest = np.argmin(dist, axis=-1)
    idx = np.where(np.arange(m)[None, :] < count[:, None], order, nearest[:, None])
    out = np.take_along_axis(pool, idx[..., None], axis=1)
    out[count == 0] = 0.0
    return out


def _bandwidth(cfg: AgentConfig, particles):
    if cfg.bandwidth == "adaptive":
        return adaptive_bandwidth(particles, cfg.sigma_min)
    return np.full(particles.shape[:-2], float(cfg.bandwidth))


def _gaussian_logq0(noise, log_std):
    d = noise.shape[-1]
    return -0.5 * np.sum(noise**2, axis=-1) - np.sum(log_std, axis=-1)[..., None] - 0.5 * d * math.log(2 * math.pi)


def svgd_unroll(critic, states, a0, log_q0, cfg: AgentConfig, alpha: float, keep_tape: bool = False):
    """``L`` batched SVGD steps on ``exp(Q(s, .)/alpha)`` with closed-form log-density tracking.

    ``states`` ``(B, n_s)``, ``a0`` ``(B, m, d)``.  Returns ``(a_L, log_q_L, tape)``.
    """
    a = np.array(a0, dtype=float)
    correction = np.zeros(a.shape[:-1])
    st = np.asarray(states, dtype=float)[:, None, :]
    tape = []
    for step in range(cfg.svgd_steps):
        g = critic.action_grad(st, a)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(step)
        drift, trace, sigma = _fused_step(a, g, cfg, alpha)
        if keep_tape:
            tape.append((a, g, sigma))
        correction = correction - cfg.epsilon * trace
        a = a + cfg.epsilon * drift
    return a, log_q0 + correction, tape


def _fused_step(a, g, cfg: AgentConfig, alpha: float):
    """SVGD drift, closed-form trace and bandwidth from one pairwise-difference pass.

    Same quantities as :func:`svgd_drift` (with ``scores = g / alpha``),
    :func:`svgd_trace_closed_form` and the bandwidth rule, batched over states.
    """
    m, d = a.shape[-2:]
    diff = pairwise_differences(a)
    sq = np.einsum("...ijk,...ijk->...ij", diff, diff)
    if cfg.bandwidth == "adaptive":
        if m < 2:
            raise ValueError("adaptive bandwidth needs at least 2 particles")
        sigma = np.maximum(sq.sum(axis=(-2, -1)) / bandwidth_denominator(m), cfg.sigma_min)
    else:
        sigma = np.full(a.shape[:-2], float(cfg.bandwidth))
    s2 = (sigma**2)[..., None, None]
    kern = np.exp(-sq / (2.0 * s2))
    kd = kern[..., None] * diff
    drift = (kern @ g + alpha * kd.sum(axis=-2) / s2) / m
    # diagonal terms vanish except the k_ii * d * alpha constant, removed below
    proj = np.einsum("...ijk,...jk->...ij", kd, g)
    row = -proj.sum(axis=-1) - alpha * np.sum(kern * sq, axis=-1) / s2[..., 0] + d * alpha * (kern.sum(axis=-1) - 1.0)
    return drift, row / (m * s2[..., 0]), sigma


def sample_policy_batch(agent: S2acAgent, states, rng=None, noise=None, keep_tape: bool = False) -> PolicyBatch:
    """Particles and tracked log-densities for every state in ``states``.

    Exactly one of ``rng`` / ``noise`` is used; ``noise`` must have shape
    ``(B, m, d)`` and is taken as the already range-selected draw.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if noise is None:
        noise = draw_noise(agent.cfg, states.shape[0], agent.action_dim, rng)
    mu, log_std = agent.head.mean_log_std(states)
    a0 = mu[:, None, :] + np.exp(log_std)[:, None, :] * noise
    log_q0 = _gaussian_logq0(noise, log_std)
    a, log_q, tape = svgd_unroll(agent.q, states, a0, log_q0, agent.cfg, agent.cfg.alpha, keep_tape)
    return PolicyBatch(a, log_q0, log_q, noise, mu, log_std, tape)


def sample_policy(agent: S2acAgent, state, rng, noise=None):
    """Single-state policy draw: ``(ParticleSet, EntropyEstimate)``."""
    pb = sample_policy_batch(agent, np.asarray(state, dtype=float)[None, :], rng, None if noise is None else noise[None])
    ps = ParticleSet(pb.particles[0], pb.log_q0[0], pb.log_q[0] - pb.log_q0[0], agent.cfg.svgd_steps)
    return ps, EntropyEstimate.from_logq(pb.log_q[0], "closed-form-svgd")


def emit(agent: S2acAgent, particles):
    """Clip particles to the action box; only applied to actions leaving the policy."""
    return np.clip(particles, agent.cfg.action_low, agent.cfg.action_high)


def select_action(agent: S2acAgent, state, rng, greedy: bool = False):
    """Uniformly random particle when exploring, max-Q particle when greedy."""
    ps, _ = sample_policy(agent, state, rng)
    actions = emit(agent, ps.particles)
    if greedy:
        return actions[int(np.argmax(agent.q.value(np.asarray(state)[None, :], actions)))]
    return actions[int(rng.integers(actions.shape[0]))]


# --------------------------------------------------------------------------- critic


def _target_with_policy(agent: S2acAgent, batch: Batch, rng, noise):
    cfg = agent.cfg
    pb = sample_policy_batch(agent, batch.s_next, rng, noise)
    q_next = agent.q_target.value(batch.s_next[:, None, :], emit(agent, pb.particles)).mean(axis=-1)
    boot = q_next + cfg.alpha * pb.entropy
    return batch.r + cfg.gamma * (1.0 - batch.done) * boot, pb


def critic_target(agent: S2acAgent, batch: Batch, rng=None, noise=None):
    """``r + gamma (1 - done) [mean_i Qbar(s', a_i') + alpha H(s')]`` with fresh particles at ``s'``."""
    return _target_with_policy(agent, batch, rng, noise)[0]


def critic_update(agent: S2acAgent, batch: Batch, rng=None, noise=None) -> float:
    """One Adam step on the mean squared Bellman error; returns the loss before the step.

    The mean next-state entropy estimate is kept on ``agent.last_entropy``.
    """
    y, pb = _target_with_policy(agent, batch, rng, noise)
    agent.last_entropy = float(np.mean(pb.entropy))
    q = agent.q.value(batch.s, batch.a)
    err = q - y
    loss = float(np.mean(err**2))
    grad = agent.q.param_grad(batch.s, batch.a, 2.0 * err / err.size)
    agent.q.params, agent.q_opt = adam_step(agent.q_opt, agent.q.params, grad)
    return loss


# --------------------------------------------------------------------------- actor


def actor_objective(agent: S2acAgent, states, noise) -> float:
    """``mean_s [ mean_i Q(s, a_i^L) + alpha H(s) ]`` for a fixed noise draw."""
    pb = sample_policy_batch(agent, states, noise=noise)
    q = agent.q.value(np.asarray(states)[:, None, :], pb.particles)
    return float(np.mean(q.mean(axis=-1) + agent.cfg.alpha * pb.entropy))


def _unroll_adjoint(agent: S2acAgent, states, tape, a_bar):
    """Pull ``a_bar = dF/da^L`` back to ``dF/da^0``, adding the entropy correction's own gradient.

    Per state ``F = mean_i Q(a_i^L) - alpha mean_i log q_i^L``; the tracked
    part of ``-alpha mean log q^L`` is ``(alpha eps / m) sum_l sum_i tr_i^l``.
    """
    cfg = agent.cfg
    alpha, eps = cfg.alpha, cfg.epsilon
    st = np.asarray(states, dtype=float)[:, None, :]
    for a, g, sigma in reversed(tape):
        m, d = a.shape[-2:]
        w = alpha * eps / m
        u = eps * a_bar
        diff = pairwise_differences(a)
        sq = np.sum(diff * diff, axis=-1)
        s2 = (sigma**2)[:, None, None]
        sig3 = sigma**3
        kern = np.exp(-sq / (2.0 * s2))
        off = 1.0 - np.eye(m)
        # drift: sum_i u_i . (1/m) sum_j k_ij (g_j + alpha/s^2 D_ij)
        ug = np.einsum("bid,bjd->bij", u, g)
        ud = np.einsum("bid,bijd->bij", u, diff)
        k_bar = (ug + alpha * ud / s2) / m
        g_bar = np.einsum("bij,bid->bjd", kern, u) / m
        d_bar = (alpha / (m * s2))[..., None] * kern[..., None] * u[:, :, None, :]
        sig_bar = -(2.0 * alpha / (m * sig3)) * np.sum(kern * ud, axis=(-2, -1))
        # trace: w/(m s^2) sum_{i != j} k_ij c_ij
        proj = np.einsum("bijd,bjd->bij", diff, g)
        c = -proj - alpha * sq / s2 + d * alpha
        pre = w / (m * s2)
        kc = kern * off
        total = np.sum(pre * kc * c, axis=(-2, -1))
        k_bar = k_bar + pre * c * off
        c_bar = pre * kc
        sig_bar = sig_bar - 2.0 * total / sigma + np.sum(c_bar * 2.0 * alpha * sq, axis=(-2, -1)) / sig3
        d_bar = d_bar - c_bar[..., None] * g[:, None, :, :]
        g_bar = g_bar - np.einsum("bij,bijd->bjd", c_bar, diff)
        s_bar = -c_bar * alpha / s2
        # kernel value
        s_bar = s_bar - k_bar * kern / (2.0 * s2)
        sig_bar = sig_bar + np.sum(k_bar * kern * sq, axis=(-2, -1)) / sig3
        if cfg.bandwidth == "adaptive":
            raw = np.sum(sq, axis=(-2, -1)) / bandwidth_denominator(m)
            active = (raw >= cfg.sigma_min).astype(float)
            s_bar = s_bar + (sig_bar * active / bandwidth_denominator(m))[:, None, None]
        d_bar = d_bar + 2.0 * s_bar[..., None] * diff
        a_bar = a_bar + d_bar.sum(axis=2) - d_bar.sum(axis=1) + agent.q.action_hvp(st, a, g_bar)
    return a_bar


def actor_gradient(agent: S2acAgent, states, noise):
    """``(objective, d objective / d theta)`` through the reparameterized draw and all SVGD steps."""
    cfg = agent.cfg
    states = np.atleast_2d(np.asarray(states, dtype=float))
    pb = sample_policy_batch(agent, states, noise=noise, keep_tape=True)
    st = states[:, None, :]
    m = pb.particles.shape[-2]
    q = agent.q.value(st, pb.particles)
    objective = float(np.mean(q.mean(axis=-1) + cfg.alpha * pb.entropy))
    a_bar = agent.q.action_grad(st, pb.particles) / m
    a_bar = _unroll_adjoint(agent, states, pb.tape, a_bar)
    n = states.shape[0]
    std = np.exp(pb.log_std)
    grad_mu = a_bar.sum(axis=1) / n
    # -alpha mean log q^0 contributes alpha * sum_k log_std_k
    grad_log_std = (np.sum(a_bar * pb.noise, axis=1) * std + cfg.alpha) / n
    return objective, agent.head.backward(states, grad_mu, grad_log_std)


def actor_update(agent: S2acAgent, states, rng=None, noise=None) -> float:
    """One Adam step on ``theta`` minimizing the negated objective; returns the loss before the step."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if noise is None:
        noise = draw_noise(agent.cfg, states.shape[0], agent.action_dim, rng)
    objective, grad = actor_gradient(agent, states, noise)
    agent.head.params, agent.head_opt = adam_step(agent.head_opt, agent.head.params, -grad)
    return -objective


# --------------------------------------------------------------------------- amortized sampler


def stein_direction(critic, state, reference, points, sigma, alpha: float):
    """``(1/m) sum_i [k(a_i, x) grad Q(a_i) + alpha (x - a_i) k(a_i, x) / sigma^2]`` at each row ``x``."""
    st = np.asarray(state, dtype=float)[None, :]
    gq = critic.action_grad(st, reference)
    diff = points[:, None, :] - reference[None, :, :]
    kern = np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * sigma**2))
    return (kern @ gq + alpha * np.sum(kern[..., None] * diff, axis=1) / sigma**2) / reference.shape[0]


def amortized_sample(agent: S2acAgent, states, z):
    states = np.asarray(states, dtype=float)
    shape = z.shape[:-1] + (agent.state_dim,)
    x = np.concatenate([np.broadcast_to(states[..., None, :] if z.ndim > states.ndim else states, shape), z], axis=-1)
    return x, agent.amortized.forward(x)


def amortized_update(agent: S2acAgent, states, rng, z=None) -> float:
    """Nudge ``f_psi(s, z)`` along the Stein direction of the current policy particles.

    ``-direction`` is fed as the upstream gradient, so an Adam step moves
    outputs along the direction.  Returns the mean squared direction norm.
    """
    if agent.amortized is None:
        raise S2acError("agent has no amortized network")
    cfg = agent.cfg
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n, m, d = states.shape[0], cfg.particles, agent.action_dim
    if z is None:
        z = rng.normal((n, m, d))
    x, out = amortized_sample(agent, states, z)
    pb = sample_policy_batch(agent, states, rng)
    direction = np.zeros_like(out)
    for b in range(n):
        ref = pb.particles[b]
        sigma = float(_bandwidth(cfg, ref))
        direction[b] = stein_direction(agent.q, states[b], ref, out[b], sigma, cfg.alpha)
    if not np.any(direction):
        return 0.0
    grad, _ = agent.amortized.backward(x, -direction / (n * m))
    agent.amortized.params, agent.amortized_opt = adam_step(agent.amortized_opt, agent.amortized.params, grad)
    return float(np.mean(np.sum(direction**2, axis=-1)))


# --------------------------------------------------------------------------- oracle


def softmax_policy_oracle(q_values, alpha: float) -> np.ndarray:
    """``exp(Q / alpha) / Z`` over a discrete action set."""
    q = np.asarray(q_values, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("q_values must be finite")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    z = q / alpha
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


# --------------------------------------------------------------------------- training


@dataclass(frozen=True)
class Schedule:
    total_steps: int
    update_after: int = 100
    update_every: int = 1
    gradient_steps: int = 1
    amortized_every: int = 0


def train(
    agent: S2acAgent,
    env,
    schedule: Schedule,
    rng,
    on_checkpoint: Optional[Callable[[S2acAgent, str], str]] = None,
    buffer: Optional[ReplayBuffer] = None,
) -> Iterator[dict]:
    """Interleave environment steps and gradient steps, yielding one metrics dict per gradient step.

    ``env`` needs ``reset(rng) -> state``, ``step(action) -> (state, reward, done, info)``
    and ``state_dim`` / ``action_dim``.  A non-finite loss calls
    ``on_checkpoint(agent, reason)`` (if given) and raises
    :class:`NumericAbortError`; so does a diverging SVGD unroll.
    """
    cfg = agent.cfg
    if buffer is None:
        buffer = ReplayBuffer(cfg.buffer_capacity, agent.state_dim, agent.action_dim)
    state = env.reset(rng)
    ep_return, finished = 0.0, None
    episode = 0
    for t in range(schedule.total_steps):
        action = select_action(agent, state, rng)
        nxt, reward, done, _ = env.step(action)
        buffer.add(Transition(state, action, reward, nxt, done))
        ep_return += reward
        state = nxt
        if done:
            finished = ep_return
            episode += 1
            ep_return = 0.0
            state = env.reset(rng)
        if len(buffer) < max(schedule.update_after, cfg.batch_size) or (t + 1) % schedule.update_every:
            continue
        for _ in range(schedule.gradient_steps):
            batch = buffer.sample(rng, cfg.batch_size)
            try:
                critic_loss = critic_update(agent, batch, rng)
                actor_loss = actor_update(agent, batch.s, rng)
            except DivergenceError as err:
                path = on_checkpoint(agent, str(err)) if on_checkpoint else None
                raise NumericAbortError(f"sampler diverged at step {t + 1}: {err}", path) from err
            agent.q_target.params = polyak_update(agent.q_target.params, agent.q.params, cfg.tau)
            record = {"step": t + 1, "critic_loss": critic_loss, "actor_loss": actor_loss}
            if schedule.amortized_every and agent.amortized is not None and (t + 1) % schedule.amortized_every == 0:
                record["amortized_loss"] = amortized_update(agent, batch.s, rng)
            losses = [v for k, v in record.items() if k.endswith("_loss")]
            if not all(math.isfinite(v) for v in losses):
                path = on_checkpoint(agent, "non-finite loss") if on_checkpoint else None
                raise NumericAbortError(f"non-finite loss at step {t + 1}", path)
            record["entropy_mean"] = agent.last_entropy
            if finished is not None:
                record["episode"] = episode
                record["episode_return"] = finished
                finished = None
            yield record

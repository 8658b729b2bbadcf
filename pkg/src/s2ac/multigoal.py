"""2-D point-mass environment with three equally rewarded goals and an optional wall segment."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import S2acError

GOALS = ((4.0, 0.0), (-4.0, 2.0), (-4.0, -2.0))
OBSTACLE = ((-2.5, 0.5), (-0.5, 2.5))
LEFT_GOALS = (1, 2)


class EpisodeFinishedError(S2acError, RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    goals: tuple = GOALS
    goal_radius: float = 0.5
    terminal_reward: float = 10.0
    action_cost: float = 0.05
    action_scale: float = 1.0
    horizon: int = 30
    arena: float = 7.0
    obstacle: Optional[tuple] = None
    jitter: float = 0.0

    def __post_init__(self):
        if len(self.goals) < 1:
            raise ValueError("at least one goal required")
        if not self.goal_radius > 0 or self.horizon < 1:
            raise ValueError("goal_radius must be positive and horizon at least 1")
        object.__setattr__(self, "goals", tuple(tuple(float(c) for c in g) for g in self.goals))
        if self.obstacle is not None:
            object.__setattr__(self, "obstacle", tuple(tuple(float(c) for c in p) for p in self.obstacle))

    def with_obstacle(self, segment=OBSTACLE) -> "EnvConfig":
        return replace(self, obstacle=segment)


@dataclass(frozen=True)
class EnvState:
    position: np.ndarray
    step_count: int = 0
    done: bool = False
    goal: Optional[int] = None


def reset(cfg: EnvConfig, rng=None) -> EnvState:
    pos = np.zeros(2)
    if cfg.jitter > 0:
        pos = pos + cfg.jitter * rng.normal(2)
    return EnvState(pos)


def segment_intersection(p, q, a, b) -> Optional[float]:
    """Fraction ``t`` in ``[0, 1]`` along ``p -> q`` where it meets segment ``a-b``, or ``None``."""
    p, q, a, b = (np.asarray(v, dtype=float) for v in (p, q, a, b))
    r, s = q - p, b - a
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < 1e-15:
        return None
    w = a - p
    t = (w[0] * s[1] - w[1] * s[0]) / denom
    u = (w[0] * r[1] - w[1] * r[0]) / denom
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return float(t)
    return None


def goal_index(cfg: EnvConfig, position) -> Optional[int]:
    for k, g in enumerate(cfg.goals):
        if math.dist(position, g) <= cfg.goal_radius:
            return k
    return None


def step(state: EnvState, action, cfg: EnvConfig):
    """Advance one step; returns ``(next_state, reward, done, hit_obstacle)``."""
    if state.done:
        raise EpisodeFinishedError("episode already finished; call reset")
    action = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    target = np.clip(state.position + cfg.action_scale * action, -cfg.arena, cfg.arena)
    hit = False
    if cfg.obstacle is not None:
        t = segment_intersection(state.position, target, *cfg.obstacle)
        if t is not None:
            target = state.position + t * (target - state.position)
            hit = True
    reward = -cfg.action_cost * float(action @ action)
    goal = goal_index(cfg, target)
    if goal is not None:
        reward += cfg.terminal_reward
    count = state.step_count + 1
    done = goal is not None or count >= cfg.horizon
    return EnvState(target, count, done, goal), reward, done, hit


class MultigoalEnv:
    """Stateful wrapper used by the training loop; the state vector is the position."""

    state_dim = 2
    action_dim = 2

    def __init__(self, cfg: EnvConfig = EnvConfig()):
        self.cfg = cfg
        self.state: Optional[EnvState] = None

    def reset(self, rng=None):
        self.state = reset(self.cfg, rng)
        return self.state.position.copy()

    def step(self, action):
        self.state, reward, done, hit = step(self.state, action, self.cfg)
        return self.state.position.copy(), reward, done, {"hit_obstacle": hit, "goal": self.state.goal}


@dataclass
class Rollout:
    positions: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    hits: list = field(default_factory=list)
    goal: Optional[int] = None

    @property
    def hit_obstacle(self) -> bool:
        return any(self.hits)

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


def rollout(policy, cfg: EnvConfig, rng=None) -> Rollout:
    """Run one episode with ``policy(position) -> action``."""
    state = reset(cfg, rng)
    out = Rollout(positions=[state.position.copy()])
    while not state.done:
        action = np.clip(np.asarray(policy(state.position), dtype=float), -1.0, 1.0)
        state, reward, done, hit = step(state, action, cfg)
        out.positions.append(state.position.copy())
        out.actions.append(action)
        out.rewards.append(reward)
        out.dones.append(done)
        out.hits.append(hit)
    out.goal = state.goal
    return out


def write_trajectories(path, rollouts: Sequence[Rollout]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "t", "x", "y", "ax", "ay", "reward", "done", "hit_obstacle"])
        for ep, ro in enumerate(rollouts):
            for t, (pos, act, rew, done, hit) in enumerate(zip(ro.positions[1:], ro.actions, ro.rewards, ro.dones, ro.hits)):
                w.writerow([ep, t, f"{pos[0]:.10g}", f"{pos[1]:.10g}", f"{act[0]:.10g}", f"{act[1]:.10g}", f"{rew:.10g}", int(done), int(hit)])


def heatmap_grid(cfg: EnvConfig, n: int = 25) -> np.ndarray:
    axis = np.linspace(-cfg.arena, cfg.arena, n)
    xx, yy = np.meshgrid(axis, axis, indexing="xy")
    return np.stack([xx.ravel(), yy.ravel()], axis=-1)


def write_heatmap(path, points, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "H"])
        for (x, y), h in zip(points, values):
            w.writerow([f"{x:.10g}", f"{y:.10g}", f"{h:.10g}"])


def goal_histogram(rollouts: Iterable[Rollout], n_goals: int) -> dict:
    counts = [0] * n_goals
    none = 0
    for ro in rollouts:
        if ro.goal is None:
            none += 1
        else:
            counts[ro.goal] += 1
    return {"goals": counts, "none": none}


def smoothness_metrics(critic, states, actions, h: float = 1e-4):
    """Mean per-dimension L1 norms of ``grad_a Q`` (M1) and of its finite-difference Hessian (M2).

    ``states``/``actions`` are stacked visited pairs, shape ``(N, n_s)`` / ``(N, d)``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    if states.shape[0] == 0:
        raise ValueError("smoothness metrics need at least one state-action pair")
    d = actions.shape[-1]
    grad = critic.action_grad(states, actions)
    m1 = float(np.mean(np.sum(np.abs(grad), axis=-1) / d))
    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        cols.append((critic.action_grad(states, actions + e) - critic.action_grad(states, actions - e)) / (2 * h))
    hess = np.stack(cols, axis=-1)
    m2 = float(np.mean(np.sum(np.abs(hess), axis=(-2, -1)) / d**2))
    return m1, m2


def trajectory_smoothness(critic, rollouts: Sequence[Rollout], h: float = 1e-4):
    """:func:`smoothness_metrics` over every visited ``(position, action)`` pair of ``rollouts``."""
    rollouts = [r for r in rollouts if r.actions]
    if not rollouts:
        raise ValueError("smoothness metrics need at least one non-empty trajectory")
    states = np.concatenate([np.asarray(r.positions[:-1]) for r in rollouts])
    actions = np.concatenate([np.asarray(r.actions) for r in rollouts])
    return smoothness_metrics(critic, states, actions, h)

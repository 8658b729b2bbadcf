import csv
import math

import numpy as np
import pytest

from s2ac.core import RngStream
from s2ac.multigoal import (
    GOALS,
    LEFT_GOALS,
    OBSTACLE,
    EnvConfig,
    EnvState,
    EpisodeFinishedError,
    MultigoalEnv,
    goal_histogram,
    heatmap_grid,
    reset,
    rollout,
    segment_intersection,
    smoothness_metrics,
    step,
    trajectory_smoothness,
    write_heatmap,
    write_trajectories,
)


class QuadraticCritic:
    """``Q(s, a) = a^T a`` with an analytic action gradient."""

    def action_grad(self, states, actions):
        return 2.0 * np.asarray(actions, dtype=float)


class ConstantCritic:
    def action_grad(self, states, actions):
        return np.zeros_like(np.asarray(actions, dtype=float))


def toward(goal):
    def policy(p):
        v = np.asarray(goal) - p
        return v / max(np.linalg.norm(v), 1e-12)

    return policy


def test_goal_layout():
    assert GOALS == ((4.0, 0.0), (-4.0, 2.0), (-4.0, -2.0))
    assert all(GOALS[k][0] < 0 for k in LEFT_GOALS)


def test_reset_at_origin_and_jitter_reproducible():
    cfg = EnvConfig()
    np.testing.assert_array_equal(reset(cfg).position, [0.0, 0.0])
    np.testing.assert_array_equal(reset(cfg).position, reset(cfg).position)
    j = EnvConfig(jitter=0.05)
    np.testing.assert_array_equal(reset(j, RngStream(3)).position, reset(j, RngStream(3)).position)
    assert np.any(reset(j, RngStream(3)).position != 0.0)


def test_zero_action():
    s, r, done, hit = step(reset(EnvConfig()), [0.0, 0.0], EnvConfig())
    assert r == 0.0 and not done and not hit
    np.testing.assert_array_equal(s.position, [0.0, 0.0])
    assert s.step_count == 1


def test_goal_step_terminates_with_bonus():
    cfg = EnvConfig()
    s, r, done, _ = step(EnvState(np.array([3.2, 0.0])), [0.6, 0.0], cfg)
    assert done and s.goal == 0
    assert r == pytest.approx(10.0 - 0.05 * 0.36)
    with pytest.raises(EpisodeFinishedError):
        step(s, [0.0, 0.0], cfg)


def test_actions_clipped_and_arena_bounded():
    cfg = EnvConfig()
    s, r, _, _ = step(EnvState(np.array([6.8, 0.0])), [5.0, 0.0], cfg)
    assert s.position[0] == 7.0
    assert r == pytest.approx(-0.05)


def test_horizon_ends_episode():
    ro = rollout(lambda p: np.zeros(2), EnvConfig(horizon=5))
    assert len(ro.actions) == 5 and ro.dones[-1] and ro.goal is None


def test_obstacle_blocks_motion():
    cfg = EnvConfig().with_obstacle(OBSTACLE)
    start = np.array([-1.0, 1.5])
    s, _, _, hit = step(EnvState(start), [0.0, 1.0], cfg)
    t = segment_intersection(start, start + [0.0, 1.0], *OBSTACLE)
    assert hit and t == pytest.approx(0.5)
    np.testing.assert_allclose(s.position, [-1.0, 2.0])
    assert segment_intersection([0, 0], [1, 0], [0, 1], [1, 1]) is None


@pytest.mark.parametrize("k", range(3))
def test_straight_line_policies_reach_each_goal(k):
    ro = rollout(toward(GOALS[k]), EnvConfig())
    assert ro.goal == k
    assert len(ro.actions) <= math.ceil(math.dist((0, 0), GOALS[k]))


def test_rewards_bounded(np_rng):
    cfg = EnvConfig()
    ro = rollout(lambda p: np_rng.uniform(-3, 3, size=2), cfg)
    assert all(-2 * cfg.action_cost - 1e-12 <= r <= cfg.terminal_reward for r in ro.rewards)


def test_env_wrapper_matches_pure_step():
    env = MultigoalEnv()
    pos = env.reset()
    p2, r, done, info = env.step([0.5, -0.5])
    np.testing.assert_allclose(p2, pos + [0.5, -0.5])
    assert info == {"hit_obstacle": False, "goal": None}


def test_smoothness_quadratic_and_constant():
    m1, m2 = smoothness_metrics(QuadraticCritic(), np.zeros((1, 2)), np.array([[1.0, 1.0]]))
    assert m1 == pytest.approx(2.0)
    assert m2 == pytest.approx(1.0, rel=1e-9)
    assert smoothness_metrics(ConstantCritic(), np.zeros((3, 2)), np.ones((3, 2))) == (0.0, 0.0)
    with pytest.raises(ValueError):
        trajectory_smoothness(QuadraticCritic(), [])


def test_smoothness_first_metric_matches_finite_difference_evaluator(np_rng):
    from s2ac.neural import QNetwork

    q = QNetwork.initialized(2, 2, [8], RngStream(0), "elu")
    s, a = np_rng.normal(size=(6, 2)), np_rng.uniform(-0.9, 0.9, size=(6, 2))
    m1, _ = smoothness_metrics(q, s, a)
    h = 1e-5
    fd = [(q.value(s, a + h * e) - q.value(s, a - h * e)) / (2 * h) for e in np.eye(2)]
    assert m1 == pytest.approx(float(np.mean(np.abs(np.stack(fd, -1)).sum(-1) / 2)), rel=1e-3)


def test_dumps(tmp_path):
    ros = [rollout(toward(GOALS[0]), EnvConfig()), rollout(toward(GOALS[1]), EnvConfig())]
    write_trajectories(tmp_path / "t.csv", ros)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["episode", "t", "x", "y", "ax", "ay", "reward", "done", "hit_obstacle"]
    assert len(rows) == 1 + sum(len(r.actions) for r in ros)
    grid = heatmap_grid(EnvConfig(), 25)
    assert grid.shape == (625, 2) and grid.min() == -7.0 and grid.max() == 7.0
    write_heatmap(tmp_path / "h.csv", grid, np.zeros(625))
    assert sum(1 for _ in open(tmp_path / "h.csv")) == 626
    assert goal_histogram(ros, 3) == {"goals": [1, 1, 0], "none": 0}
    m1, m2 = trajectory_smoothness(QuadraticCritic(), ros)
    assert m1 > 0 and m2 == pytest.approx(1.0, rel=1e-9)

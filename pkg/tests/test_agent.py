import math

import numpy as np
import pytest

from s2ac.agent import (
    AgentConfig,
    Batch,
    NumericAbortError,
    ReplayBuffer,
    S2acAgent,
    Schedule,
    Transition,
    _fused_step,
    _range_select,
    actor_gradient,
    actor_objective,
    actor_update,
    amortized_sample,
    amortized_update,
    critic_target,
    critic_update,
    draw_noise,
    sample_policy,
    sample_policy_batch,
    select_action,
    softmax_policy_oracle,
    stein_direction,
    train,
)
from s2ac.core import RngStream, adaptive_bandwidth, finite_diff_grad
from s2ac.entropy import exact_jacobian_logq, svgd_trace_closed_form
from s2ac.multigoal import MultigoalEnv
from s2ac.samplers import SamplerConfig, select_in_range, svgd_drift
from s2ac.targets import QBackedTarget


def small_agent(**kw):
    base = dict(hidden=(8,), activation="elu", particles=6, svgd_steps=3, epsilon=0.05, batch_size=4)
    base.update(kw)
    return S2acAgent(2, 2, AgentConfig(**base), RngStream(kw.pop("seed", 0)))


def random_batch(n=4, seed=0):
    r = np.random.default_rng(seed)
    return Batch(r.normal(size=(n, 2)), r.uniform(-1, 1, (n, 2)), r.normal(size=n), r.normal(size=(n, 2)), (r.uniform(size=n) < 0.3).astype(float))


class FlatCritic:
    def value(self, s, a):
        return np.zeros(np.broadcast_shapes(np.shape(s)[:-1], np.shape(a)[:-1]))

    def action_grad(self, s, a):
        return np.zeros_like(np.asarray(a, dtype=float))

    def action_hvp(self, s, a, v):
        return np.zeros_like(np.asarray(a, dtype=float))


class BimodalCritic(FlatCritic):
    """``Q(a) = log(N(a; -c, 0.1) + N(a; c, 0.1))`` on every coordinate, independent of state."""

    def __init__(self, c=1.0, var=0.1):
        self.c, self.var = c, var

    def action_grad(self, s, a):
        a = np.asarray(a, dtype=float)
        lp = -((a - self.c) ** 2) / (2 * self.var)
        lm = -((a + self.c) ** 2) / (2 * self.var)
        w = 1.0 / (1.0 + np.exp(lm - lp))
        return (w * -(a - self.c) + (1 - w) * -(a + self.c)) / self.var


def test_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(alpha=0.0)
    with pytest.raises(ValueError):
        AgentConfig(gamma=1.0)
    with pytest.raises(ValueError):
        AgentConfig(bandwidth=-1.0)


def test_replay_buffer_fifo_at_capacity():
    buf = ReplayBuffer(1000, 1, 1)
    for k in range(2500):
        buf.add(Transition(np.array([k]), np.array([0.0]), float(k), np.array([k + 1]), False))
    assert len(buf) == 1000
    np.testing.assert_array_equal(buf.contents().r, np.arange(1500, 2500))
    batch = buf.sample(RngStream(0), 64)
    assert len(batch) == 64 and batch.r.min() >= 1500
    with pytest.raises(ValueError):
        ReplayBuffer(10, 1, 1).sample(RngStream(0), 1)
    with pytest.raises(ValueError):
        buf.add(Transition(np.array([np.nan]), np.array([0.0]), 0.0, np.array([0.0]), False))


def test_vectorized_range_selection_matches_reference(np_rng):
    pool = np_rng.normal(size=(50, 12, 2)) * 2.0
    out = _range_select(pool, 3.0, 6)
    for b in range(50):
        if not np.any(np.all(np.abs(pool[b]) <= 3.0, axis=-1)):
            assert np.all(out[b] == 0.0)
            continue
        np.testing.assert_array_equal(out[b], pool[b][select_in_range(pool[b], 0.0, 1.0, 3.0, 6)])
    assert np.all(_range_select(np.full((1, 4, 2), 9.0), 3.0, 2) == 0.0)


def test_draw_noise_shapes_and_bounds(rng):
    cfg = AgentConfig(particles=7)
    z = draw_noise(cfg, 5, 2, rng)
    assert z.shape == (5, 7, 2) and np.all(np.abs(z) <= 3.0)
    free = draw_noise(AgentConfig(particles=7, range_t=None), 5, 2, rng)
    assert free.shape == (5, 7, 2)


def test_fused_step_matches_reference_functions(np_rng):
    a = np_rng.normal(size=(3, 6, 2))
    g = np_rng.normal(size=(3, 6, 2))
    for cfg in (AgentConfig(particles=6), AgentConfig(particles=6, bandwidth=0.8)):
        alpha = 0.7
        drift, trace, sigma = _fused_step(a, g, cfg, alpha)
        ref_sigma = adaptive_bandwidth(a) if cfg.bandwidth == "adaptive" else np.full(3, 0.8)
        np.testing.assert_allclose(sigma, ref_sigma, rtol=1e-14)
        np.testing.assert_allclose(drift, svgd_drift(a, g / alpha, ref_sigma, alpha), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(trace, svgd_trace_closed_form(a, g, ref_sigma, alpha), rtol=1e-12, atol=1e-14)


def test_zero_steps_is_gaussian_with_analytic_entropy():
    agent = small_agent(svgd_steps=0, particles=400, range_t=None)
    s = np.array([[0.2, -0.3]])
    pb = sample_policy_batch(agent, s, RngStream(1))
    mu, log_std = agent.head.mean_log_std(s)
    np.testing.assert_allclose(pb.particles, mu[:, None, :] + np.exp(log_std)[:, None, :] * pb.noise)
    np.testing.assert_array_equal(pb.log_q, pb.log_q0)
    analytic = float(np.sum(log_std) + 0.5 * 2 * math.log(2 * math.pi * math.e))
    assert pb.entropy[0] == pytest.approx(analytic, abs=0.1)


def test_flat_critic_spreads_particles():
    agent = small_agent(svgd_steps=20, epsilon=0.05, particles=8)
    agent.q = FlatCritic()
    pb = sample_policy_batch(agent, np.zeros((1, 2)), RngStream(2))
    a0 = pb.mu[:, None, :] + np.exp(pb.log_std)[:, None, :] * pb.noise
    assert np.var(pb.particles) >= np.var(a0)


def test_sampling_deterministic_and_emitted_in_bounds():
    agent = small_agent()
    p1, e1 = sample_policy(agent, np.array([0.1, 0.2]), RngStream(3))
    p2, e2 = sample_policy(agent, np.array([0.1, 0.2]), RngStream(3))
    np.testing.assert_array_equal(p1.particles, p2.particles)
    assert e1.value == e2.value
    for greedy in (False, True):
        a = select_action(agent, np.array([0.1, 0.2]), RngStream(4), greedy)
        assert a.shape == (2,) and np.all(np.abs(a) <= 1.0)


def test_closed_form_policy_entropy_matches_oracle():
    agent = small_agent(particles=8, svgd_steps=3, epsilon=0.01, hidden=(16,), alpha=0.5)
    s = np.array([0.3, -0.2])
    pb = sample_policy_batch(agent, s[None], RngStream(5))
    target = QBackedTarget(agent.q, s, agent.cfg.alpha)
    cfg = SamplerConfig(epsilon=0.01, steps=3, m=8, bandwidth="adaptive")
    traj = [pb.mu[:, None, :][0] + np.exp(pb.log_std)[0] * pb.noise[0]]
    from s2ac.entropy import run_svgd
    from s2ac.samplers import ParticleSet

    final, traj = run_svgd(ParticleSet(traj[0], pb.log_q0[0], np.zeros(8)), target, cfg, agent.cfg.alpha)
    np.testing.assert_allclose(final.particles, pb.particles[0], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(final.log_q, pb.log_q[0], rtol=1e-10)
    oracle = exact_jacobian_logq(pb.log_q0[0], traj, target, cfg, alpha=agent.cfg.alpha)
    bound = 10 * 0.01**2 * 2 * 3 * agent.cfg.alpha
    assert abs(oracle.value - (-np.mean(pb.log_q[0]))) * agent.cfg.alpha <= bound


def test_critic_target_terminal_and_zero_discount():
    batch = random_batch()
    batch.done[:] = 1.0
    np.testing.assert_array_equal(critic_target(small_agent(), batch, RngStream(0)), batch.r)
    batch = random_batch()
    np.testing.assert_array_equal(critic_target(small_agent(gamma=0.0), batch, RngStream(0)), batch.r)


def test_critic_target_straight_line_evaluator():
    agent = small_agent()
    batch = random_batch(1)
    batch.done[:] = 0.0
    noise = draw_noise(agent.cfg, 1, 2, RngStream(9))
    y = critic_target(agent, batch, noise=noise)
    pb = sample_policy_batch(agent, batch.s_next, noise=noise)
    q = [float(agent.q_target.value(batch.s_next[0], np.clip(p, -1, 1))) for p in pb.particles[0]]
    h = -sum(pb.log_q[0]) / len(q)
    expected = batch.r[0] + agent.cfg.gamma * (sum(q) / len(q) + agent.cfg.alpha * h)
    assert y[0] == pytest.approx(expected, rel=1e-10)


def test_critic_target_increases_with_alpha_when_entropy_positive():
    batch = random_batch()
    batch.done[:] = 0.0
    noise = draw_noise(small_agent().cfg, 4, 2, RngStream(1))
    lo = critic_target(small_agent(alpha=0.5), batch, noise=noise)
    hi = critic_target(small_agent(alpha=0.6), batch, noise=noise)
    ent = sample_policy_batch(small_agent(alpha=0.6), batch.s_next, noise=noise).entropy
    assert np.all((hi > lo) == (ent > 0))


def test_critic_update_reduces_loss_on_fixed_batch():
    agent = small_agent()
    batch = random_batch(8)
    noise = draw_noise(agent.cfg, 8, 2, RngStream(0))
    first = critic_update(agent, batch, noise=noise)
    for _ in range(200):
        last = critic_update(agent, batch, noise=noise)
    assert last < first
    assert math.isfinite(agent.last_entropy)


@pytest.mark.parametrize("bandwidth", ["adaptive", 0.7])
def test_actor_gradient_through_unroll_matches_finite_differences(bandwidth):
    agent = S2acAgent(1, 1, AgentConfig(hidden=(8,), activation="elu", particles=5, svgd_steps=4, epsilon=0.05, bandwidth=bandwidth, alpha=0.7), RngStream(11))
    states = np.array([[0.3], [-0.6]])
    noise = draw_noise(agent.cfg, 2, 1, RngStream(12))
    obj, grad = actor_gradient(agent, states, noise)
    p0 = agent.head.params.copy()

    def f(p):
        agent.head.params = p
        return actor_objective(agent, states, noise)

    fd = finite_diff_grad(f, p0, h=1e-6)
    agent.head.params = p0
    assert obj == pytest.approx(f(p0))
    assert np.max(np.abs(grad - fd)) / np.max(np.abs(fd)) <= 1e-3


def test_actor_objective_permutation_invariant():
    agent = small_agent()
    states = np.random.default_rng(0).normal(size=(3, 2))
    noise = draw_noise(agent.cfg, 3, 2, RngStream(2))
    perm = noise[:, ::-1, :].copy()
    assert actor_objective(agent, states, noise) == pytest.approx(actor_objective(agent, states, perm), rel=1e-12)


def test_actor_update_improves_objective():
    agent = small_agent(lr=1e-2)
    states = np.random.default_rng(1).normal(size=(6, 2))
    noise = draw_noise(agent.cfg, 6, 2, RngStream(3))
    before = actor_objective(agent, states, noise)
    for _ in range(30):
        actor_update(agent, states, noise=noise)
    assert actor_objective(agent, states, noise) > before


def test_softmax_oracle():
    np.testing.assert_allclose(softmax_policy_oracle([1.0, 2.0], 1.0), [0.268941, 0.731059], atol=1e-6)
    np.testing.assert_allclose(softmax_policy_oracle([1.0, 5.0, -2.0], 1e9), 1 / 3, atol=1e-8)
    np.testing.assert_allclose(softmax_policy_oracle([4.0, 4.0], 0.3), 0.5)
    with pytest.raises(ValueError):
        softmax_policy_oracle([np.inf], 1.0)


def test_stein_direction_vanishes_for_single_flat_reference():
    d = stein_direction(FlatCritic(), np.zeros(2), np.array([[0.3, 0.4]]), np.array([[0.3, 0.4]]), 1.0, 1.0)
    assert np.all(d == 0.0)


def test_amortized_zero_direction_leaves_weights():
    # one reference particle pinned exactly on the amortized output, flat critic
    agent = small_agent(amortized=True, particles=1, svgd_steps=0, bandwidth=1.0, range_t=1e-12)
    agent.q = FlatCritic()
    c = np.array([0.25, -0.4])
    w, b = agent.amortized.layers()[-1]
    w[:] = 0.0
    b[:] = c
    hw, hb = agent.head.net.layers()[-1]
    hw[:] = 0.0
    hb[:2] = c
    before = agent.amortized.params.copy()
    loss = amortized_update(agent, np.zeros((3, 2)), RngStream(0))
    assert loss == 0.0
    np.testing.assert_array_equal(agent.amortized.params, before)


@pytest.mark.slow
def test_amortized_sampler_covers_both_modes():
    # fixed bandwidth so the reference particles themselves split across both modes;
    # the adaptive rule gives sigma ~ 7 here and the references barely move
    cfg = AgentConfig(hidden=(16,), activation="elu", particles=10, svgd_steps=60, epsilon=0.05, amortized=True, lr=3e-3, init_variance=1.0, bandwidth=0.3)
    agent = S2acAgent(1, 1, cfg, RngStream(4))
    agent.q = BimodalCritic()
    ref = sample_policy_batch(agent, np.zeros((1, 1)), RngStream(1)).particles[0, :, 0]
    assert np.sum(ref < 0) >= 2 and np.sum(ref > 0) >= 2
    rng = RngStream(5)
    states = np.zeros((4, 1))
    for _ in range(2000):
        amortized_update(agent, states, rng)
    _, out = amortized_sample(agent, np.zeros((1, 1)), RngStream(6).normal((1, 400, 1)))
    x = out[0, :, 0]
    left, right = float(np.mean(x < 0)), float(np.mean(x > 0))
    assert left >= 0.1 and right >= 0.1, f"mode fractions {left:.2f} / {right:.2f}, median output {np.median(x):.3f}"


class TinyEnv:
    state_dim = 1
    action_dim = 1

    def __init__(self, poison=False):
        self.poison = poison
        self.t = 0

    def reset(self, rng=None):
        self.t = 0
        return np.zeros(1)

    def step(self, action):
        self.t += 1
        r = float(-np.sum(np.asarray(action) ** 2))
        return np.array([0.1 * self.t]), r, self.t >= 5, {}


def test_training_without_updates_only_fills_buffer():
    agent = S2acAgent(1, 1, AgentConfig(hidden=(4,), particles=3, svgd_steps=1, batch_size=2), RngStream(0))
    buf = ReplayBuffer(100, 1, 1)
    records = list(train(agent, TinyEnv(), Schedule(40, update_after=1000), RngStream(1), buffer=buf))
    assert records == [] and len(buf) == 40


def test_training_stream_is_deterministic():
    def run():
        agent = S2acAgent(2, 2, AgentConfig(hidden=(8,), particles=4, svgd_steps=2, batch_size=16), RngStream(0))
        return list(train(agent, MultigoalEnv(), Schedule(300, update_after=50, update_every=5), RngStream(1)))

    a, b = run(), run()
    assert len(a) > 0 and a == b
    assert {"step", "critic_loss", "actor_loss", "entropy_mean"} <= set(a[0])
    assert any("episode_return" in r for r in a)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_checkpoint(tmp_path):
    agent = S2acAgent(1, 1, AgentConfig(hidden=(4,), particles=3, svgd_steps=1, batch_size=2), RngStream(0))
    saved = []

    def on_checkpoint(ag, reason):
        ag.save(tmp_path / "ck")
        saved.append(reason)
        return str(tmp_path / "ck")

    class NanEnv(TinyEnv):
        def step(self, action):
            s, r, d, info = super().step(action)
            return s, (1e308 if self.t % 2 else -1e308), d, info

    with pytest.raises(NumericAbortError) as err:
        list(train(agent, NanEnv(), Schedule(50, update_after=2), RngStream(1), on_checkpoint=on_checkpoint))
    assert saved and (tmp_path / "ck" / "q.bin").exists()
    assert err.value.checkpoint == str(tmp_path / "ck")


def test_agent_checkpoint_round_trip(tmp_path):
    agent = small_agent(amortized=True)
    agent.save(tmp_path)
    other = S2acAgent(2, 2, agent.cfg, RngStream(99))
    other.load(tmp_path)
    for name, net in agent.networks().items():
        np.testing.assert_array_equal(net.params, other.networks()[name].params)
    wrong = S2acAgent(2, 2, AgentConfig(hidden=(5,), amortized=True), RngStream(0))
    with pytest.raises(ValueError):
        wrong.load(tmp_path)

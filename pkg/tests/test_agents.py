import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frugal_rl import neural
from frugal_rl.acnomdp import ACNOMDP, CostedTransition, ObservationPacket
from frugal_rl.agents import (
    AgentConfig,
    DMSOAAgent,
    OSMBOAAgent,
    ScriptedAgent,
    TrainSchedule,
    dmsoa_targets,
    load_agent,
    make_agent,
    osmboa_targets,
    run_episode,
    save_agent,
)
from frugal_rl.environments import make_env
from frugal_rl.errors import ConfigError, UsageError
from frugal_rl.replay import SampleBatch, assemble_nstep


def small_config(**kw):
    sched = kw.pop("schedule", TrainSchedule(total_decisions=2000, warmup_decisions=10, batch_size=4))
    return AgentConfig(hidden=(8,), capacity=64, schedule=sched, **kw)


def constant_outputs(p, values):
    """Make a network ignore its input and emit ``values``."""
    for w in p.weights:
        w[...] = 0.0
    for b in p.biases[:-1]:
        b[...] = 0.0
    p.biases[-1][...] = values


def packet(x, fresh=True):
    x = np.asarray(x, dtype=np.float64)
    return ObservationPacket(x, fresh, 0, (x,))


def transition(reward, terminal=False, truncated=False, gamma_exp=1, a_c=0, choice=1, obs_dim=4):
    o = packet(np.zeros(obs_dim))
    return CostedTransition(o, a_c, choice, reward, packet(np.ones(obs_dim)), terminal, truncated, gamma_exp, 1, gamma_exp)


def batch_of(*ts):
    return SampleBatch(list(ts), np.arange(len(ts)), np.ones(len(ts)))


def dmsoa_fixture(gamma=0.9):
    agent = DMSOAAgent(4, 2, small_config(gamma=gamma), seed=0)
    constant_outputs(agent.qc, [1.0, 2.0])
    constant_outputs(agent.qc_target, [5.0, 3.0])
    constant_outputs(agent.qm, [0.5, 0.2, 0.7])
    constant_outputs(agent.qm_target, [1.0, 2.0, 4.0])
    return agent


# -- targets ------------------------------------------------------------------

def test_dmsoa_control_target_hand_case():
    agent = dmsoa_fixture()
    y_c, y_m = dmsoa_targets(batch_of(transition(1.0)), agent)
    assert y_c[0] == 1 + 0.9 * 3
    assert y_c[0] == pytest.approx(3.7, abs=1e-15)
    # repeat net: online argmax k index 2, valued by target output 4
    assert y_m[0] == pytest.approx(1 + 0.9 * 4)


def test_double_value_differs_from_max_bootstrap():
    agent = dmsoa_fixture()
    y_c, _ = dmsoa_targets(batch_of(transition(1.0)), agent)
    max_bootstrap = 1 + 0.9 * 5.0
    assert y_c[0] != pytest.approx(max_bootstrap)
    assert y_c[0] == pytest.approx(3.7)


def test_terminal_target_is_reward():
    agent = dmsoa_fixture()
    y_c, y_m = dmsoa_targets(batch_of(transition(1.0, terminal=True)), agent)
    assert y_c[0] == 1.0 and y_m[0] == 1.0


def test_truncated_still_bootstraps():
    agent = dmsoa_fixture()
    y_c, _ = dmsoa_targets(batch_of(transition(1.0, truncated=True)), agent)
    assert y_c[0] == pytest.approx(3.7)


def test_discount_exponent_from_span():
    agent = dmsoa_fixture()
    y_c, _ = dmsoa_targets(batch_of(transition(3.2, gamma_exp=3)), agent)
    assert y_c[0] == pytest.approx(3.2 + 0.9**3 * 3.0)


def test_equal_online_target_reduces_to_max():
    agent = DMSOAAgent(4, 2, small_config(gamma=0.9), seed=1)
    agent.sync_targets()
    t = transition(0.5)
    y_c, _ = dmsoa_targets(batch_of(t), agent)
    q_next = neural.forward(agent.qc, t.next_obs.payload)
    assert y_c[0] == pytest.approx(0.5 + 0.9 * q_next.max())


def test_osmboa_target_hand_case():
    agent = OSMBOAAgent(4, 2, small_config(gamma=0.9), seed=0)
    constant_outputs(agent.q, [0.0, 1.0, 2.0, 0.5])
    constant_outputs(agent.q_target, [9.0, 9.0, 3.0, 9.0])
    t = transition(1.0)
    y = osmboa_targets(batch_of(t), agent)
    assert y[0] == pytest.approx(3.7)
    assert osmboa_targets(batch_of(transition(1.0, terminal=True)), agent)[0] == 1.0
    assert osmboa_targets(batch_of(transition(1.0, truncated=True)), agent)[0] == pytest.approx(3.7)


def test_osmboa_nstep_target_composition():
    agent = OSMBOAAgent(4, 2, small_config(gamma=1.0), seed=0)
    constant_outputs(agent.q, [0.0, 1.0, 2.0, 0.5])
    constant_outputs(agent.q_target, [0.0, 0.0, 3.0, 0.0])
    pieces = [transition(r) for r in (1.0, 1.1, 1.0)]
    t = assemble_nstep(pieces, 3, 1.0)
    assert osmboa_targets(batch_of(t), agent)[0] == pytest.approx(3.1 + 3.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), gamma=st.floats(0.5, 1.0))
def test_double_dqn_decoupling_property(seed, gamma):
    """Random nets: the target equals the target-net value at the online argmax."""
    rng = np.random.default_rng(seed)
    agent = DMSOAAgent(3, 3, small_config(gamma=gamma), seed=seed)
    x = rng.normal(size=(6, 3))
    r = rng.normal(size=6)
    gexp = rng.integers(1, 4, size=6).astype(float)
    term = rng.random(6) < 0.3
    y_c, y_m = agent.targets_from_arrays(x, r, gexp, term)
    online = neural.forward(agent.qc, x)
    target = neural.forward(agent.qc_target, x)
    a = online.argmax(axis=1)
    expected = r + np.where(term, 0.0, gamma**gexp * target[np.arange(6), a])
    np.testing.assert_allclose(y_c, expected, rtol=0, atol=1e-12)
    m_in = agent.qm_input(x, a)
    k = neural.forward(agent.qm, m_in).argmax(axis=1)
    expected_m = r + np.where(term, 0.0, gamma**gexp * neural.forward(agent.qm_target, m_in)[np.arange(6), k])
    np.testing.assert_allclose(y_m, expected_m, rtol=0, atol=1e-12)


# -- action selection -----------------------------------------------------------

def test_dmsoa_greedy_action():
    agent = DMSOAAgent(4, 2, small_config(), seed=0)
    constant_outputs(agent.qc, [0.1, 0.9])
    constant_outputs(agent.qm, [0.5, 0.2, 0.7])
    assert tuple(agent.act(packet(np.zeros(4)), greedy=True)) == (1, 3)


def test_dmsoa_tie_breaks_low():
    agent = DMSOAAgent(4, 2, small_config(), seed=0)
    constant_outputs(agent.qc, [0.4, 0.4])
    constant_outputs(agent.qm, [0.1, 0.1, 0.1])
    assert tuple(agent.act(packet(np.zeros(4)), greedy=True)) == (0, 1)


def test_dmsoa_rejects_stale():
    agent = DMSOAAgent(4, 2, small_config(), seed=0)
    with pytest.raises(UsageError):
        agent.act(packet(np.zeros(4), fresh=False))


def test_dmsoa_scalar_action_encoding():
    agent = DMSOAAgent(4, 3, small_config(), seed=0)
    assert agent.qm.spec.n_in == 5
    assert agent.encode_action(2)[0] == 1.0 and agent.encode_action(1)[0] == 0.5
    onehot = DMSOAAgent(4, 3, small_config(action_encoding="onehot"), seed=0)
    assert onehot.qm.spec.n_in == 7


def test_osmboa_decode_and_ties():
    agent = OSMBOAAgent(4, 2, small_config(), seed=0)
    constant_outputs(agent.q, [1.0, 2.0, 3.0, 0.0])
    a = agent.act(packet(np.zeros(4)), greedy=True)
    assert tuple(a) == (1, 0)
    constant_outputs(agent.q, [1.0, 1.0, 1.0, 1.0])
    assert tuple(agent.act(packet(np.zeros(4)), greedy=True)) == (0, 0)
    assert OSMBOAAgent.tuple_index(1, 1) == 3 and OSMBOAAgent.decode(3) == (1, 1)


def test_osmboa_wrong_width():
    agent = OSMBOAAgent(4, 2, small_config(), seed=0)
    with pytest.raises(UsageError):
        agent.act(packet(np.zeros(3)))


def test_full_exploration_is_uniform():
    agent = OSMBOAAgent(4, 2, small_config(), seed=3)
    agent._eps_override = 1.0
    counts = np.zeros(4)
    p = packet(np.zeros(4))
    for _ in range(10_000):
        a = agent.act(p)
        counts[agent.tuple_index(*a)] += 1
    assert np.all(np.abs(counts / 10_000 - 0.25) < 0.02)

    d = DMSOAAgent(4, 2, small_config(), seed=4)
    d._eps_override = 1.0
    ac = np.zeros(2)
    for _ in range(10_000):
        ac[d.act(p).a_c] += 1
    assert np.all(np.abs(ac / 10_000 - 0.5) < 0.02)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.01, 100.0))
def test_argmax_scale_invariance(seed, scale):
    agent = DMSOAAgent(4, 2, small_config(), seed=seed)
    p = packet(np.random.default_rng(seed).normal(size=4))
    before = agent.act(p, greedy=True)
    for net in (agent.qc, agent.qm):
        net.weights[-1] *= scale
        net.biases[-1] *= scale
    assert agent.act(p, greedy=True) == before


def test_epsilon_schedule():
    cfg = small_config(schedule=TrainSchedule(total_decisions=1000, warmup_decisions=10, batch_size=4,
                                              eps_start=1.0, eps_end=0.1, eps_decay_frac=0.5))
    agent = DMSOAAgent(4, 2, cfg, seed=0)
    assert agent.epsilon() == 1.0
    agent.decisions = 250
    assert agent.epsilon() == pytest.approx(0.55)
    agent.decisions = 900
    assert agent.epsilon() == pytest.approx(0.1)
    assert agent.beta() == pytest.approx(0.4 + 0.6 * 0.9)
    agent.greedy = True
    assert agent.epsilon() == 0.0


# -- training -----------------------------------------------------------------

def test_regression_to_constant():
    cfg = small_config(schedule=TrainSchedule(total_decisions=10_000, warmup_decisions=1, batch_size=1))
    agent = DMSOAAgent(4, 2, cfg, seed=0)
    o = packet([0.3, -0.2, 0.05, 0.4])
    t = CostedTransition(o, 1, 2, 2.5, o, True, False, 1, 1, 1)
    agent._remember(t)
    x = t.obs.payload
    for step in range(5000):
        agent.train_step()
        if abs(neural.forward(agent.qc, x)[1] - 2.5) < 1e-3:
            break
    assert abs(neural.forward(agent.qc, x)[1] - 2.5) < 1e-3
    assert step < 5000


def test_fixed_point_leaves_params_unchanged():
    agent = DMSOAAgent(4, 2, small_config(), seed=0)
    constant_outputs(agent.qc, [0.3, 0.7])
    constant_outputs(agent.qm, [0.7, 0.7, 0.7])
    for _ in range(4):
        agent._remember(transition(0.7, terminal=True, a_c=1, choice=2))
    before = [p.flat() for p in (agent.qc, agent.qm)]
    loss_c, loss_m = agent.train_step()
    assert loss_c == 0.0 and loss_m == 0.0
    assert all(np.array_equal(b, p.flat()) for b, p in zip(before, (agent.qc, agent.qm)))


def test_priorities_follow_td_error():
    agent = DMSOAAgent(4, 2, small_config(alpha=0.6, eps_prio=1e-3), seed=0)
    constant_outputs(agent.qc, [0.0, 0.0])
    for r in (1.0, 2.0, 3.0, 4.0):
        agent._remember(transition(r, terminal=True))
    idx, w = agent.buffer.sample_indices(4, agent.beta(), agent.rng)
    agent._learn(idx, w)
    # targets are the rewards (terminal); predictions were 0 before the step
    expected = (np.abs(agent._rew[idx]) + 1e-3) ** 0.6
    np.testing.assert_allclose(agent.buffer.tree.get(idx), expected)


def test_target_sync_period():
    cfg = small_config(tau=5, schedule=TrainSchedule(total_decisions=1000, warmup_decisions=2, batch_size=2))
    agent = DMSOAAgent(4, 2, cfg, seed=0)
    snapshots = []
    for i in range(1, 13):
        agent.observe(transition(1.0))
        snapshots.append(agent.qc_target.flat().copy())
    changed = [i + 1 for i in range(1, 12) if not np.array_equal(snapshots[i], snapshots[i - 1])]
    assert changed == [5, 10]
    assert np.array_equal(agent.qc_target.flat(), snapshots[9])


def test_decisions_never_exceed_base_steps():
    env = ACNOMDP(make_env("cartpole"), c=1.1)
    agent = DMSOAAgent(4, 2, small_config(), seed=2)
    for ep in range(5):
        log = run_episode(agent, env, ep, learn=True)
        assert log.decisions <= log.base_steps
        assert log.measured_steps + log.unmeasured_steps == log.base_steps
    k1 = ScriptedAgent("dmsoa", lambda p, i: (0, 1))
    log = run_episode(k1, env, 0)
    assert log.decisions == log.base_steps


def test_always_measure_policy():
    env = ACNOMDP(make_env("cartpole"), c=1.1)
    log = run_episode(ScriptedAgent("osmboa", lambda p, i: (i % 2, 1)), env, 3)
    assert log.costed_return == log.extrinsic_return and log.unmeasured_steps == 0


def test_chain_optimal_decisions_reach_oracle_value():
    env = ACNOMDP(make_env("chain:5"), c=-0.85, gamma=1.0, K=3)
    plan = [(1, 1), (1, 3)]
    log = run_episode(ScriptedAgent("dmsoa", lambda p, i: plan[i]), env, 0)
    assert log.costed_return == pytest.approx(-3.7, abs=1e-12)
    skip3 = ScriptedAgent("osmboa", lambda p, i: (1, int(i == 3)))
    assert run_episode(skip3, env, 0).costed_return == pytest.approx(-3.55, abs=1e-12)


@pytest.mark.parametrize("name", ["dmsoa", "osmboa"])
def test_training_is_seed_deterministic(name):
    def logs():
        env = ACNOMDP(make_env("cartpole"), c=1.1)
        agent = make_agent(name, 4, 2, small_config(n_step=1 if name == "dmsoa" else 3), seed=11)
        return [run_episode(agent, env, s, learn=True, episode=s).row() for s in range(8)]

    assert logs() == logs()


@pytest.mark.parametrize("name", ["dmsoa", "osmboa"])
def test_checkpoint_roundtrip(tmp_path, name):
    agent = make_agent(name, 4, 2, small_config(obs_scale=(1.0, 0.5, 2.0, 0.25)), seed=5)
    path = tmp_path / "agent.bin"
    save_agent(path, agent, "cartpole", extra={"note": 1})
    back, header = load_agent(path)
    assert header["env"] == "cartpole" and header["extra"] == {"note": 1}
    assert back.greedy and back.style == name
    for key, p in agent.networks().items():
        assert p.flat().tobytes() == back.networks()[key].flat().tobytes()
    p = packet(np.arange(4.0))
    assert back.act(p) == agent.act(p, greedy=True)
    assert path.read_bytes()[:8] == b"FRLAGT1\x00"


def test_config_errors():
    with pytest.raises(ConfigError):
        make_agent("ppo", 4, 2, small_config())
    with pytest.raises(ConfigError):
        DMSOAAgent(4, 2, small_config(action_encoding="binary"))
    with pytest.raises(ConfigError):
        DMSOAAgent(4, 2, small_config(obs_scale=(1.0, 2.0)))
    bad = TrainSchedule(total_decisions=10, warmup_decisions=10)
    with pytest.raises(ConfigError):
        DMSOAAgent(4, 2, small_config(schedule=bad))

"""Double-DQN agents for measurement-cost environments.

``DMSOAAgent`` pairs a control network (observation -> control-action values)
with a repeat-count network ((observation, control action) -> values for
k = 1..K).  The wrapper's scheduler applies the control action k times and
measures only after the last one.

``OSMBOAAgent`` uses one network over the expanded (control, measure-bit)
action set, fed with the remembered measurement plus a freshness flag.

Both learn from a proportional prioritized replay buffer with target networks
synced every ``tau`` decisions.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import neural
from .acnomdp import ActionTuple, SkipDecision, augment
from .errors import ConfigError, UsageError
from .replay import NStepAccumulator, PrioritizedReplay

__all__ = [
    "AgentConfig",
    "TrainSchedule",
    "EpisodeLog",
    "DMSOAAgent",
    "OSMBOAAgent",
    "ScriptedAgent",
    "dmsoa_targets",
    "osmboa_targets",
    "run_episode",
    "make_agent",
    "save_agent",
    "load_agent",
]


@dataclass
class TrainSchedule:
    total_decisions: int = 50_000
    warmup_decisions: int = 1_000
    batch_size: int = 64
    train_every: int = 1
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.6

    def validate(self, capacity):
        if self.warmup_decisions >= self.total_decisions:
            raise ConfigError("train.warmup", "warmup must be shorter than total_decisions")
        if self.batch_size > capacity:
            raise ConfigError("train.batch_size", "batch size exceeds replay capacity")
        if self.train_every < 1:
            raise ConfigError("train.train_every", "must be >= 1")


@dataclass
class AgentConfig:
    hidden: tuple = (64, 64)
    activation: str = "relu"
    optimizer: str = "adam"
    lr: float = 1e-3
    huber: float | None = None
    gamma: float = 0.99
    K: int = 3
    tau: int = 500
    action_encoding: str = "scalar"  # or "onehot"
    priority_source: str = "control"  # or "max"
    obs_scale: tuple | None = None
    memory_window: int = 1
    stale_mode: str = "memory"
    capacity: int = 50_000
    alpha: float = 0.6
    beta0: float = 0.4
    eps_prio: float = 1e-3
    n_step: int = 1
    schedule: TrainSchedule = field(default_factory=TrainSchedule)


@dataclass
class EpisodeLog:
    seed: int
    episode: int
    base_steps: int
    decisions: int
    measured_steps: int
    unmeasured_steps: int
    costed_return: float
    extrinsic_return: float
    end_cause: str
    trace: object = None

    CSV_FIELDS = (
        "seed", "episode", "base_steps", "decisions", "measured_steps",
        "unmeasured_steps", "costed_return", "extrinsic_return", "end_cause",
    )

    def row(self):
        return [getattr(self, f) for f in self.CSV_FIELDS]


def _linear(start, end, frac):
    return start + (end - start) * min(max(frac, 0.0), 1.0)


class _DQNBase:
    """Replay storage, schedules and optimizer plumbing shared by both agents."""

    style = ""

    def __init__(self, obs_dim, n_actions, config: AgentConfig, seed: int):
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        self.cfg = config
        self.rng = np.random.default_rng(seed)
        self.decisions = 0
        self.updates = 0
        scale = config.obs_scale
        self.obs_scale = np.ones(self.obs_dim) if scale is None else np.asarray(scale, float)
        if self.obs_scale.shape != (self.obs_dim,):
            raise ConfigError("env.obs_scale", f"expected {self.obs_dim} values")
        config.schedule.validate(config.capacity)
        self.buffer = PrioritizedReplay(config.capacity, config.alpha, config.eps_prio)
        self.greedy = False
        self._eps_override = None

    # -- schedules --------------------------------------------------------
    def _progress(self):
        return self.decisions / max(self.cfg.schedule.total_decisions, 1)

    def epsilon(self):
        if self.greedy:
            return 0.0
        if self._eps_override is not None:
            return self._eps_override
        s = self.cfg.schedule
        return _linear(s.eps_start, s.eps_end, self._progress() / s.eps_decay_frac)

    def beta(self):
        return _linear(self.cfg.beta0, 1.0, self._progress())

    def _net(self, n_in, n_out, role="online"):
        spec = neural.MLPSpec((n_in, *self.cfg.hidden, n_out), self.cfg.activation)
        return neural.init_params(spec, self.rng, role)

    def _apply(self, params, grads, state):
        if self.cfg.optimizer == "adam":
            neural.adam_step(params, grads, state, lr=self.cfg.lr)
        elif self.cfg.optimizer == "sgd":
            neural.sgd_step(params, grads, lr=self.cfg.lr)
        else:
            raise ConfigError("neural.optimizer", f"unknown optimizer {self.cfg.optimizer!r}")

    def _alloc(self, in_dim):
        cap = self.cfg.capacity
        self._obs = np.zeros((cap, in_dim))
        self._next = np.zeros((cap, in_dim))
        self._ac = np.zeros(cap, dtype=np.intp)
        self._choice = np.zeros(cap, dtype=np.intp)
        self._rew = np.zeros(cap)
        self._gexp = np.zeros(cap)
        self._term = np.zeros(cap, dtype=bool)

    def _store(self, t, choice=None):
        slot = self.buffer.push(t)
        self._obs[slot] = self.encode(t.obs)
        self._next[slot] = self.encode(t.next_obs)
        self._ac[slot] = t.a_c
        self._choice[slot] = t.a_m_or_k if choice is None else choice
        self._rew[slot] = t.reward
        self._gexp[slot] = t.gamma_exp
        self._term[slot] = t.terminal
        return slot

    def _select(self, values, eps):
        if eps > 0 and self.rng.random() < eps:
            return int(self.rng.integers(values.shape[-1]))
        return int(np.argmax(values))

    # -- episode hooks ----------------------------------------------------
    def begin_episode(self):
        pass

    def observe(self, t):
        """Record one decision's transition and train when due."""
        self.decisions += 1
        self._remember(t)
        s = self.cfg.schedule
        if self.decisions >= s.warmup_decisions and self.decisions % s.train_every == 0:
            if len(self.buffer) >= s.batch_size:
                self.train_step()
        if self.decisions % self.cfg.tau == 0:
            self.sync_targets()

    def train_step(self):
        idx, w = self.buffer.sample_indices(self.cfg.schedule.batch_size, self.beta(), self.rng)
        return self._learn(idx, w)


class DMSOAAgent(_DQNBase):
    """Control network plus repeat-count network."""

    style = "dmsoa"

    def __init__(self, obs_dim, n_actions, config: AgentConfig, seed: int = 0):
        super().__init__(obs_dim, n_actions, config, seed)
        self.K = int(config.K)
        if config.action_encoding not in ("scalar", "onehot"):
            raise ConfigError("agent.action_encoding", "expected 'scalar' or 'onehot'")
        enc = 1 if config.action_encoding == "scalar" else self.n_actions
        self.qc = self._net(self.obs_dim, self.n_actions)
        self.qm = self._net(self.obs_dim + enc, self.K)
        self.qc_target = self.qc.copy(role="target")
        self.qm_target = self.qm.copy(role="target")
        self._qc_opt = neural.AdamState(self.qc)
        self._qm_opt = neural.AdamState(self.qm)
        self._alloc(self.obs_dim)

    def encode(self, packet):
        if packet.payload is None:
            raise UsageError("DMSOA needs a measured observation")
        return packet.payload * self.obs_scale

    def encode_action(self, a_c):
        a_c = np.asarray(a_c)
        if self.cfg.action_encoding == "scalar":
            return (a_c / (self.n_actions - 1))[..., None].astype(np.float64)
        return np.eye(self.n_actions)[a_c]

    def qm_input(self, x, a_c):
        return np.concatenate([x, self.encode_action(a_c)], axis=-1)

    def act(self, packet, greedy=None) -> SkipDecision:
        if not packet.fresh:
            raise UsageError("DMSOA decides only from a fresh measurement")
        eps = 0.0 if greedy else self.epsilon()
        x = self.encode(packet)
        a_c = self._select(neural.forward(self.qc, x), eps)
        k = self._select(neural.forward(self.qm, self.qm_input(x, a_c)), eps) + 1
        return SkipDecision(a_c, k)

    def step(self, env, greedy=None):
        return env.dmsoa_schedule(self.act(env.observation, greedy))

    def _remember(self, t):
        self._store(t)

    def targets_from_arrays(self, next_x, rewards, gamma_exp, terminal):
        g = self.cfg.gamma ** gamma_exp
        live = ~terminal
        qc_next = neural.forward(self.qc, next_x)
        a_next = np.argmax(qc_next, axis=1)
        rows = np.arange(len(rewards))
        boot_c = neural.forward(self.qc_target, next_x)[rows, a_next]
        m_in = self.qm_input(next_x, a_next)
        k_next = np.argmax(neural.forward(self.qm, m_in), axis=1)
        boot_m = neural.forward(self.qm_target, m_in)[rows, k_next]
        y_c = rewards + np.where(live, g * boot_c, 0.0)
        y_m = rewards + np.where(live, g * boot_m, 0.0)
        return y_c, y_m

    def _learn(self, idx, w):
        x = self._obs[idx]
        a_c = self._ac[idx]
        k_idx = self._choice[idx] - 1
        y_c, y_m = self.targets_from_arrays(self._next[idx], self._rew[idx], self._gexp[idx], self._term[idx])
        rows = np.arange(len(idx))
        m_in = self.qm_input(x, a_c)
        g_c, loss_c, out_c = neural.backward(self.qc, x, y_c, w, actions=a_c, huber=self.cfg.huber,
                                             return_outputs=True)
        g_m, loss_m, out_m = neural.backward(self.qm, m_in, y_m, w, actions=k_idx, huber=self.cfg.huber,
                                             return_outputs=True)
        td_c = y_c - out_c[rows, a_c]
        td_m = y_m - out_m[rows, k_idx]
        self._apply(self.qc, g_c, self._qc_opt)
        self._apply(self.qm, g_m, self._qm_opt)
        if self.cfg.priority_source == "max":
            td = np.maximum(np.abs(td_c), np.abs(td_m))
        else:
            td = td_c
        self.buffer.update_priorities(idx, td)
        self.updates += 1
        return loss_c, loss_m

    def sync_targets(self):
        neural.copy_into_target(self.qc, self.qc_target)
        neural.copy_into_target(self.qm, self.qm_target)

    def networks(self):
        return {"qc": self.qc, "qm": self.qm}


class OSMBOAAgent(_DQNBase):
    """Single network over (control, measure-bit) tuples; index = a_c * 2 + a_m."""

    style = "osmboa"

    def __init__(self, obs_dim, n_actions, config: AgentConfig, seed: int = 0):
        super().__init__(obs_dim, n_actions, config, seed)
        self.W = int(config.memory_window)
        self.in_dim = self.W * self.obs_dim + 1
        self.q = self._net(self.in_dim, 2 * self.n_actions)
        self.q_target = self.q.copy(role="target")
        self._opt = neural.AdamState(self.q)
        self._nstep = NStepAccumulator(config.n_step, config.gamma)
        self._scale = np.append(np.tile(self.obs_scale, self.W), 1.0)
        self._alloc(self.in_dim)

    def encode(self, packet):
        v = augment(packet, self.cfg.stale_mode)
        if v.shape[-1] != self.in_dim:
            raise UsageError(f"observation width {v.shape[-1]} != {self.in_dim}")
        return v * self._scale

    @staticmethod
    def decode(index) -> ActionTuple:
        return ActionTuple(int(index) // 2, int(index) % 2)

    @staticmethod
    def tuple_index(a_c, a_m):
        return 2 * a_c + a_m

    def act(self, packet, greedy=None) -> ActionTuple:
        x = self.encode(packet)
        eps = 0.0 if greedy else self.epsilon()
        return self.decode(self._select(neural.forward(self.q, x), eps))

    def step(self, env, greedy=None):
        return env.osmboa_step(self.act(env.observation, greedy))

    def begin_episode(self):
        self._nstep.window.clear()

    def _remember(self, t):
        for tn in self._nstep.add(t):
            self._store(tn, self.tuple_index(tn.a_c, tn.a_m_or_k))

    def targets_from_arrays(self, next_x, rewards, gamma_exp, terminal):
        g = self.cfg.gamma ** gamma_exp
        a_next = np.argmax(neural.forward(self.q, next_x), axis=1)
        boot = neural.forward(self.q_target, next_x)[np.arange(len(rewards)), a_next]
        return rewards + np.where(~terminal, g * boot, 0.0)

    def _learn(self, idx, w):
        x = self._obs[idx]
        a = self._choice[idx]
        y = self.targets_from_arrays(self._next[idx], self._rew[idx], self._gexp[idx], self._term[idx])
        g, loss, out = neural.backward(self.q, x, y, w, actions=a, huber=self.cfg.huber, return_outputs=True)
        td = y - out[np.arange(len(idx)), a]
        self._apply(self.q, g, self._opt)
        self.buffer.update_priorities(idx, td)
        self.updates += 1
        return loss

    def sync_targets(self):
        neural.copy_into_target(self.q, self.q_target)

    def networks(self):
        return {"q": self.q}


def _batch_arrays(batch, agent):
    ts = batch.transitions
    next_x = np.stack([agent.encode(t.next_obs) for t in ts])
    rewards = np.array([t.reward for t in ts], dtype=np.float64)
    gexp = np.array([t.gamma_exp for t in ts], dtype=np.float64)
    term = np.array([t.terminal for t in ts], dtype=bool)
    return next_x, rewards, gexp, term


def dmsoa_targets(batch, agent: DMSOAAgent):
    """Double-DQN targets ``(y_control, y_repeat)`` for a sampled batch.

    The bootstrap action is the online argmax at the next observation,
    valued by the target network, discounted by ``gamma ** gamma_exp``.
    The repeat-count target pairs the next observation with the online
    network's greedy control action there.
    """
    return agent.targets_from_arrays(*_batch_arrays(batch, agent))


def osmboa_targets(batch, agent: OSMBOAAgent):
    return agent.targets_from_arrays(*_batch_arrays(batch, agent))


class ScriptedAgent:
    """Fixed policy with the agent interface; used for traces and tests.

    ``policy(packet, decision_index)`` returns a SkipDecision or ActionTuple.
    """

    def __init__(self, style, policy):
        if style not in ("dmsoa", "osmboa"):
            raise ValueError(style)
        self.style = style
        self.policy = policy
        self._i = 0

    def begin_episode(self):
        self._i = 0

    def step(self, env, greedy=None):
        a = self.policy(env.observation, self._i)
        self._i += 1
        if self.style == "dmsoa":
            return env.dmsoa_schedule(a)
        return env.osmboa_step(a)

    def observe(self, t):
        pass


def run_episode(agent, env, seed, learn=False, greedy=False, episode=0) -> EpisodeLog:
    """Play one episode through the wrapper ``env``; train on it when ``learn``."""
    env.reset(seed)
    agent.begin_episode()
    decisions = 0
    while env.active:
        t = agent.step(env, greedy=greedy)
        decisions += 1
        if learn:
            agent.observe(t)
    trace = env.trace
    return EpisodeLog(
        seed=seed,
        episode=episode,
        base_steps=env.base_steps,
        decisions=decisions,
        measured_steps=trace.measured_steps,
        unmeasured_steps=trace.unmeasured_steps,
        costed_return=env.costed_return,
        extrinsic_return=env.extrinsic_return,
        end_cause="terminal" if env.terminal else "truncated",
        trace=trace,
    )


AGENTS = {"dmsoa": DMSOAAgent, "osmboa": OSMBOAAgent}


def make_agent(name, obs_dim, n_actions, config, seed=0):
    try:
        cls = AGENTS[name]
    except KeyError:
        raise ConfigError("agent.name", f"unknown agent {name!r}") from None
    return cls(obs_dim, n_actions, config, seed)


# Agent checkpoint layout (little-endian):
#   8 bytes magic "FRLAGT1\0", uint32 header length, UTF-8 JSON header,
#   then one MLP parameter block (see neural.write_params) per network in the
#   order listed under "networks" in the header.
AGENT_MAGIC = b"FRLAGT1\x00"


def _config_to_json(cfg):
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    d["obs_scale"] = None if cfg.obs_scale is None else list(map(float, cfg.obs_scale))
    return d


def _config_from_json(d):
    d = dict(d)
    d["schedule"] = TrainSchedule(**d["schedule"])
    d["hidden"] = tuple(d["hidden"])
    if d["obs_scale"] is not None:
        d["obs_scale"] = tuple(d["obs_scale"])
    names = {f.name for f in fields(AgentConfig)}
    return AgentConfig(**{k: v for k, v in d.items() if k in names})


def save_agent(path, agent, env_name="", extra=None):
    nets = agent.networks()
    header = {
        "agent": agent.style,
        "env": env_name,
        "obs_dim": agent.obs_dim,
        "n_actions": agent.n_actions,
        "networks": list(nets),
        "config": _config_to_json(agent.cfg),
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(AGENT_MAGIC)
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    for p in nets.values():
        neural.write_params(buf, p)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_agent(path):
    """Rebuild an agent (greedy) from a checkpoint; returns ``(agent, header)``."""
    with open(path, "rb") as f:
        if f.read(8) != AGENT_MAGIC:
            raise ValueError(f"{path}: not an agent checkpoint")
        (n,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(n).decode())
        cfg = _config_from_json(header["config"])
        cfg.capacity = max(cfg.schedule.batch_size, 1)
        agent = make_agent(header["agent"], header["obs_dim"], header["n_actions"], cfg)
        for name in header["networks"]:
            p = neural.read_params(f)
            dst = getattr(agent, name)
            if p.spec != dst.spec:
                raise ValueError(f"{path}: network {name} does not match the agent layout")
            neural.copy_into_target(p, dst)
    agent.sync_targets()
    agent.greedy = True
    return agent, header

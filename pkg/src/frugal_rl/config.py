"""Flat ``key = value`` run configuration.

Keys are namespaced by module, e.g. ``replay.alpha = 0.6``.  Blank lines and
``#`` comments are ignored.  Unknown keys are rejected by name.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .agents import AgentConfig, TrainSchedule
from .errors import ConfigError

__all__ = ["RunConfig", "parse_config", "load_config", "KEYS", "ENV_DEFAULT_C"]


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _optional_float(text):
    return None if str(text).strip().lower() in ("", "none", "off") else float(text)


# key -> (parser, default)
KEYS = {
    "env.name": (str, "cartpole"),
    "env.max_steps": (int, None),
    "env.step_reward": (float, None),
    "env.acrobot_obs": (str, "angles"),
    "env.obs_scale": (_floats, None),
    "agent.name": (str, "dmsoa"),
    "agent.tau": (int, 500),
    "agent.action_encoding": (str, "scalar"),
    "agent.priority_source": (str, "control"),
    "acnomdp.c": (float, None),
    "acnomdp.gamma": (float, 0.99),
    "acnomdp.K": (int, 3),
    "acnomdp.memory_window": (int, 1),
    "acnomdp.stale_mode": (str, "memory"),
    "neural.hidden": (_ints, (64, 64)),
    "neural.activation": (str, "relu"),
    "neural.optimizer": (str, "adam"),
    "neural.lr": (float, 1e-3),
    "neural.huber": (_optional_float, None),
    "replay.capacity": (int, 50_000),
    "replay.alpha": (float, 0.6),
    "replay.beta0": (float, 0.4),
    "replay.eps_prio": (float, 1e-3),
    "replay.n_step": (int, None),
    "train.episodes": (int, 300),
    "train.total_decisions": (int, 30_000),
    "train.warmup": (int, 1_000),
    "train.batch_size": (int, 64),
    "train.train_every": (int, 1),
    "train.eps_start": (float, 1.0),
    "train.eps_end": (float, 0.05),
    "train.eps_decay_frac": (float, 0.6),
    "train.converged_frac": (float, 0.1),
    "eval.period": (int, 10),
    "eval.episodes": (int, 20),
    "run.seeds": (_ints, tuple(range(20))),
    "run.out": (str, "runs/default"),
}

ENV_DEFAULT_C = {"cartpole": 1.1, "acrobot": -0.85, "chain": -0.85}


@dataclass
class RunConfig:
    env_name: str
    env_options: dict
    agent_name: str
    agent: AgentConfig
    c: float
    gamma: float
    K: int
    memory_window: int
    stale_mode: str
    episodes: int
    converged_frac: float
    eval_period: int
    eval_episodes: int
    seeds: tuple
    out: str
    raw: dict = field(default_factory=dict)

    def dump(self) -> str:
        """Resolved configuration in the same ``key = value`` format."""
        lines = []
        for key in KEYS:
            v = self.raw.get(key)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def parse_text(text: str) -> dict:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", f"expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def parse_config(values: dict) -> RunConfig:
    """Validate and type a mapping of config keys (strings or typed values)."""
    raw = {}
    for key, value in values.items():
        if key not in KEYS:
            raise ConfigError(key, "unknown configuration key")
        parser, _ = KEYS[key]
        try:
            raw[key] = parser(value) if isinstance(value, str) else value
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"cannot parse {value!r}: {exc}") from None
    for key, (_, default) in KEYS.items():
        raw.setdefault(key, default)

    env_name = raw["env.name"]
    family = env_name.split(":", 1)[0]
    if family not in ENV_DEFAULT_C:
        raise ConfigError("env.name", f"unknown environment {env_name!r}")
    if raw["acnomdp.c"] is None:
        raw["acnomdp.c"] = ENV_DEFAULT_C[family]
    agent_name = raw["agent.name"]
    if agent_name not in ("dmsoa", "osmboa"):
        raise ConfigError("agent.name", f"unknown agent {agent_name!r}")
    if raw["replay.n_step"] is None:
        raw["replay.n_step"] = 1 if agent_name == "dmsoa" else 3
    if agent_name == "dmsoa" and raw["replay.n_step"] != 1:
        raise ConfigError("replay.n_step", "DMSOA transitions already span k steps; n_step must be 1")
    if raw["acnomdp.stale_mode"] not in ("memory", "zeros"):
        raise ConfigError("acnomdp.stale_mode", "expected 'memory' or 'zeros'")
    seeds = raw["run.seeds"]
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError("run.seeds", "seeds must be nonempty and distinct")
    if raw["train.episodes"] < 1:
        raise ConfigError("train.episodes", "must be >= 1")
    if not 0 < raw["train.converged_frac"] <= 1:
        raise ConfigError("train.converged_frac", "must lie in (0, 1]")
    if raw["eval.period"] < 0 or raw["eval.episodes"] < 0:
        raise ConfigError("eval.period", "must be >= 0")

    schedule = TrainSchedule(
        total_decisions=raw["train.total_decisions"],
        warmup_decisions=raw["train.warmup"],
        batch_size=raw["train.batch_size"],
        train_every=raw["train.train_every"],
        eps_start=raw["train.eps_start"],
        eps_end=raw["train.eps_end"],
        eps_decay_frac=raw["train.eps_decay_frac"],
    )
    agent = AgentConfig(
        hidden=tuple(raw["neural.hidden"]),
        activation=raw["neural.activation"],
        optimizer=raw["neural.optimizer"],
        lr=raw["neural.lr"],
        huber=raw["neural.huber"],
        gamma=raw["acnomdp.gamma"],
        K=raw["acnomdp.K"],
        tau=raw["agent.tau"],
        action_encoding=raw["agent.action_encoding"],
        priority_source=raw["agent.priority_source"],
        obs_scale=raw["env.obs_scale"],
        memory_window=raw["acnomdp.memory_window"],
        stale_mode=raw["acnomdp.stale_mode"],
        capacity=raw["replay.capacity"],
        alpha=raw["replay.alpha"],
        beta0=raw["replay.beta0"],
        eps_prio=raw["replay.eps_prio"],
        n_step=raw["replay.n_step"],
        schedule=schedule,
    )
    env_options = {"acrobot_obs": raw["env.acrobot_obs"]} if family == "acrobot" else {}
    if raw["env.max_steps"] is not None:
        env_options["max_steps"] = raw["env.max_steps"]
    if raw["env.step_reward"] is not None:
        if family == "cartpole":
            raise ConfigError("env.step_reward", "cartpole reward is fixed at 1")
        env_options["step_reward"] = raw["env.step_reward"]

    return RunConfig(
        env_name=env_name,
        env_options=env_options,
        agent_name=agent_name,
        agent=agent,
        c=raw["acnomdp.c"],
        gamma=raw["acnomdp.gamma"],
        K=raw["acnomdp.K"],
        memory_window=raw["acnomdp.memory_window"],
        stale_mode=raw["acnomdp.stale_mode"],
        episodes=raw["train.episodes"],
        converged_frac=raw["train.converged_frac"],
        eval_period=raw["eval.period"],
        eval_episodes=raw["eval.episodes"],
        seeds=tuple(seeds),
        out=raw["run.out"],
        raw=raw,
    )


def load_config(path, overrides=None) -> RunConfig:
    values = parse_text(Path(path).read_text())
    values.update(overrides or {})
    return parse_config(values)

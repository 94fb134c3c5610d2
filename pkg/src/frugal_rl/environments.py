"""Fully observable base environments.

Each environment exposes ``reset(seed)``, ``step(action)`` and ``descriptor()``.
States are returned as fresh float64 arrays so callers may keep them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError

__all__ = [
    "EnvDescriptor",
    "StepOutcome",
    "CartPoleParams",
    "AcrobotParams",
    "ChainParams",
    "CartPole",
    "Acrobot",
    "ChainWorld",
    "make_env",
]


@dataclass(frozen=True)
class EnvDescriptor:
    obs_dim: int
    n_actions: int
    max_episode_steps: int
    r_ext_min: float
    r_ext_max: float

    def __post_init__(self):
        if self.obs_dim < 1 or self.n_actions < 2 or self.max_episode_steps < 1:
            raise ValueError(f"invalid descriptor {self}")
        if self.r_ext_min > self.r_ext_max:
            raise ValueError("r_ext_min > r_ext_max")


@dataclass(frozen=True)
class StepOutcome:
    next_state: np.ndarray
    r_ext: float
    terminal: bool
    truncated: bool


@dataclass(frozen=True)
class CartPoleParams:
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    force_mag: float = 10.0
    dt: float = 0.02
    x_threshold: float = 2.4
    theta_threshold: float = 12 * 2 * math.pi / 360
    init_range: float = 0.05
    max_episode_steps: int = 200


@dataclass(frozen=True)
class AcrobotParams:
    link_length_1: float = 1.0
    link_mass_1: float = 1.0
    link_mass_2: float = 1.0
    link_com_1: float = 0.5
    link_com_2: float = 0.5
    link_moi: float = 1.0
    gravity: float = 9.8
    max_vel_1: float = 4 * math.pi
    max_vel_2: float = 9 * math.pi
    dt: float = 0.2
    init_range: float = 0.1
    max_episode_steps: int = 200
    step_reward: float = -1.0


@dataclass(frozen=True)
class ChainParams:
    length: int = 5
    step_reward: float = -1.0
    max_episode_steps: int = 50


class _BaseEnv:
    """Shared episode bookkeeping; subclasses implement ``_reset`` and ``_advance``."""

    def __init__(self):
        self._steps = 0
        self._done = True
        self._state = None

    @property
    def steps(self):
        return self._steps

    @property
    def state(self):
        """Copy of the true current state."""
        return np.array(self._state, dtype=np.float64)

    def reset(self, seed: int) -> np.ndarray:
        self._state = self._reset(np.random.default_rng(seed))
        self._steps = 0
        self._done = False
        return self.state

    def step(self, action: int) -> StepOutcome:
        if self._done:
            raise UsageError("step() called on a finished episode; call reset() first")
        n = self.descriptor().n_actions
        if not 0 <= int(action) < n:
            raise UsageError(f"action {action} outside [0, {n})")
        self._state, r, terminal = self._advance(int(action))
        self._steps += 1
        truncated = self._steps >= self.descriptor().max_episode_steps
        self._done = terminal or truncated
        return StepOutcome(self.state, float(r), bool(terminal), bool(truncated))

    def _reset(self, rng):
        raise NotImplementedError

    def _advance(self, action):
        raise NotImplementedError

    def descriptor(self) -> EnvDescriptor:
        raise NotImplementedError


class CartPole(_BaseEnv):
    """Cart-pole balancing with explicit Euler integration (classic-control constants)."""

    name = "cartpole"

    def __init__(self, params: CartPoleParams | None = None):
        super().__init__()
        self.params = params or CartPoleParams()
        self._desc = EnvDescriptor(4, 2, self.params.max_episode_steps, 1.0, 1.0)

    def descriptor(self):
        return self._desc

    def _reset(self, rng):
        r = self.params.init_range
        return tuple(float(v) for v in rng.uniform(-r, r, size=4))

    def _advance(self, action):
        p = self.params
        x, x_dot, theta, theta_dot = self._state
        force = p.force_mag if action == 1 else -p.force_mag
        total_mass = p.cart_mass + p.pole_mass
        polemass_length = p.pole_mass * p.half_length
        costheta = math.cos(theta)
        sintheta = math.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sintheta) / total_mass
        thetaacc = (p.gravity * sintheta - costheta * temp) / (
            p.half_length * (4.0 / 3.0 - p.pole_mass * costheta**2 / total_mass)
        )
        xacc = temp - polemass_length * thetaacc * costheta / total_mass
        x = x + p.dt * x_dot
        x_dot = x_dot + p.dt * xacc
        theta = theta + p.dt * theta_dot
        theta_dot = theta_dot + p.dt * thetaacc
        terminal = (
            x < -p.x_threshold
            or x > p.x_threshold
            or theta < -p.theta_threshold
            or theta > p.theta_threshold
        )
        return (x, x_dot, theta, theta_dot), 1.0, terminal


def wrap_angle(x: float) -> float:
    """Map an angle into (-pi, pi]."""
    y = math.fmod(x + math.pi, 2 * math.pi)
    if y <= 0.0:
        y += 2 * math.pi
    return y - math.pi


class Acrobot(_BaseEnv):
    """Two-link underactuated swing-up, RK4 over one 0.2 s step.

    ``observation="angles"`` returns (theta1, theta2, omega1, omega2); ``"trig"``
    returns (cos theta1, sin theta1, cos theta2, sin theta2, omega1, omega2).
    theta1 = 0 is the link hanging straight down.
    """

    name = "acrobot"
    torques = (-1.0, 0.0, 1.0)

    def __init__(self, params: AcrobotParams | None = None, observation: str = "angles"):
        super().__init__()
        if observation not in ("angles", "trig"):
            raise ConfigError("env.acrobot_obs", f"unknown observation mode {observation!r}")
        self.params = params or AcrobotParams()
        self.observation = observation
        r = self.params.step_reward
        dim = 4 if observation == "angles" else 6
        self._desc = EnvDescriptor(dim, 3, self.params.max_episode_steps, r, r)

    def descriptor(self):
        return self._desc

    @property
    def state(self):
        s = self._state
        if self.observation == "angles":
            return np.array(s, dtype=np.float64)
        return np.array(
            [math.cos(s[0]), math.sin(s[0]), math.cos(s[1]), math.sin(s[1]), s[2], s[3]]
        )

    @property
    def raw_state(self):
        return np.array(self._state, dtype=np.float64)

    def _reset(self, rng):
        r = self.params.init_range
        return tuple(float(v) for v in rng.uniform(-r, r, size=4))

    def _dsdt(self, s, torque):
        p = self.params
        m1, m2 = p.link_mass_1, p.link_mass_2
        l1 = p.link_length_1
        lc1, lc2 = p.link_com_1, p.link_com_2
        i1 = i2 = p.link_moi
        g = p.gravity
        theta1, theta2, dtheta1, dtheta2 = s
        cos2 = math.cos(theta2)
        sin2 = math.sin(theta2)
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * cos2) + i1 + i2
        d2 = m2 * (lc2**2 + l1 * lc2 * cos2) + i2
        phi2 = m2 * lc2 * g * math.sin(theta1 + theta2)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2**2 * sin2
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * sin2
            + (m1 * lc1 + m2 * l1) * g * math.sin(theta1)
            + phi2
        )
        ddtheta2 = (
            torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * sin2 - phi2
        ) / (m2 * lc2**2 + i2 - d2**2 / d1)
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return (dtheta1, dtheta2, ddtheta1, ddtheta2)

    def _advance(self, action):
        p = self.params
        torque = self.torques[action]
        s = self._state
        h = p.dt
        k1 = self._dsdt(s, torque)
        k2 = self._dsdt(tuple(a + 0.5 * h * b for a, b in zip(s, k1)), torque)
        k3 = self._dsdt(tuple(a + 0.5 * h * b for a, b in zip(s, k2)), torque)
        k4 = self._dsdt(tuple(a + h * b for a, b in zip(s, k3)), torque)
        ns = [a + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4)]
        ns[0] = wrap_angle(ns[0])
        ns[1] = wrap_angle(ns[1])
        ns[2] = min(max(ns[2], -p.max_vel_1), p.max_vel_1)
        ns[3] = min(max(ns[3], -p.max_vel_2), p.max_vel_2)
        terminal = -math.cos(ns[0]) - math.cos(ns[1] + ns[0]) > 1.0
        return tuple(ns), p.step_reward, terminal


class ChainWorld(_BaseEnv):
    """Deterministic corridor: start at 0, goal at ``length - 1``; actions 0=left, 1=right."""

    LEFT = 0
    RIGHT = 1

    def __init__(self, params: ChainParams | None = None):
        super().__init__()
        self.params = params or ChainParams()
        if self.params.length < 2:
            raise ConfigError("env.name", "chain length must be >= 2")
        self.name = f"chain:{self.params.length}"
        r = self.params.step_reward
        self._desc = EnvDescriptor(1, 2, self.params.max_episode_steps, r, r)

    def descriptor(self):
        return self._desc

    def _reset(self, rng):
        return (0.0,)

    def _advance(self, action):
        pos, reward, terminal = self.model_step(int(self._state[0]), action)
        return (float(pos),), reward, terminal

    def model_step(self, pos: int, action: int):
        """Pure transition function, used by the exact solver."""
        n = self.params.length
        pos = min(pos + 1, n - 1) if action == self.RIGHT else max(pos - 1, 0)
        return pos, self.params.step_reward, pos == n - 1


def make_env(name: str, **options):
    """Build an environment from its config name ("cartpole", "acrobot", "chain:N").

    Recognised options: ``max_steps`` (all), ``step_reward`` (chain/acrobot),
    ``acrobot_obs`` ("angles" or "trig").
    """
    max_steps = options.pop("max_steps", None)
    step_reward = options.pop("step_reward", None)
    acrobot_obs = options.pop("acrobot_obs", "angles")
    if options:
        key = next(iter(options))
        raise ConfigError(f"env.{key}", "unknown environment option")
    if name == "cartpole":
        kw = {} if max_steps is None else {"max_episode_steps": int(max_steps)}
        return CartPole(CartPoleParams(**kw))
    if name == "acrobot":
        kw = {}
        if max_steps is not None:
            kw["max_episode_steps"] = int(max_steps)
        if step_reward is not None:
            kw["step_reward"] = float(step_reward)
        return Acrobot(AcrobotParams(**kw), observation=acrobot_obs)
    if name.startswith("chain:"):
        try:
            n = int(name.split(":", 1)[1])
        except ValueError:
            raise ConfigError("env.name", f"bad chain length in {name!r}") from None
        kw = {"length": n}
        if max_steps is not None:
            kw["max_episode_steps"] = int(max_steps)
        if step_reward is not None:
            kw["step_reward"] = float(step_reward)
        return ChainWorld(ChainParams(**kw))
    raise ConfigError("env.name", f"unknown environment {name!r}")

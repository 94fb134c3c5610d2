"""Action-contingent measurement wrapper.

Turns a fully observable base environment into one where the agent pays for
state measurements.  Two interaction styles share one wrapper instance:

* ``osmboa_step``: one base step per call with an explicit measure bit.
* ``dmsoa_schedule``: repeat a control action ``k`` times, measuring only on
  the last application.

Reward routing: a measured base step yields the environment's extrinsic
reward; an unmeasured one yields the intrinsic bonus ``c``.  The final base
step of an episode (terminal or horizon) is always measured.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, UndefinedRatioError, UsageError

__all__ = [
    "ObservationPacket",
    "ActionTuple",
    "SkipDecision",
    "RewardSpec",
    "CostedTransition",
    "DecisionRecord",
    "MeasurementTrace",
    "ACNOMDP",
    "measurement_ratio",
    "augment",
]

STALE_MODES = ("memory", "zeros")


@dataclass(frozen=True, eq=False)
class ObservationPacket:
    """What the agent sees after a base step.

    ``payload`` is the measured state, or ``None`` (the EMPTY marker) in
    zeros mode.  ``memory`` holds the most recent measured states, newest first.
    """

    payload: np.ndarray | None
    fresh: bool
    source_step: int
    memory: tuple = ()

    @property
    def empty(self):
        return self.payload is None


class ActionTuple(NamedTuple):
    a_c: int
    a_m: int


class SkipDecision(NamedTuple):
    a_c: int
    k: int


@dataclass(frozen=True)
class RewardSpec:
    c: float
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("acnomdp.gamma", f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass(frozen=True, eq=False)
class CostedTransition:
    obs: ObservationPacket
    a_c: int
    a_m_or_k: int
    reward: float
    next_obs: ObservationPacket
    terminal: bool
    truncated: bool
    base_steps: int
    measured_count: int
    gamma_exp: int = 1


@dataclass
class DecisionRecord:
    index: int
    start_step: int
    a_c: int
    choice: int  # k for DMSOA, a_m for OSMBOA
    measured: list = field(default_factory=list)

    @property
    def span(self):
        return len(self.measured)


@dataclass
class MeasurementTrace:
    """Per-decision measure/skip record for one episode."""

    style: str = ""
    decisions: list = field(default_factory=list)

    @property
    def measured_steps(self):
        return sum(sum(d.measured) for d in self.decisions)

    @property
    def base_steps(self):
        return sum(d.span for d in self.decisions)

    @property
    def unmeasured_steps(self):
        return self.base_steps - self.measured_steps

    def per_step(self):
        """Flat 0/1 measured flags, one per base step."""
        return [m for d in self.decisions for m in d.measured]


def measurement_ratio(trace) -> float:
    """Unmeasured base steps per measured base step (the ``x`` in ``1:x``).

    Accepts a :class:`MeasurementTrace` or a ``(measured, unmeasured)`` pair.
    """
    if isinstance(trace, MeasurementTrace):
        measured, unmeasured = trace.measured_steps, trace.unmeasured_steps
    else:
        measured, unmeasured = trace
    if measured <= 0:
        raise UndefinedRatioError("measurement ratio undefined: no measured steps")
    return unmeasured / measured


def augment(packet: ObservationPacket, stale_mode: str = "memory") -> np.ndarray:
    """Flatten a packet into the memory-plus-freshness-flag vector."""
    flag = 1.0 if packet.fresh else 0.0
    mem = np.concatenate(packet.memory)
    if stale_mode == "zeros" and not packet.fresh:
        mem = np.zeros_like(mem)
    return np.append(mem, flag)


class ACNOMDP:
    """Measurement-cost wrapper around a base environment."""

    def __init__(self, env, c, gamma=1.0, K=3, memory_window=1, stale_mode="memory"):
        self.env = env
        self.rewards = RewardSpec(float(c), float(gamma))
        if int(K) < 1:
            raise ConfigError("acnomdp.K", "K must be >= 1")
        if int(memory_window) < 1:
            raise ConfigError("acnomdp.memory_window", "memory window must be >= 1")
        if stale_mode not in STALE_MODES:
            raise ConfigError("acnomdp.stale_mode", f"expected one of {STALE_MODES}")
        self.K = int(K)
        self.memory_window = int(memory_window)
        self.stale_mode = stale_mode
        desc = env.descriptor()
        if desc.r_ext_max > 0 and self.rewards.c < desc.r_ext_max:
            warnings.warn(
                f"intrinsic bonus c={self.rewards.c} is below r_ext_max={desc.r_ext_max}; "
                "the agent has little incentive to skip measurements",
                stacklevel=2,
            )
        self._active = False
        self._packet = None

    @property
    def c(self):
        return self.rewards.c

    @property
    def gamma(self):
        return self.rewards.gamma

    def descriptor(self):
        return self.env.descriptor()

    @property
    def active(self):
        return self._active

    @property
    def observation(self) -> ObservationPacket:
        return self._packet

    def reset(self, seed: int) -> ObservationPacket:
        s0 = self.env.reset(seed)
        self._memory = (s0,) * self.memory_window
        self._memory_step = 0
        self._active = True
        self.trace = MeasurementTrace()
        self.costed_return = 0.0
        self.extrinsic_return = 0.0
        self.terminal = False
        self.truncated = False
        self._packet = ObservationPacket(s0, True, 0, self._memory)
        return self._packet

    @property
    def base_steps(self):
        return self.env.steps

    def osmboa_observe(self) -> np.ndarray:
        self._require_active()
        return augment(self._packet, self.stale_mode)

    def _require_active(self):
        if not self._active:
            raise UsageError("episode is not active; call reset()")

    def _base_step(self, a_c, measure, record):
        out = self.env.step(a_c)
        done = out.terminal or out.truncated
        measured = bool(measure) or done
        reward = out.r_ext if measured else self.rewards.c
        self.costed_return += reward
        self.extrinsic_return += out.r_ext
        record.measured.append(1 if measured else 0)
        if measured:
            self._memory = (out.next_state,) + self._memory[: self.memory_window - 1]
            self._memory_step = self.env.steps
            self._packet = ObservationPacket(out.next_state, True, self.env.steps, self._memory)
        else:
            payload = self._memory[0] if self.stale_mode == "memory" else None
            self._packet = ObservationPacket(payload, False, self._memory_step, self._memory)
        if done:
            self._active = False
            self.terminal = out.terminal
            self.truncated = out.truncated
        return out, measured, reward

    def _new_record(self, a_c, choice, style):
        self.trace.style = style
        rec = DecisionRecord(len(self.trace.decisions), self.env.steps, int(a_c), int(choice))
        self.trace.decisions.append(rec)
        return rec

    def osmboa_step(self, a) -> CostedTransition:
        self._require_active()
        a_c, a_m = int(a[0]), int(a[1])
        if a_m not in (0, 1):
            raise UsageError(f"measure bit must be 0 or 1, got {a_m}")
        obs = self._packet
        rec = self._new_record(a_c, a_m, "osmboa")
        out, measured, reward = self._base_step(a_c, a_m == 1, rec)
        return CostedTransition(
            obs, a_c, a_m, reward, self._packet, out.terminal, out.truncated,
            1, int(measured), 1,
        )

    def dmsoa_schedule(self, d) -> CostedTransition:
        self._require_active()
        a_c, k = int(d[0]), int(d[1])
        if not 1 <= k <= self.K:
            raise UsageError(f"repeat count k={k} outside [1, {self.K}]")
        obs = self._packet
        rec = self._new_record(a_c, k, "dmsoa")
        total = 0.0
        discount = 1.0
        j = 0
        for i in range(k):
            out, _, reward = self._base_step(a_c, i == k - 1, rec)
            total += discount * reward
            discount *= self.rewards.gamma
            j += 1
            if out.terminal or out.truncated:
                break
        return CostedTransition(
            obs, a_c, k, total, self._packet, out.terminal, out.truncated, j, 1, j,
        )

"""Exact optimal costed returns for small deterministic chain instances.

Both solvers run backward induction over the steps remaining before the
horizon.  They encode the wrapper's rules independently of it: an
unmeasured base step pays ``c``, a measured one pays the extrinsic reward,
and the last base step of an episode (goal or horizon) is always measured.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .acnomdp import ActionTuple, SkipDecision
from .environments import ChainParams, ChainWorld

__all__ = [
    "AugmentedState",
    "OracleSolution",
    "solve_dmsoa",
    "solve_osmboa",
    "sweep_intrinsic",
    "SweepResult",
]

MAX_STATES = 10**6
_TIE = 1e-12


class AugmentedState(NamedTuple):
    pos: int
    memory: tuple  # last measured positions, newest first; None entries mean EMPTY
    fresh: bool
    steps_left: int


@dataclass
class OracleSolution:
    optimal_return: float
    decisions: list
    measured_steps: int
    unmeasured_steps: int
    n_states: int = 0
    values: dict = field(default_factory=dict, repr=False)

    @property
    def base_steps(self):
        return self.measured_steps + self.unmeasured_steps

    @property
    def ratio(self):
        return self.unmeasured_steps / self.measured_steps


def _chain(params):
    if isinstance(params, ChainWorld):
        return params
    return ChainWorld(params if isinstance(params, ChainParams) else ChainParams(**params))


def _check_size(n, horizon):
    if n * horizon > MAX_STATES:
        raise ValueError(f"instance too large for exact solution: N*H = {n * horizon}")


def _run_decision(world, pos, a_c, k, steps_left, c, gamma):
    """Apply a_c up to k times; returns (reward, new_pos, steps_used, done, measured_flags)."""
    total = 0.0
    disc = 1.0
    flags = []
    done = False
    for i in range(k):
        pos, r_ext, goal = world.model_step(pos, a_c)
        steps_left -= 1
        done = goal or steps_left == 0
        measured = i == k - 1 or done
        total += disc * (r_ext if measured else c)
        disc *= gamma
        flags.append(measured)
        if done:
            break
    return total, pos, len(flags), done, flags


def _replay_return(world, decisions, c, gamma, horizon):
    """Forward, per-base-step discounted sum of a decision sequence.

    ``SkipDecision`` entries repeat their action k times; ``ActionTuple``
    entries with a_m = 0 are single unmeasured steps.
    """
    pos, left, total, t = 0, horizon, 0.0, 0
    for d in decisions:
        k = d.k if isinstance(d, SkipDecision) else 1
        measure_last = isinstance(d, SkipDecision)
        for i in range(k):
            pos, r_ext, goal = world.model_step(pos, d.a_c)
            left -= 1
            done = goal or left == 0
            measured = done or (measure_last and i == k - 1)
            total += gamma**t * (r_ext if measured else c)
            t += 1
            if done:
                return total
    raise AssertionError("decision sequence does not end the episode")


def _agree(forward, backward):
    if abs(forward - backward) > 1e-9 * max(1.0, abs(backward)):
        raise AssertionError(f"rollout {forward} disagrees with induction value {backward}")


def solve_dmsoa(params, c, gamma=1.0, K=3, horizon=None) -> OracleSolution:
    """Best (control action, repeat count) sequence from the start state.

    Ties go to the lowest control action, then the smallest k.
    """
    world = _chain(params)
    n = world.params.length
    horizon = int(horizon or world.params.max_episode_steps)
    _check_size(n, horizon)
    goal = n - 1
    value = {(p, 0): 0.0 for p in range(n)}
    policy = {}
    for h in range(1, horizon + 1):
        for p in range(n):
            if p == goal:
                value[(p, h)] = 0.0
                continue
            best, arg = None, None
            for a_c in range(world.descriptor().n_actions):
                for k in range(1, K + 1):
                    r, p2, j, done, _ = _run_decision(world, p, a_c, k, h, c, gamma)
                    v = r if done else r + gamma**j * value[(p2, h - j)]
                    if best is None or v > best + _TIE:
                        best, arg = v, SkipDecision(a_c, k)
            value[(p, h)] = best
            policy[(p, h)] = arg

    decisions, measured, unmeasured = [], 0, 0
    pos, h = 0, horizon
    while True:
        d = policy[(pos, h)]
        _, pos, j, done, flags = _run_decision(world, pos, d.a_c, d.k, h, c, gamma)
        decisions.append(d)
        measured += sum(flags)
        unmeasured += len(flags) - sum(flags)
        h -= j
        if done:
            break
    ret = _replay_return(world, decisions, c, gamma, horizon)
    _agree(ret, value[(0, horizon)])
    return OracleSolution(ret, decisions, measured, unmeasured, len(value), value)


def solve_osmboa(params, c, gamma=1.0, horizon=None, memory=1, stale_mode="memory") -> OracleSolution:
    """Best (control action, measure bit) sequence, by induction over augmented states.

    The augmented state carries the remembered measurements and freshness
    flag the agent would observe.  Ties prefer measuring, then the lowest
    control action.
    """
    world = _chain(params)
    n = world.params.length
    horizon = int(horizon or world.params.max_episode_steps)
    _check_size(n, horizon)
    goal = n - 1
    n_actions = world.descriptor().n_actions

    def successor(s, a_c, a_m):
        p2, r_ext, at_goal = world.model_step(s.pos, a_c)
        left = s.steps_left - 1
        done = at_goal or left == 0
        measured = a_m == 1 or done
        if measured:
            mem = (p2,) + tuple(m for m in s.memory if m is not None)[: memory - 1]
            mem += (None,) * (memory - len(mem))
        elif stale_mode == "memory":
            mem = s.memory
        else:
            mem = (None,) * memory
        return AugmentedState(p2, mem, measured, left), (r_ext if measured else c), done, measured

    start = AugmentedState(0, (0,) * memory, True, horizon)
    # forward sweep collects every reachable augmented state by level
    levels = {horizon: {start}}
    for h in range(horizon, 0, -1):
        nxt = set()
        for s in levels[h]:
            if s.pos == goal:
                continue
            for a_c in range(n_actions):
                for a_m in (1, 0):
                    s2, _, done, _ = successor(s, a_c, a_m)
                    if not done:
                        nxt.add(s2)
        levels[h - 1] = nxt

    value, policy = {}, {}
    for h in range(1, horizon + 1):
        for s in levels[h]:
            if s.pos == goal:
                value[s] = 0.0
                continue
            best, arg = None, None
            for a_m in (1, 0):
                for a_c in range(n_actions):
                    s2, r, done, _ = successor(s, a_c, a_m)
                    v = r if done else r + gamma * value[s2]
                    if best is None or v > best + _TIE:
                        best, arg = v, ActionTuple(a_c, a_m)
            value[s] = best
            policy[s] = arg

    decisions, measured = [], 0
    s = start
    while True:
        a = policy[s]
        s, _, done, was_measured = successor(s, *a)
        decisions.append(a)
        measured += was_measured
        if done:
            break
    ret = _replay_return(world, [SkipDecision(a.a_c, 1) if a.a_m else a for a in decisions], c, gamma, horizon)
    _agree(ret, value[start])
    return OracleSolution(ret, decisions, measured, len(decisions) - measured, len(value), value)


@dataclass
class SweepResult:
    rows: list  # (c, ratio, optimal_return)

    @property
    def ratio_non_decreasing(self):
        ratios = [r[1] for r in self.rows]
        return all(b >= a - 1e-12 for a, b in zip(ratios, ratios[1:]))


def sweep_intrinsic(solver, c_grid, **kwargs) -> SweepResult:
    """Solve once per bonus level ``c`` (sorted ascending) and tabulate the optimal ratio."""
    grid = sorted(float(c) for c in c_grid)
    if not grid:
        raise ValueError("empty c grid")
    rows = []
    for c in grid:
        sol = solver(c=c, **kwargs)
        rows.append((c, sol.ratio, sol.optimal_return))
    return SweepResult(rows)

"""Proportional prioritized replay backed by a sum tree, plus n-step assembly."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .acnomdp import CostedTransition

__all__ = ["SumTree", "SampleBatch", "PrioritizedReplay", "assemble_nstep", "NStepAccumulator"]


class SumTree:
    """Binary tree of priority sums over ``capacity`` leaves.

    Node 1 is the root; node ``i`` has children ``2i`` and ``2i+1``; leaf
    ``j`` lives at node ``capacity + j``.  Capacity is rounded up to a power
    of two.  Parents are recomputed from their children on every write, so
    each internal node is exactly the floating-point sum of its children.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = 1 << (int(capacity) - 1).bit_length()
        self.depth = self.capacity.bit_length() - 1
        self.nodes = np.zeros(2 * self.capacity)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity :]

    def get(self, leaf):
        return self.nodes[self.capacity + np.asarray(leaf)]

    def set(self, leaf, value) -> None:
        """Set one or many leaves and repair all their ancestors."""
        tree = self.nodes
        if np.ndim(leaf) == 0:
            if value < 0:
                raise ValueError("priorities must be nonnegative")
            i = self.capacity + int(leaf)
            tree[i] = value
            i >>= 1
            while i >= 1:
                tree[i] = tree[2 * i] + tree[2 * i + 1]
                i >>= 1
            return
        leaf = np.asarray(leaf, dtype=np.intp)
        value = np.broadcast_to(np.asarray(value, dtype=np.float64), leaf.shape)
        if np.any(value < 0):
            raise ValueError("priorities must be nonnegative")
        nodes = self.capacity + leaf
        tree[nodes] = value
        # all touched nodes share a level; duplicate indices just recompute the same sum
        for _ in range(self.depth):
            nodes = nodes >> 1
            tree[nodes] = tree[2 * nodes] + tree[2 * nodes + 1]

    def find(self, values) -> np.ndarray:
        """Leaf index whose cumulative-sum interval contains each query value.

        Leaf ``j`` owns ``[sum(p[:j]), sum(p[:j+1]))``.
        """
        v = np.array(values, dtype=np.float64, ndmin=1)
        idx = np.ones(v.shape, dtype=np.intp)
        for _ in range(self.depth):
            left = 2 * idx
            lv = self.nodes[left]
            right = v >= lv
            v = np.where(right, v - lv, v)
            idx = left + right
        return idx - self.capacity


@dataclass
class SampleBatch:
    transitions: list
    indices: np.ndarray
    is_weights: np.ndarray


class PrioritizedReplay:
    """Ring buffer of transitions sampled in proportion to ``priority ** alpha``."""

    def __init__(self, capacity: int, alpha: float = 0.6, eps_prio: float = 1e-3):
        self.max_size = int(capacity)
        self.tree = SumTree(self.max_size)
        self.alpha = float(alpha)
        self.eps_prio = float(eps_prio)
        self.data = [None] * self.max_size
        self.size = 0
        self.cursor = 0
        self.max_priority = 1.0

    def __len__(self):
        return self.size

    def push(self, transition, priority=None) -> int:
        """Store ``transition``; ``priority=None`` uses the largest priority seen so far."""
        if priority is None:
            priority = self.max_priority
        if priority < 0:
            raise ValueError(f"negative priority {priority}")
        slot = self.cursor
        self.data[slot] = transition
        self.tree.set(slot, priority**self.alpha)
        self.max_priority = max(self.max_priority, float(priority))
        self.cursor = (self.cursor + 1) % self.max_size
        self.size = min(self.size + 1, self.max_size)
        return slot

    def sample_indices(self, batch_size: int, beta: float, rng: np.random.Generator):
        """Stratified proportional draw; returns ``(indices, is_weights)``."""
        if self.size < batch_size or batch_size < 1:
            raise ValueError(f"cannot sample {batch_size} from a buffer holding {self.size}")
        total = self.tree.total
        seg = total / batch_size
        u = (np.arange(batch_size) + rng.random(batch_size)) * seg
        idx = self.tree.find(np.minimum(u, np.nextafter(total, 0.0)))
        idx = self._repair(idx)
        probs = self.tree.get(idx) / total
        w = (self.size * probs) ** (-beta)
        return idx, w / w.max()

    def _repair(self, idx):
        # float round-off can walk into an empty or zero-priority leaf
        bad = (idx >= self.size) | (self.tree.get(np.minimum(idx, self.tree.capacity - 1)) <= 0)
        if np.any(bad):
            alive = np.flatnonzero(self.tree.leaves()[: self.size] > 0)
            for i in np.flatnonzero(bad):
                j = np.searchsorted(alive, idx[i])
                idx[i] = alive[min(j, alive.size - 1)] if j < alive.size else alive[-1]
        return idx

    def sample(self, batch_size: int, beta: float, rng: np.random.Generator) -> SampleBatch:
        idx, w = self.sample_indices(batch_size, beta, rng)
        return SampleBatch([self.data[i] for i in idx], idx, w)

    def update_priorities(self, indices, td_errors) -> None:
        indices = np.asarray(indices, dtype=np.intp)
        if np.any(indices < 0) or np.any(indices >= self.size):
            raise IndexError("priority update for a slot that holds no transition")
        raw = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.eps_prio
        self.tree.set(indices, raw**self.alpha)
        self.max_priority = max(self.max_priority, float(raw.max()))


def assemble_nstep(transitions, n: int, gamma: float) -> CostedTransition:
    """Collapse up to ``n`` consecutive transitions into one.

    Rewards are discounted by each piece's accumulated exponent; the result
    stops early at the first transition that ends the episode.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pieces = []
    for t in transitions:
        pieces.append(t)
        if len(pieces) == n or t.terminal or t.truncated:
            break
    if not pieces:
        raise ValueError("no transitions to assemble")
    if len(pieces) == 1:
        return pieces[0]
    reward = 0.0
    exp = 0
    for t in pieces:
        reward += gamma**exp * t.reward
        exp += t.gamma_exp
    first, last = pieces[0], pieces[-1]
    return replace(
        first,
        reward=reward,
        next_obs=last.next_obs,
        terminal=last.terminal,
        truncated=last.truncated,
        base_steps=sum(t.base_steps for t in pieces),
        measured_count=sum(t.measured_count for t in pieces),
        gamma_exp=exp,
    )


class NStepAccumulator:
    """Streaming n-step assembly for one episode at a time."""

    def __init__(self, n: int, gamma: float):
        self.n = int(n)
        self.gamma = gamma
        self.window = deque()

    def add(self, t: CostedTransition) -> list:
        """Feed one transition; returns the n-step transitions now complete."""
        self.window.append(t)
        ready = []
        if t.terminal or t.truncated:
            while self.window:
                ready.append(assemble_nstep(list(self.window), self.n, self.gamma))
                self.window.popleft()
        elif len(self.window) == self.n:
            ready.append(assemble_nstep(list(self.window), self.n, self.gamma))
            self.window.popleft()
        return ready

"""Transition storage and batch sampling: uniform, proportional-prioritized, and KL-scored."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainError, EmptyPriorityError, ShapeError, SnapshotError, UnderfullError
from .gauss import COV_REG, KlTarget, fit_batch_policy, kl_to_isotropic

PolicyFn = Callable[[np.ndarray], np.ndarray]
QFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

PRIORITY_EPS = 1e-6

_BUFFER_MAGIC = b"KLPER-RB 1\n"
_BUFFER_HEADER = struct.Struct("<5q")


class Transition(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class CandidateBatch:
    """A sampled set of buffer rows, materialized as arrays."""

    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    kappa: float | None = None
    weights: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.indices)


class ReplayBuffer:
    """Fixed-capacity ring buffer; once full the oldest row is overwritten first."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1 or state_dim < 1 or action_dim < 1:
            raise ShapeError("capacity and dimensions must be positive")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> int:
        """Store ``t`` and return the slot it was written to."""
        s = np.asarray(t.s, dtype=np.float64).reshape(-1)
        a = np.asarray(t.a, dtype=np.float64).reshape(-1)
        s2 = np.asarray(t.s_next, dtype=np.float64).reshape(-1)
        if s.size != self.state_dim or s2.size != self.state_dim or a.size != self.action_dim:
            raise ShapeError(
                f"transition dims (s={s.size}, a={a.size}, s'={s2.size}) do not match "
                f"buffer (m={self.state_dim}, l={self.action_dim})"
            )
        r = float(t.r)
        if not (np.isfinite(s).all() and np.isfinite(a).all() and np.isfinite(s2).all() and math.isfinite(r)):
            raise DomainError("transition contains non-finite values")
        i = self.cursor
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self.dones[i] = 1.0 if t.done else 0.0
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def __getitem__(self, i: int) -> Transition:
        if not 0 <= i < self.size:
            raise IndexError(i)
        return Transition(
            self.states[i].copy(), self.actions[i].copy(), float(self.rewards[i]),
            self.next_states[i].copy(), bool(self.dones[i]),
        )

    def ordered_indices(self) -> np.ndarray:
        """Slot indices from oldest to newest stored transition."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def gather(self, indices: np.ndarray) -> CandidateBatch:
        idx = np.asarray(indices, dtype=np.int64)
        return CandidateBatch(
            indices=idx,
            states=self.states[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_states=self.next_states[idx],
            dones=self.dones[idx],
        )

    def _check_fill(self, b: int) -> None:
        if b < 1:
            raise ShapeError(f"batch size must be positive, got {b}")
        if self.size < b:
            raise UnderfullError(f"buffer holds {self.size} transitions, batch needs {b}")

    def save(self, path: str | Path) -> None:
        """Write header (m, l, capacity, size, cursor) then packed float64 rows."""
        n = self.size
        rows = np.concatenate(
            [self.states[:n], self.actions[:n], self.rewards[:n, None],
             self.next_states[:n], self.dones[:n, None]],
            axis=1,
        )
        with open(path, "wb") as fh:
            fh.write(_BUFFER_MAGIC)
            fh.write(_BUFFER_HEADER.pack(self.state_dim, self.action_dim, self.capacity, n, self.cursor))
            fh.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ReplayBuffer":
        with open(path, "rb") as fh:
            if fh.readline() != _BUFFER_MAGIC:
                raise SnapshotError(f"{path}: not a replay buffer snapshot")
            m, l, capacity, size, cursor = _BUFFER_HEADER.unpack(fh.read(_BUFFER_HEADER.size))
            payload = fh.read()
        width = 2 * m + l + 2
        if len(payload) != size * width * 8:
            raise SnapshotError(f"{path}: payload length does not match header")
        rows = np.frombuffer(payload, dtype="<f8").reshape(size, width)
        buf = cls(capacity, m, l)
        buf.states[:size] = rows[:, :m]
        buf.actions[:size] = rows[:, m:m + l]
        buf.rewards[:size] = rows[:, m + l]
        buf.next_states[:size] = rows[:, m + l + 1:2 * m + l + 1]
        buf.dones[:size] = rows[:, -1]
        buf.size, buf.cursor = size, cursor
        return buf


def sample_uniform(buffer: ReplayBuffer, b: int, rng: np.random.Generator) -> CandidateBatch:
    """``b`` indices drawn uniformly with replacement."""
    buffer._check_fill(b)
    return buffer.gather(rng.integers(0, buffer.size, size=b))


class SumTree:
    """Array-backed binary tree whose internal nodes hold the sum of their children.

    Leaves live at ``tree[base + i]``; ``tree[1]`` is the root. Every write
    recomputes the touched ancestors from their children, so sums never drift.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ShapeError("capacity must be positive")
        self.capacity = int(capacity)
        self.base = 1 << max(0, (self.capacity - 1).bit_length())
        self.depth = self.base.bit_length() - 1
        self.tree = np.zeros(2 * self.base)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    @property
    def leaves(self) -> np.ndarray:
        return self.tree[self.base:self.base + self.capacity]

    def set(self, indices, values) -> None:
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        vals = np.broadcast_to(np.asarray(values, dtype=np.float64), idx.shape)
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= self.capacity:
            raise IndexError("leaf index out of range")
        if (vals < 0).any() or not np.isfinite(vals).all():
            raise DomainError("priorities must be finite and non-negative")
        self.tree[self.base + idx] = vals
        nodes = np.unique((self.base + idx) >> 1)
        while nodes.size and nodes[0] >= 1:
            self.tree[nodes] = self.tree[2 * nodes] + self.tree[2 * nodes + 1]
            if nodes[0] == 1:
                break
            nodes = np.unique(nodes >> 1)

    def rebuild(self) -> None:
        for level in range(self.depth - 1, -1, -1):
            lo, hi = 1 << level, 1 << (level + 1)
            nodes = np.arange(lo, hi)
            self.tree[nodes] = self.tree[2 * nodes] + self.tree[2 * nodes + 1]

    def find(self, values: np.ndarray) -> np.ndarray:
        """Leaf index whose cumulative-sum interval contains each value in ``values``."""
        v = np.array(values, dtype=np.float64, ndmin=1)
        node = np.ones(v.shape, dtype=np.int64)
        for _ in range(self.depth):
            left = 2 * node
            left_sum = self.tree[left]
            right = v >= left_sum
            v = np.where(right, v - left_sum, v)
            node = left + right
        return node - self.base


class PrioritizedReplayBuffer(ReplayBuffer):
    """Ring buffer with proportional priorities ``(|td| + eps) ** alpha`` kept in a sum tree."""

    def __init__(
        self,
        capacity: int,
        state_dim: int,
        action_dim: int,
        alpha: float = 0.6,
        beta: float = 0.4,
        eps: float = PRIORITY_EPS,
    ):
        super().__init__(capacity, state_dim, action_dim)
        if alpha < 0 or beta < 0 or eps <= 0:
            raise DomainError("alpha, beta must be >= 0 and eps > 0")
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.eps = float(eps)
        self.tree = SumTree(capacity)

    def push(self, t: Transition) -> int:
        # new rows get the largest priority currently stored so they are seen at least once
        leaf = float(self.tree.leaves[:self.size].max()) if self.size else 1.0
        i = super().push(t)
        self.tree.set(i, leaf)
        return i

    def probabilities(self) -> np.ndarray:
        total = self.tree.total
        if not total > 0:
            raise EmptyPriorityError("priority mass is zero")
        return self.tree.leaves[:self.size] / total

    def set_priorities(self, indices, raw_priorities) -> None:
        """Store ``raw ** alpha`` at the given leaves (no eps floor)."""
        raw = np.asarray(raw_priorities, dtype=np.float64)
        if (raw < 0).any():
            raise DomainError("priorities must be non-negative")
        self.tree.set(indices, raw**self.alpha)


def per_sample(
    buffer: PrioritizedReplayBuffer,
    b: int,
    rng: np.random.Generator,
    beta: float | None = None,
) -> CandidateBatch:
    """Stratified proportional sampling with max-normalized importance weights."""
    buffer._check_fill(b)
    total = buffer.tree.total
    if not total > 0:
        raise EmptyPriorityError("priority mass is zero")
    beta = buffer.beta if beta is None else beta
    targets = (np.arange(b) + rng.random(b)) * (total / b)
    idx = np.minimum(buffer.tree.find(targets), buffer.size - 1)
    batch = buffer.gather(idx)
    probs = buffer.tree.leaves[idx] / total
    w = (buffer.size * probs) ** (-beta)
    batch.weights = w / w.max()
    return batch


def per_update_priorities(buffer: PrioritizedReplayBuffer, indices, td_abs) -> None:
    """Reprioritize sampled rows from their fresh absolute TD errors."""
    td = np.asarray(td_abs, dtype=np.float64)
    if (td < 0).any():
        raise DomainError("absolute TD errors must be non-negative")
    buffer.set_priorities(indices, td + buffer.eps)


def td_error(
    batch: CandidateBatch,
    critic: QFn,
    actor_target: PolicyFn,
    critic_target: QFn,
    gamma: float,
) -> np.ndarray:
    """|r + gamma * Q'(s', pi'(s')) * (1 - done) - Q(s, a)| per row."""
    q = np.reshape(critic(batch.states, batch.actions), -1)
    q_next = np.reshape(critic_target(batch.next_states, actor_target(batch.next_states)), -1)
    y = batch.rewards + gamma * (1.0 - batch.dones) * q_next
    return np.abs(y - q)


def expected_sampling_period(p_i: float, b: int) -> float:
    """Mean number of batches between two draws of a row with probability ``p_i``.

    Returns ``math.inf`` for ``p_i == 0``.
    """
    if b < 1:
        raise DomainError(f"batch size must be >= 1, got {b}")
    if not 0.0 <= p_i <= 1.0:
        raise DomainError(f"probability must lie in [0, 1], got {p_i}")
    if p_i == 0.0:
        return math.inf
    return 1.0 / (p_i * b)


def compute_action_deltas(batch: CandidateBatch, policy: PolicyFn) -> np.ndarray:
    """Current-policy actions minus stored actions, row by row."""
    predicted = np.asarray(policy(batch.states), dtype=np.float64)
    if predicted.shape != batch.actions.shape:
        raise ShapeError(f"policy output {predicted.shape} != stored actions {batch.actions.shape}")
    return predicted - batch.actions


def batch_kappa(batch: CandidateBatch, policy: PolicyFn, target: KlTarget, reg: float = COV_REG) -> float:
    deltas = compute_action_deltas(batch, policy)
    return kl_to_isotropic(fit_batch_policy(deltas, reg), target)


def argmin_first(scores) -> int:
    """Index of the smallest score; the lowest index wins ties."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("no scores")
    return int(np.argmin(scores))


def klper_select(
    buffer: ReplayBuffer,
    n_candidates: int,
    b: int,
    policy: PolicyFn,
    target: KlTarget,
    rng: np.random.Generator,
    reg: float = COV_REG,
) -> tuple[CandidateBatch, np.ndarray]:
    """Draw ``n_candidates`` uniform batches and return the one with the lowest KL score.

    Candidates are drawn one after another from ``rng`` exactly as
    :func:`sample_uniform` would, so ``n_candidates == 1`` reproduces uniform
    sampling draw for draw. All scores are returned alongside the winner.
    """
    if n_candidates < 1:
        raise DomainError(f"need at least one candidate, got {n_candidates}")
    buffer._check_fill(b)
    candidates = [sample_uniform(buffer, b, rng) for _ in range(n_candidates)]
    kappas = np.empty(n_candidates)
    for n, cand in enumerate(candidates):
        cand.kappa = batch_kappa(cand, policy, target, reg)
        kappas[n] = cand.kappa
    return candidates[argmin_first(kappas)], kappas

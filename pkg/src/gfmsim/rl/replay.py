"""Episode-segment replay buffer."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from gfmsim.errors import ContractViolation


@dataclass(frozen=True, eq=False)
class Transition:
    observation: np.ndarray
    action: np.ndarray
    reward: float
    next_observation: np.ndarray
    behavior_log_prob: float
    terminal: bool
    episode_id: int
    step_index: int


@dataclass
class Episode:
    """Contiguous transitions of one episode stored as arrays.

    ``observations`` has one more row than ``actions``; ``terminal`` marks a
    true end (no bootstrap) rather than truncation.
    """

    episode_id: int
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    terminal: bool

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_transitions(cls, transitions: list[Transition]) -> "Episode":
        if not transitions:
            raise ContractViolation("empty episode")
        eid = transitions[0].episode_id
        for i, t in enumerate(transitions):
            if t.episode_id != eid or t.step_index != transitions[0].step_index + i:
                raise ContractViolation("transitions are not contiguous in one episode")
            if i and not np.array_equal(transitions[i - 1].next_observation, t.observation):
                raise ContractViolation("observation chain broken between consecutive transitions")
        obs = np.stack([t.observation for t in transitions] + [transitions[-1].next_observation])
        return cls(
            eid,
            obs,
            np.stack([t.action for t in transitions]),
            np.array([t.reward for t in transitions], dtype=float),
            np.array([t.behavior_log_prob for t in transitions], dtype=float),
            bool(transitions[-1].terminal),
        )


@dataclass
class SegmentBatch:
    """``B`` segments of length ``L``; ``mask`` flags real (non-padded) steps."""

    observations: np.ndarray  # (B, L, obs)
    actions: np.ndarray  # (B, L, act)
    rewards: np.ndarray  # (B, L)
    next_observations: np.ndarray  # (B, L, obs)
    log_probs: np.ndarray  # (B, L)
    terminals: np.ndarray  # (B, L) 1 where the transition ends the episode for real
    mask: np.ndarray  # (B, L)


class ReplayBuffer:
    """Bounded FIFO store of whole episodes; never holds more than ``capacity`` transitions."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ContractViolation("capacity must be positive")
        self.capacity = int(capacity)
        self.episodes: deque[Episode] = deque()
        self.size = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self.size

    def add_episode(self, episode: Episode) -> None:
        if len(episode) > self.capacity:
            raise ContractViolation("episode longer than buffer capacity")
        self.episodes.append(episode)
        self.size += len(episode)
        self.inserted += len(episode)
        while self.size > self.capacity:
            old = self.episodes.popleft()
            self.size -= len(old)

    def sample_segments(self, batch_size: int, length: int, rng: np.random.Generator) -> SegmentBatch:
        if self.size == 0:
            raise ContractViolation("cannot sample from an empty buffer")
        eps = list(self.episodes)
        lengths = np.array([len(e) for e in eps], dtype=float)
        picks = rng.choice(len(eps), size=batch_size, p=lengths / lengths.sum())
        ep0 = eps[0]
        obs_dim = ep0.observations.shape[1]
        act_dim = ep0.actions.shape[1]
        O = np.zeros((batch_size, length, obs_dim))
        A = np.zeros((batch_size, length, act_dim))
        R = np.zeros((batch_size, length))
        N = np.zeros((batch_size, length, obs_dim))
        LP = np.zeros((batch_size, length))
        T = np.zeros((batch_size, length))
        Mk = np.zeros((batch_size, length))
        for b, k in enumerate(picks):
            e = eps[k]
            n = len(e)
            start = int(rng.integers(0, n))
            stop = min(start + length, n)
            m = stop - start
            O[b, :m] = e.observations[start:stop]
            N[b, :m] = e.observations[start + 1:stop + 1]
            A[b, :m] = e.actions[start:stop]
            R[b, :m] = e.rewards[start:stop]
            LP[b, :m] = e.log_probs[start:stop]
            Mk[b, :m] = 1.0
            if stop == n and e.terminal:
                T[b, m - 1] = 1.0
            if m < length:
                # padding repeats the last next-observation so networks see finite input
                O[b, m:] = N[b, m - 1]
                N[b, m:] = N[b, m - 1]
        return SegmentBatch(O, A, R, N, LP, T, Mk)

    def sample_observations(self, n: int, rng: np.random.Generator) -> np.ndarray:
        eps = list(self.episodes)
        lengths = np.array([len(e) for e in eps], dtype=float)
        picks = rng.choice(len(eps), size=n, p=lengths / lengths.sum())
        return np.stack([eps[k].observations[rng.integers(0, len(eps[k]))] for k in picks])

"""Recorded trajectories ``z_i = (x_0, a_0, x_1, ...)`` and datasets of them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gfmsim.dynamics.model import ManifoldSpec, SystemState
from gfmsim.errors import ContractViolation


@dataclass(eq=False)
class Trajectory:
    """Estimated states ``(T+1)``, actions ``(T)`` and clean diagnostic states.

    ``q``/``v`` hold what the estimator reported; ``diag_q``/``diag_v`` the
    true simulator state, kept for diagnostics only.
    """

    q: np.ndarray
    v: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    times: np.ndarray
    diag_q: np.ndarray
    diag_v: np.ndarray
    gains: np.ndarray | None = None

    def __post_init__(self):
        T = len(self.actions)
        if self.q.shape[0] != T + 1 or self.v.shape[0] != T + 1:
            raise ContractViolation("a trajectory needs one more state than actions")
        if self.diag_q.shape != self.q.shape or self.diag_v.shape != self.v.shape:
            raise ContractViolation("diagnostic states must match estimated states")
        if self.rewards.shape != (T,) or self.times.shape != (T + 1,):
            raise ContractViolation("rewards/times have the wrong length")
        if self.gains is None:
            self.gains = np.ones(T)

    def __len__(self) -> int:
        return len(self.actions)

    def state(self, t: int, diagnostic: bool = False) -> SystemState:
        q, v = (self.diag_q, self.diag_v) if diagnostic else (self.q, self.v)
        return SystemState(q[t].copy(), v[t].copy(), float(self.times[t]), None)

    def check(self, spec: ManifoldSpec) -> None:
        if self.q.shape[1] != spec.q_dim or self.v.shape[1] != spec.v_dim:
            raise ContractViolation(f"trajectory dims ({self.q.shape[1]}, {self.v.shape[1]}) do not match spec")
        if self.actions.shape[1] != spec.joint_dim:
            raise ContractViolation("action width does not match joint_dim")

    def equals(self, other: "Trajectory") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("q", "v", "actions", "rewards", "times", "diag_q", "diag_v", "gains")
        )


@dataclass(eq=False)
class TrajectoryDataset:
    scenario: str
    spec: ManifoldSpec
    control_rate: float
    seed: int
    trajectories: list[Trajectory] = field(default_factory=list)
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def subset(self, idx) -> "TrajectoryDataset":
        return TrajectoryDataset(self.scenario, self.spec, self.control_rate, self.seed,
                                 [self.trajectories[i] for i in idx])

    def equals(self, other: "TrajectoryDataset") -> bool:
        return (
            self.scenario == other.scenario
            and self.spec == other.spec
            and self.control_rate == other.control_rate
            and self.seed == other.seed
            and len(self) == len(other)
            and all(a.equals(b) for a, b in zip(self, other))
        )

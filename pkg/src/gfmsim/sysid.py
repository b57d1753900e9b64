"""Parametric system identification baseline and rollout-error metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from gfmsim.data import Trajectory
from gfmsim.distance import DistanceWeights, state_distance
from gfmsim.dynamics.model import SystemModel, SystemState
from gfmsim.dynamics.scenarios import ScenarioPair
from gfmsim.errors import ConfigurationError, ContractViolation, NumericalError
from gfmsim.hybrid import HybridModel, HybridRollout

log = logging.getLogger(__name__)

DEFAULT_FREE = {"actuator_gain": (0.5, 12.0), "actuator_damping": (0.0, 2.0)}


def _scalar_value(model: SystemModel, name: str) -> float:
    val = getattr(model, name)
    return float(val[0]) if isinstance(val, tuple) else float(val)


def _set_params(model: SystemModel, names, values) -> SystemModel:
    changes = {}
    for name, x in zip(names, values):
        cur = getattr(model, name)
        changes[name] = tuple(float(x) for _ in cur) if isinstance(cur, tuple) else float(x)
    return model.replace(**changes)


@dataclass
class SysIdProblem:
    """Bounded least-squares fit of a few scalar model parameters.

    Tuple-valued parameters (e.g. ``joint_viscous``) are fitted as a single
    value shared by every joint.
    """

    template: SystemModel
    pair: ScenarioPair
    trajectories: list[Trajectory]
    free: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_FREE))
    weights: DistanceWeights = field(default_factory=DistanceWeights)
    starts: int = 8
    max_iterations: int = 25
    seed: int = 0

    def __post_init__(self):
        for name, (lo, hi) in self.free.items():
            if not hasattr(self.template, name) or name == "spec":
                raise ConfigurationError(f"unknown model parameter {name!r}")
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigurationError(f"bounds for {name!r} must be finite with lower < upper")

    @property
    def names(self) -> list[str]:
        return list(self.free)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([b[0] for b in self.free.values()], dtype=float)
        hi = np.array([b[1] for b in self.free.values()], dtype=float)
        return lo, hi

    def model_at(self, theta) -> SystemModel:
        return _set_params(self.template, self.names, theta)

    def residuals(self, theta) -> np.ndarray:
        """Stacked weighted one-step residuals over every recorded transition."""
        model = self.model_at(theta)
        spec = model.spec
        out = []
        for tr in self.trajectories:
            for t in range(len(tr)):
                nxt = self.pair.tick(model, tr.state(t), tr.actions[t], None, float(tr.gains[t]))
                out.append(state_distance(tr.state(t + 1), nxt, self.weights, spec))
        return np.concatenate(out)

    def loss(self, theta) -> float:
        r = self.residuals(theta)
        return float(r @ r) / max(self._n_transitions, 1)

    @property
    def _n_transitions(self) -> int:
        return sum(len(tr) for tr in self.trajectories)


@dataclass
class SysIdResult:
    model: SystemModel
    parameters: dict[str, float]
    loss: float
    template_loss: float
    starts_diverged: int = 0
    diagnostic: str = ""


def _gauss_newton(problem: SysIdProblem, theta0: np.ndarray) -> tuple[np.ndarray, float]:
    """Levenberg-damped Gauss-Newton projected onto the box."""
    lo, hi = problem.bounds
    span = hi - lo
    theta = np.clip(theta0, lo, hi)
    r = problem.residuals(theta)
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(problem.max_iterations):
        J = np.empty((r.size, theta.size))
        for j in range(theta.size):
            h = 1e-6 * span[j]
            tp = theta.copy()
            # one-sided near the upper bound so the model stays inside the box
            if tp[j] + h > hi[j]:
                h = -h
            tp[j] += h
            J[:, j] = (problem.residuals(tp) - r) / h
        g = J.T @ r
        A = J.T @ J
        improved = False
        for _ in range(8):
            try:
                delta = -np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-12), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = np.clip(theta + delta, lo, hi)
            rc = problem.residuals(cand)
            cc = float(rc @ rc)
            if cc < cost:
                improved = True
                step = np.max(np.abs(cand - theta) / span)
                theta, r, cost = cand, rc, cc
                lam = max(lam / 3, 1e-9)
                break
            lam *= 10
        if not improved or step < 1e-7:
            break
    return theta, cost


def identify(problem: SysIdProblem) -> SysIdResult:
    """Multi-start bounded Gauss-Newton on the teacher-forced one-step loss."""
    if not problem.trajectories:
        raise ContractViolation("system identification needs at least one trajectory")
    for tr in problem.trajectories:
        tr.check(problem.template.spec)
    names = problem.names
    lo, hi = problem.bounds
    n_tr = max(problem._n_transitions, 1)
    theta_t = np.array([_scalar_value(problem.template, n) for n in names])
    template_loss = problem.loss(theta_t)
    sobol = qmc.Sobol(d=len(names), scramble=True, seed=problem.seed)
    starts = qmc.scale(sobol.random(problem.starts), lo, hi)
    best_theta, best_cost, diverged = theta_t, template_loss * n_tr, 0
    for s in starts:
        try:
            theta, cost = _gauss_newton(problem, s)
        except NumericalError as exc:
            diverged += 1
            log.warning("sysid start %s diverged: %s", np.round(s, 4).tolist(), exc)
            continue
        if cost < best_cost:
            best_theta, best_cost = theta, cost
    diag = ""
    if diverged == len(starts):
        diag = "all starts diverged; returning template parameters"
        log.warning(diag)
    params = {n: float(x) for n, x in zip(names, best_theta)}
    return SysIdResult(problem.model_at(best_theta), params, best_cost / n_tr, template_loss, diverged, diag)


@dataclass
class RolloutError:
    errors: np.ndarray  # per-step weighted error norm, length T
    states: list[SystemState]

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors)) if self.errors.size else 0.0


def rollout_error(pair: ScenarioPair, model: SystemModel | HybridModel, trajectory: Trajectory,
                  weights: DistanceWeights, teacher_forced: bool = False, gfm_index: int | None = 0,
                  diagnostic: bool = False) -> RolloutError:
    """Replay recorded actions from ``x_0`` and score every predicted state.

    ``teacher_forced`` resets the model to the recorded state each tick.
    Hybrid models use the ensemble member ``gfm_index``.
    """
    hybrid = model if isinstance(model, HybridModel) else HybridModel(model, [])
    spec = hybrid.spec
    trajectory.check(spec)
    T = len(trajectory)
    errors = np.empty(T)
    states = []
    idx = gfm_index if hybrid.gfms else None
    sim = HybridRollout(pair, hybrid, idx, trajectory.state(0, diagnostic))
    for t in range(T):
        if teacher_forced and t > 0:
            sim = HybridRollout(pair, hybrid, idx, trajectory.state(t, diagnostic))
            # keep the recorded history so the GFM sees what it saw in training
            sim.history.clear()
            for k in range(max(0, t - sim.history.maxlen), t):
                sim.history.append(trajectory.state(k, diagnostic))
        nxt = sim.step(trajectory.actions[t], float(trajectory.gains[t]))
        states.append(nxt)
        errors[t] = float(np.linalg.norm(state_distance(trajectory.state(t + 1, diagnostic), nxt, weights, spec)))
    return RolloutError(errors, states)

"""Shared model builders for the test suite."""
import sys

import numpy as np
import pytest

from gfmsim.dynamics.model import PLANAR, SPATIAL, ManifoldSpec, SystemModel, SystemState


def arm_model(n=2, masses=None, lengths=None, inertias=None, gravity=(0.0, 0.0), **kw) -> SystemModel:
    masses = masses or (1.0,) * n
    lengths = lengths or (1.0,) * n
    inertias = inertias or tuple(m * l ** 2 / 12 for m, l in zip(masses, lengths))
    base = dict(
        spec=ManifoldSpec(n), link_masses=masses, link_lengths=lengths, link_inertias=inertias,
        joint_viscous=(0.0,) * n, joint_dry=(0.0,) * n, torque_limits=(1e6,) * n, velocity_limits=(1e6,) * n,
        arm_gravity=gravity,
    )
    base.update(kw)
    return SystemModel(**base)


def body_model(kind=PLANAR, mass=1.0, inertia=(1.0, 1.0, 1.0), half=(0.05, 0.05, 0.05), **kw) -> SystemModel:
    base = dict(spec=ManifoldSpec(0, (kind,)), body_masses=(mass,), body_inertias=(inertia,),
                body_half_extents=(half,))
    base.update(kw)
    return SystemModel(**base)


def state(q, v, act=None) -> SystemState:
    q = np.asarray(q, dtype=float)
    return SystemState(q, np.asarray(v, dtype=float), 0.0, act)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for text in sorted(mod.LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(text)


__all__ = ["arm_model", "body_model", "state", "PLANAR", "SPATIAL"]

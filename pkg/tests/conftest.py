"""
Shared fixtures. Puts src/ and the repository root on sys.path.
"""

import os
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "src"))
sys.path.insert(0, ROOT)

import numpy as np
import pytest

from benchmarks.car2d import Car2dParams, car2d_system
from benchmarks.pendulum import ElasticPendulumParams, elastic_pendulum_system
from controller.qp import QpStatus
from dynamics.sde import StepDiagnostics, StochasticAffineSystem

CONFIG_DIR = os.path.join(ROOT, "configs")
MULTI_OBSTACLES = ((1.0, 1.0, 0.4), (1.0, 4.0, 0.4), (3.0, 2.5, 0.6))


def identity_system(sigma: float = 0.0, drift=None, n: int = 2) -> StochasticAffineSystem:
    """n-dimensional system with G = I and drift ``drift`` (zero by default)."""
    def zero(x):
        return [0.0] * n

    def eye(x):
        return [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]

    return StochasticAffineSystem(
        name="identity", n_x=n, n_u=n, drift=drift or zero, actuation=eye, noise_scale=sigma,
        state_labels=tuple(f"x{i}" for i in range(n)), control_labels=tuple(f"u{i}" for i in range(n)),
    )


def constant_controller(u):
    """Controller holding ``u`` with empty diagnostics."""
    u = np.asarray(u, dtype=float)

    def controller(x, t):
        return u, StepDiagnostics(QpStatus.OPTIMAL, 0.0, np.zeros(0), np.zeros(0))

    return controller


@pytest.fixture
def car_params():
    return Car2dParams()


@pytest.fixture
def multi_params():
    return Car2dParams(obstacles=MULTI_OBSTACLES)


@pytest.fixture
def car(car_params):
    return car2d_system(car_params)


@pytest.fixture
def pendulum_params():
    return ElasticPendulumParams()


@pytest.fixture
def pendulum(pendulum_params):
    return elastic_pendulum_system(pendulum_params)


@pytest.fixture
def config_path():
    def path(name):
        return os.path.join(CONFIG_DIR, name)
    return path

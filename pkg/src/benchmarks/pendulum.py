"""
Two-link pendulum driven through elastic actuators.
Linear spring-damper network between motors and joints, no gravity;
relative degree 4 from motor torque to joint angle.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from autodiff.jets import ScalarField
from dynamics.sde import StochasticAffineSystem

STATE_LABELS = ("theta1", "theta2", "theta1_m", "theta2_m",
                "dtheta1", "dtheta2", "dtheta1_m", "dtheta2_m")
CONTROL_LABELS = ("tau1", "tau2")


@dataclass(frozen=True)
class ElasticPendulumParams:
    """
    Inertias J1, J2, Jm, stiffness k and joint damping xi are not published
    for this experiment; the defaults give a well-conditioned spring mode.
    """
    J1: float = 1.0
    J2: float = 0.5
    Jm: float = 0.1
    k: float = 50.0
    xi: float = 0.1
    theta1_limit: float = math.pi
    goal: Tuple[float, float] = (math.pi / 2, 0.0)
    q_diag: Tuple[float, float] = (1.0, 1.0)
    p: float = 1000.0
    u_lower: Tuple[float, float] = (-10.0, -10.0)
    u_upper: Tuple[float, float] = (10.0, 10.0)
    sigma: float = 0.05
    horizon: float = 60.0
    initial_state: Tuple[float, ...] = (-math.pi / 2, 0.0, -math.pi / 2, 0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.J1 > self.J2 > 0:
            raise ValueError(f"link inertias must satisfy J1 > J2 > 0, got J1={self.J1}, J2={self.J2}")
        if not self.Jm > 0:
            raise ValueError(f"motor inertia must be positive, got {self.Jm}")
        if not self.k > 0:
            raise ValueError(f"spring stiffness must be positive, got {self.k}")
        if self.xi < 0:
            raise ValueError(f"joint damping must be nonnegative, got {self.xi}")
        if not self.theta1_limit > 0:
            raise ValueError(f"theta1 limit must be positive, got {self.theta1_limit}")


def elastic_pendulum_system(params: ElasticPendulumParams) -> StochasticAffineSystem:
    """
    Joint dynamics   J_i th_i''  = -k (th_i - th_i^m) - xi th_i'
    Motor dynamics   Jm th_i^m'' =  k (th_i - th_i^m) + tau_i
    """
    k, xi = float(params.k), float(params.xi)
    inv_J1, inv_J2, inv_Jm = 1.0 / params.J1, 1.0 / params.J2, 1.0 / params.Jm

    def drift(x: Sequence) -> list:
        th1, th2, m1, m2, w1, w2, wm1, wm2 = x
        stretch1 = th1 - m1
        stretch2 = th2 - m2
        return [
            w1, w2, wm1, wm2,
            (stretch1 * -k - w1 * xi) * inv_J1,
            (stretch2 * -k - w2 * xi) * inv_J2,
            stretch1 * (k * inv_Jm),
            stretch2 * (k * inv_Jm),
        ]

    def actuation(x: Sequence) -> list:
        rows = [[0.0, 0.0] for _ in range(6)]
        rows.append([inv_Jm, 0.0])
        rows.append([0.0, inv_Jm])
        return rows

    def sample(rng: np.random.Generator) -> np.ndarray:
        angles = rng.uniform(-2.5, 2.5, size=4)
        rates = rng.uniform(-1.0, 1.0, size=4)
        return np.concatenate([angles, rates])

    return StochasticAffineSystem(
        name="elastic-pendulum",
        n_x=8,
        n_u=2,
        drift=drift,
        actuation=actuation,
        noise_scale=float(params.sigma),
        state_labels=STATE_LABELS,
        control_labels=CONTROL_LABELS,
        sampler=sample,
    )


def pendulum_barrier(params: ElasticPendulumParams) -> ScalarField:
    """h(x) = limit^2 - theta1^2."""
    limit2 = float(params.theta1_limit) ** 2

    def h(x):
        return limit2 - x[0] * x[0]

    return ScalarField(8, h, "theta1")


def pendulum_lyapunov(params: ElasticPendulumParams) -> ScalarField:
    """V0(x) = 1/2 ((theta1 - goal1)^2 + (theta2 - goal2)^2)."""
    g1, g2 = float(params.goal[0]), float(params.goal[1])

    def V0(x):
        e1 = x[0] - g1
        e2 = x[1] - g2
        return (e1 * e1 + e2 * e2) * 0.5

    return ScalarField(8, V0, "goal")


def joint_angle_violation(params: ElasticPendulumParams, states: np.ndarray) -> bool:
    """True when |theta1| exceeds the limit anywhere along ``states``."""
    return bool(np.any(np.abs(np.atleast_2d(states)[:, 0]) > params.theta1_limit))

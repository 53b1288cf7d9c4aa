"""
2D car navigation benchmark.
Simplified car dynamics with circular obstacles and a quadratic goal
Lyapunov function; relative degree 2 for both.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from autodiff import jets
from autodiff.jets import ScalarField
from dynamics.sde import StochasticAffineSystem

Obstacle = Tuple[float, float, float]


@dataclass(frozen=True)
class Car2dParams:
    """
    Car navigation setup.

    ``sigma`` defaults to 0.05 and the bounds to +-10; neither value is
    given for this experiment in the literature setup and both are config
    defaults.
    """
    goal: Tuple[float, float] = (4.0, 4.0)
    obstacles: Tuple[Obstacle, ...] = ((3.0, 2.5, 0.6),)
    q_diag: Tuple[float, float] = (1000.0, 10.0)
    p: float = 1000.0
    u_lower: Tuple[float, float] = (-10.0, -10.0)
    u_upper: Tuple[float, float] = (10.0, 10.0)
    sigma: float = 0.05
    horizon: float = 8.0
    initial_state: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        for i, (cx, cy, r) in enumerate(self.obstacles):
            if not r > 0:
                raise ValueError(f"obstacle {i} radius must be positive, got {r}")
        for i in range(len(self.obstacles)):
            for j in range(i + 1, len(self.obstacles)):
                (xi, yi, ri), (xj, yj, rj) = self.obstacles[i], self.obstacles[j]
                if math.hypot(xi - xj, yi - yj) <= ri + rj:
                    raise ValueError(f"obstacles {i} and {j} overlap")
        x0, y0 = self.initial_state[0], self.initial_state[1]
        for i, (cx, cy, r) in enumerate(self.obstacles):
            if math.hypot(x0 - cx, y0 - cy) <= r:
                raise ValueError(f"initial position ({x0}, {y0}) lies inside obstacle {i}")


STATE_LABELS = ("x", "y", "theta", "v")
CONTROL_LABELS = ("u_theta", "u_v")


def _drift(x: Sequence) -> list:
    theta, v = x[2], x[3]
    return [v * jets.sin(theta), v * jets.cos(theta), 0.0, 0.0]


def _actuation(x: Sequence) -> list:
    v = x[3]
    return [[0.0, 0.0], [0.0, 0.0], [v, 0.0], [0.0, 1.0]]


def _sample_state(rng: np.random.Generator) -> np.ndarray:
    return np.array([
        rng.uniform(-1.0, 5.0),
        rng.uniform(-1.0, 5.0),
        rng.uniform(-math.pi, math.pi),
        rng.uniform(0.2, 2.0),
    ])


def car2d_system(params: Car2dParams) -> StochasticAffineSystem:
    """x' = v sin(theta), y' = v cos(theta), theta' = v u_theta, v' = u_v."""
    return StochasticAffineSystem(
        name="car2d",
        n_x=4,
        n_u=2,
        drift=_drift,
        actuation=_actuation,
        noise_scale=float(params.sigma),
        state_labels=STATE_LABELS,
        control_labels=CONTROL_LABELS,
        sampler=_sample_state,
    )


def obstacle_field(cx: float, cy: float, r: float, name: str = "h") -> ScalarField:
    """h(x) = (x - cx)^2 + (y - cy)^2 - r^2."""
    cx, cy, r2 = float(cx), float(cy), float(r) * float(r)

    def h(x):
        dx = x[0] - cx
        dy = x[1] - cy
        return dx * dx + dy * dy - r2

    return ScalarField(4, h, name)


def car2d_barriers(params: Car2dParams) -> List[ScalarField]:
    return [obstacle_field(cx, cy, r, f"obs{i + 1}") for i, (cx, cy, r) in enumerate(params.obstacles)]


def car2d_lyapunov(params: Car2dParams) -> ScalarField:
    """V0(x) = 1/2 ((x - x_d)^2 + (y - y_d)^2)."""
    gx, gy = float(params.goal[0]), float(params.goal[1])

    def V0(x):
        dx = x[0] - gx
        dy = x[1] - gy
        return (dx * dx + dy * dy) * 0.5

    return ScalarField(4, V0, "goal")

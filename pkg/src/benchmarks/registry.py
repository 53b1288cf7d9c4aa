"""
Benchmark registry.
Turns a resolved EnsembleConfig into a system, its chains and the policy.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from autodiff.jets import ScalarField
from barriers.chain import Chain, ConvergenceRate, build_barrier_chain, build_lyapunov_chain
from benchmarks.car2d import Car2dParams, car2d_barriers, car2d_lyapunov, car2d_system
from benchmarks.pendulum import (ElasticPendulumParams, elastic_pendulum_system,
                                 pendulum_barrier, pendulum_lyapunov)
from controller.policy import ControlPolicy
from controller.qp import ControlBounds, QpWeights
from dynamics.sde import StochasticAffineSystem
from experiments.config import EnsembleConfig


@dataclass(frozen=True)
class Benchmark:
    """Everything needed to roll out one benchmark trajectory."""
    id: str
    system: StochasticAffineSystem
    barrier_fields: Tuple[ScalarField, ...]
    barrier_chains: Tuple[Chain, ...]
    lyapunov_field: ScalarField
    lyapunov_chain: Chain
    policy: ControlPolicy
    x0: np.ndarray
    goal: Tuple[float, float]
    goal_indices: Tuple[int, int]

    def goal_distance(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        i, j = self.goal_indices
        return np.hypot(states[:, i] - self.goal[0], states[:, j] - self.goal[1])

    def barrier_values(self, states: np.ndarray) -> np.ndarray:
        """h_i at every state: shape (len(states), number of barriers)."""
        states = np.atleast_2d(states)
        out = np.empty((len(states), len(self.barrier_fields)))
        for k, x in enumerate(states):
            point = [float(v) for v in x]
            for i, h in enumerate(self.barrier_fields):
                out[k, i] = float(h(point))
        return out


def _car_params(config: EnsembleConfig) -> Car2dParams:
    s, q = config.system, config.qp
    return Car2dParams(
        goal=tuple(s.goal), obstacles=tuple(s.obstacles), q_diag=tuple(q.q_diag), p=q.p,
        u_lower=tuple(q.u_lower), u_upper=tuple(q.u_upper), sigma=s.sigma,
        horizon=config.simulation.horizon, initial_state=tuple(s.initial_state),
    )


def _pendulum_params(config: EnsembleConfig) -> ElasticPendulumParams:
    s, q = config.system, config.qp
    return ElasticPendulumParams(
        J1=s.J1, J2=s.J2, Jm=s.Jm, k=s.k, xi=s.xi, theta1_limit=s.theta1_limit,
        goal=tuple(s.goal), q_diag=tuple(q.q_diag), p=q.p,
        u_lower=tuple(q.u_lower), u_upper=tuple(q.u_upper), sigma=s.sigma,
        horizon=config.simulation.horizon, initial_state=tuple(s.initial_state),
    )


def _fields(config: EnsembleConfig) -> Tuple[StochasticAffineSystem, Tuple[ScalarField, ...], ScalarField]:
    if config.benchmark.startswith("car2d"):
        params = _car_params(config)
        return car2d_system(params), tuple(car2d_barriers(params)), car2d_lyapunov(params)
    params = _pendulum_params(config)
    return elastic_pendulum_system(params), (pendulum_barrier(params),), pendulum_lyapunov(params)


def build_benchmark(config: EnsembleConfig) -> Benchmark:
    """
    Build the system, chains and policy for a configuration.

    Raises:
        ValueError: on inconsistent physical parameters
        RelativeDegreeMismatch: if a configured degree does not fit the system
    """
    try:
        system, barrier_fields, lyapunov_field = _fields(config)
        b, l = config.barrier, config.lyapunov
        barrier_chains = tuple(
            build_barrier_chain(h, system, b.relative_degree, b.gains, b.class_k)
            for h in barrier_fields
        )
        decay = ConvergenceRate(l.decay_rate, l.decay_saturation or math.inf)
        lyapunov_chain = build_lyapunov_chain(lyapunov_field, system, l.relative_degree, l.gains, l.class_k,
                                              decay=decay)
    except Exception as e:
        logging.error(f"Failed to build benchmark {config.benchmark}: {e}")
        raise

    q = config.qp
    policy = ControlPolicy(
        lyapunov=lyapunov_chain,
        barriers=barrier_chains,
        weights=QpWeights(np.diag(q.q_diag), q.p),
        bounds=ControlBounds(np.array(q.u_lower), np.array(q.u_upper)),
        enforce_barriers=config.controller.enforce_barriers,
        base_relaxation=l.base_relaxation,
        relaxation_margin=l.relaxation_margin,
        max_doublings=l.max_doublings,
        max_iter=q.max_iter,
        relaxation_decay=l.relaxation_decay,
    )
    return Benchmark(
        id=config.benchmark,
        system=system,
        barrier_fields=barrier_fields,
        barrier_chains=barrier_chains,
        lyapunov_field=lyapunov_field,
        lyapunov_chain=lyapunov_chain,
        policy=policy,
        x0=np.array(config.system.initial_state, dtype=float),
        goal=tuple(config.system.goal),
        goal_indices=(0, 1),
    )

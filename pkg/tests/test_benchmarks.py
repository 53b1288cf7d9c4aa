"""
Car and elastic pendulum models, their fields and the benchmark registry.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from barriers.chain import build_barrier_chain, build_lyapunov_chain, u_coefficient
from benchmarks.car2d import Car2dParams, car2d_barriers, car2d_lyapunov, car2d_system, obstacle_field
from benchmarks.pendulum import (ElasticPendulumParams, joint_angle_violation, pendulum_barrier,
                                 pendulum_lyapunov)
from benchmarks.registry import build_benchmark
from diagnostics.self_check import check_derivatives
from dynamics.sde import em_step
from experiments.config import load_config


def test_car_drift_moving_north(car):
    np.testing.assert_array_equal(car.drift_array(np.array([0.0, 0.0, 0.0, 1.0])), [0.0, 1.0, 0.0, 0.0])


def test_car_cannot_steer_at_rest(car):
    G = car.actuation_array(np.zeros(4))
    assert np.all(G[:, 0] == 0.0)
    assert G[3, 1] == 1.0


def test_car_pure_acceleration(car_params):
    car = car2d_system(replace(car_params, sigma=0.0))
    x = em_step(car, np.zeros(4), np.array([0.0, 1.0]), 0.01, np.zeros(2))
    np.testing.assert_array_equal(x, [0.0, 0.0, 0.0, 0.01])


def test_car_fields(car_params):
    h = car2d_barriers(car_params)[0]
    V0 = car2d_lyapunov(car_params)
    assert h([3.0, 2.5, 0.0, 0.0]) == pytest.approx(-0.36)
    assert h([3.6, 2.5, 1.0, 2.0]) == pytest.approx(0.0, abs=1e-12)
    assert V0([4.0, 4.0, 0.3, 1.0]) == 0.0
    assert V0([0.0, 0.0, 0.0, 0.0]) == 16.0


def test_obstacle_names(multi_params):
    assert [h.name for h in car2d_barriers(multi_params)] == ["obs1", "obs2", "obs3"]
    assert obstacle_field(0.0, 0.0, 1.0, "wall").name == "wall"


@pytest.mark.parametrize("kwargs", [
    {"obstacles": ((0.0, 0.0, -1.0),)},
    {"obstacles": ((1.0, 1.0, 0.5), (1.5, 1.0, 0.5))},
    {"obstacles": ((0.2, 0.0, 0.5),)},
])
def test_car_params_validated(kwargs):
    with pytest.raises(ValueError):
        Car2dParams(**kwargs)


def test_pendulum_equilibrium(pendulum):
    x = np.array([0.4, 0.4, 0.4, 0.4, 0.0, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(pendulum.drift_array(x), np.zeros(8))


def test_pendulum_spring_stretch(pendulum_params, pendulum):
    f = pendulum.drift_array(np.array([0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
    assert f[4] == pytest.approx(-pendulum_params.k * 0.1 / pendulum_params.J1)
    assert f[6] == pytest.approx(pendulum_params.k * 0.1 / pendulum_params.Jm)
    assert f[5] == 0.0 and f[7] == 0.0


def test_pendulum_actuation_rows(pendulum):
    G = pendulum.actuation_array(np.zeros(8))
    nonzero = [i for i in range(8) if np.any(G[i] != 0.0)]
    assert nonzero == [6, 7]
    np.testing.assert_allclose(G[6:], np.eye(2) * 10.0)


def test_pendulum_fields(pendulum_params):
    h = pendulum_barrier(pendulum_params)
    V0 = pendulum_lyapunov(pendulum_params)
    edge = [math.pi, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    assert h(edge) == pytest.approx(0.0, abs=1e-12)
    assert h([-math.pi] + edge[1:]) == pytest.approx(0.0, abs=1e-12)
    assert h(list(pendulum_params.initial_state)) == pytest.approx(3 * math.pi ** 2 / 4)
    assert V0([math.pi / 2, 0.0, 1.0, -1.0, 0.5, 0.5, 0.5, 0.5]) == 0.0


def test_joint_angle_violation(pendulum_params):
    states = np.zeros((3, 8))
    assert not joint_angle_violation(pendulum_params, states)
    states[1, 0] = -3.2
    assert joint_angle_violation(pendulum_params, states)


@pytest.mark.parametrize("kwargs", [{"J1": 0.5, "J2": 0.5}, {"Jm": 0.0}, {"k": -1.0}, {"xi": -0.1}])
def test_pendulum_params_validated(kwargs):
    with pytest.raises(ValueError):
        ElasticPendulumParams(**kwargs)


def test_car_fields_and_chain_levels_match_finite_differences():
    result = check_derivatives(n_states=100, pendulum_chains=False)
    assert result.passed, result.detail


@pytest.mark.slow
def test_every_chain_level_matches_finite_differences():
    result = check_derivatives(n_states=100)
    assert result.passed, result.detail
    assert "over 30 fields" in result.detail


def test_registry_builds_multi_obstacle_benchmark(config_path):
    benchmark = build_benchmark(load_config(config_path("car2d-multi.yaml")))
    assert benchmark.id == "car2d-multi"
    assert [chain.name for chain in benchmark.barrier_chains] == ["obs1", "obs2", "obs3"]
    assert all(chain.degree == 2 for chain in benchmark.barrier_chains)
    assert benchmark.lyapunov_chain.degree == 2
    assert benchmark.x0.tolist() == [0.0, 0.0, 0.0, 0.0]
    assert benchmark.goal_distance(benchmark.x0)[0] == pytest.approx(math.sqrt(32.0))
    np.testing.assert_allclose(benchmark.barrier_values(benchmark.x0), [[1.84, 16.84, 14.89]])
    assert benchmark.policy.enforce_barriers


def test_registry_rejects_inconsistent_obstacles(config_path):
    config = load_config(config_path("car2d-single.yaml"),
                         {"system.initial_state": [3.0, 2.5, 0.0, 0.0]})
    with pytest.raises(ValueError):
        build_benchmark(config)


@pytest.mark.slow
def test_pendulum_degree_four_structure(pendulum_params, pendulum):
    chain = build_barrier_chain(pendulum_barrier(pendulum_params), pendulum, 4, (1.0,) * 4, (1.0,) * 4)
    build_lyapunov_chain(pendulum_lyapunov(pendulum_params), pendulum, 4, (1.0,) * 3, (1.0,) * 3)
    rng = np.random.default_rng(4)
    for _ in range(20):
        x = pendulum.sampler(rng)
        for level in chain.levels[:3]:
            assert np.all(u_coefficient(level.reciprocal_field(), x, pendulum) == 0.0)
        assert np.max(np.abs(u_coefficient(chain.levels[3].reciprocal_field(), x, pendulum))) > 0

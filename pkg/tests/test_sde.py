"""
Euler-Maruyama integration, Brownian increments and closed-loop rollouts.
"""

from dataclasses import replace

import numpy as np
import pytest

from benchmarks.car2d import car2d_system
from conftest import constant_controller, identity_system
from controller.qp import QpStatus
from dynamics.sde import (NonFiniteState, StepDiagnostics, StochasticAffineSystem, brownian_increments,
                          em_step, make_generator, sample_count, simulate)


def test_brownian_moments():
    dW = brownian_increments(make_generator(1), 10 ** 6, 0.01)
    assert abs(np.mean(dW)) < 5e-4
    assert np.var(dW) == pytest.approx(0.01, rel=0.01)


def test_brownian_deterministic_per_seed():
    a = brownian_increments(make_generator(42), 2, 0.01)
    b = brownian_increments(make_generator(42), 2, 0.01)
    c = brownian_increments(make_generator(43), 2, 0.01)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_brownian_advances_generator():
    rng = make_generator(7)
    assert not np.array_equal(brownian_increments(rng, 2, 0.01), brownian_increments(rng, 2, 0.01))


def test_em_step_pure_drift():
    x = em_step(identity_system(0.0), np.zeros(2), np.array([1.0, 0.0]), 0.1, np.zeros(2))
    np.testing.assert_allclose(x, [0.1, 0.0])


def test_em_step_pure_diffusion():
    x = em_step(identity_system(1.0), np.array([1.0, 1.0]), np.zeros(2), 0.3, np.array([0.2, -0.1]))
    np.testing.assert_allclose(x, [1.2, 0.9], atol=1e-15)


def test_em_step_car(car_params):
    car = car2d_system(replace(car_params, sigma=0.0))
    x = em_step(car, np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(2), 0.01, np.zeros(2))
    np.testing.assert_allclose(x, [0.0, 0.01, 0.0, 1.0], atol=1e-15)


def test_em_step_non_finite():
    system = identity_system(0.0, drift=lambda x: [x[0] * 1e300, 0.0])
    with pytest.raises(NonFiniteState):
        em_step(system, np.array([1e300, 0.0]), np.zeros(2), 1.0, np.zeros(2))


def test_sample_count():
    assert sample_count(0.005, 8.0) == 1601
    assert sample_count(0.0001, 1.0) == 10001
    assert sample_count(0.1, 0.25) == 3


def test_zero_controller_fixed_point():
    record = simulate(identity_system(0.0), constant_controller([0.0, 0.0]), [0.5, -0.5], 0.01, 0.5, 0)
    assert len(record) == 51
    assert np.all(record.states == np.array([0.5, -0.5]))
    assert not record.truncated


def test_record_shapes_and_times():
    record = simulate(identity_system(0.2), constant_controller([1.0, 0.0]), [0.0, 0.0], 0.005, 8.0, 3)
    n = 1601
    assert record.states.shape == (n, 2)
    assert record.controls.shape == (n, 2)
    assert record.relaxations.shape == (n,)
    assert record.psi_values.shape == (n, 0)
    assert len(record.qp_status) == n
    assert record.offsets.shape == (n,)
    assert record.relaxed_steps == 0
    assert np.all(np.diff(record.times) > 0)
    np.testing.assert_allclose(np.diff(record.times), 0.005, rtol=1e-9)


def test_simulate_deterministic():
    system = identity_system(0.5)
    a = simulate(system, constant_controller([0.3, -0.1]), [0.0, 0.0], 0.01, 1.0, 11)
    b = simulate(system, constant_controller([0.3, -0.1]), [0.0, 0.0], 0.01, 1.0, 11)
    c = simulate(system, constant_controller([0.3, -0.1]), [0.0, 0.0], 0.01, 1.0, 12)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_truncated_record_kept():
    system = identity_system(0.0, drift=lambda x: [x[0] * 1e300, 0.0])
    with pytest.raises(NonFiniteState) as info:
        simulate(system, constant_controller([0.0, 0.0]), [10.0, 0.0], 0.5, 5.0, 0)
    record = info.value.record
    assert record is not None and record.truncated
    assert 1 <= len(record) < sample_count(0.5, 5.0)
    assert np.all(np.isfinite(record.states))


def test_euler_first_order_convergence(car_params):
    car = car2d_system(replace(car_params, sigma=0.0))
    controller = constant_controller([0.5, 0.2])
    x0 = [0.0, 0.0, 0.0, 1.0]
    reference = simulate(car, controller, x0, 0.0001, 1.0, 0).states[-1]
    coarse = simulate(car, controller, x0, 0.01, 1.0, 0).states[-1]
    fine = simulate(car, controller, x0, 0.005, 1.0, 0).states[-1]
    ratio = np.linalg.norm(coarse - reference) / np.linalg.norm(fine - reference)
    assert 1.5 <= ratio <= 2.5


def test_diffusion_variance_linear_in_horizon():
    system = StochasticAffineSystem(
        name="scalar", n_x=1, n_u=1, drift=lambda x: [0.0], actuation=lambda x: [[1.0]],
        noise_scale=1.0, state_labels=("x",), control_labels=("u",),
    )
    controller = constant_controller([0.0])
    variances = []
    for horizon in (1.0, 2.0):
        finals = [simulate(system, controller, [0.0], 0.1, horizon, seed).states[-1, 0] for seed in range(4000)]
        variances.append(np.var(finals))
    assert variances[0] == pytest.approx(1.0, rel=0.1)
    assert variances[1] == pytest.approx(2.0, rel=0.1)


def test_offsets_recorded_per_step():
    u = np.zeros(2)

    def controller(x, t):
        offset = 0.5 if t < 0.025 else 0.0
        return u, StepDiagnostics(QpStatus.OPTIMAL, 0.0, np.zeros(0), np.zeros(0), offset=offset)

    record = simulate(identity_system(0.0), controller, [0.0, 0.0], 0.01, 0.1, 0)
    np.testing.assert_array_equal(record.offsets, [0.5, 0.5, 0.5] + [0.0] * 8)
    assert record.relaxed_steps == 3

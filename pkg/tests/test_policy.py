"""
Closed-loop policy: base relaxation, fallback ladder and step diagnostics.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from barriers.chain import build_barrier_chain, build_lyapunov_chain, top_constraint_row
from benchmarks.car2d import Car2dParams, car2d_barriers, car2d_lyapunov, car2d_system
from controller.policy import ControlPolicy, control_policy
from controller.qp import ControlBounds, QpStatus, QpWeights
from conftest import MULTI_OBSTACLES

REST = [0.0, 0.0, 0.0, 0.0]


def _chains(params):
    car = car2d_system(params)
    barriers = tuple(build_barrier_chain(h, car, 2, (1.0, 1.0), (1.0, 1.0)) for h in car2d_barriers(params))
    lyapunov = build_lyapunov_chain(car2d_lyapunov(params), car, 2, (1.0,), (1.0,))
    return lyapunov, barriers


def _policy(params, **options):
    lyapunov, barriers = _chains(params)
    weights = QpWeights(np.diag(params.q_diag), params.p)
    bounds = ControlBounds(np.array(params.u_lower), np.array(params.u_upper))
    return ControlPolicy(lyapunov, barriers, weights, bounds, **options)


def test_start_at_rest_uses_base_relaxation(car_params):
    """chi_1 = 0 at rest; the smallest offset is the margin itself."""
    solution, diag = _policy(car_params).solve_step(REST)
    assert solution.status is QpStatus.OPTIMAL
    assert diag.offset == pytest.approx(0.1)
    # relaxed row: 400 u_v + d - 39.9 >= 0
    assert solution.u[1] == pytest.approx(39.9 * 20.0 / (8000.0 + 1.0 / 2000.0), rel=1e-6)
    assert solution.u[1] > 0
    assert abs(solution.u[0]) < 1e-9
    assert diag.chi[0] == pytest.approx(0.1)
    assert diag.chi[-1] == pytest.approx(0.0, abs=1e-8)
    np.testing.assert_allclose(diag.psi, [14.89, 14.89], rtol=1e-12)


def test_relaxation_shrinks_with_weight(car_params):
    d = abs(_policy(car_params).solve_step(REST)[0].d)
    stiffer = replace(car_params, p=10.0 * car_params.p)
    d_stiff = abs(_policy(stiffer).solve_step(REST)[0].d)
    assert 0 < d_stiff < d


def test_slack_lyapunov_row_needs_no_relaxation(car_params):
    solution, diag = _policy(car_params).solve_step([0.0, 0.0, 0.0, 1.0])
    assert solution.status is QpStatus.OPTIMAL
    assert diag.offset == 0.0
    assert solution.d == pytest.approx(0.0, abs=1e-12)
    assert diag.chi[0] == pytest.approx(4.0, rel=1e-12)


def test_barrier_only_when_goal_behind_obstacle():
    params = Car2dParams(goal=(3.0, 2.5))
    policy = _policy(params, base_relaxation=False)
    solution, diag = policy.solve_step(REST)
    assert solution.status is QpStatus.BARRIER_ONLY
    assert diag.status.flagged
    assert math.isnan(diag.chi[-1])
    for chain in policy.barriers:
        assert top_constraint_row(chain, REST).evaluate(solution.u, solution.d) >= -1e-8


def test_clamped_inside_obstacle(car_params):
    x = [3.0, 2.5, 0.0, 0.5]
    u, diag = _policy(car_params)(x, 0.0)
    assert diag.status is QpStatus.CLAMPED
    assert u.tolist() == [0.0, 0.0]
    assert diag.relaxation == 0.0
    assert diag.psi[0] == pytest.approx(-0.36)
    assert math.isnan(diag.chi[-1])


def test_clf_only_ignores_obstacles_but_reports_them(car_params):
    x = [3.0, 2.5, 0.0, 0.5]
    solution, diag = _policy(car_params, enforce_barriers=False).solve_step(x)
    assert solution.status is QpStatus.OPTIMAL
    assert diag.psi[0] == pytest.approx(-0.36)
    assert diag.chi[0] == pytest.approx(0.75, rel=1e-12)


def test_psi_values_cover_every_chain():
    params = Car2dParams(obstacles=MULTI_OBSTACLES)
    policy = _policy(params)
    psi = policy.psi_values(REST)
    assert psi.shape == (6,)
    np.testing.assert_allclose(psi[:2], [1.84, 1.84], rtol=1e-12)


def test_control_policy_matches_policy_object(car_params):
    lyapunov, barriers = _chains(car_params)
    weights = QpWeights(np.diag(car_params.q_diag), car_params.p)
    bounds = ControlBounds.symmetric(2, 10.0)
    u, diag = control_policy(REST, 0.0, lyapunov, barriers, weights, bounds)
    expected, _ = ControlPolicy(lyapunov, barriers, weights, bounds)(REST, 0.0)
    assert np.array_equal(u, expected)
    assert diag.status is QpStatus.OPTIMAL


def test_relaxation_decay_demands_acceleration_at_rest(car_params):
    """rho * c * upsilon / chi^2 = 1 * 0.1 * 1 / 0.01 joins the rest row: 400 u_v + d - 49.9 >= 0."""
    solution, diag = _policy(car_params, relaxation_decay=1.0).solve_step(REST)
    assert solution.status is QpStatus.OPTIMAL
    assert diag.offset == pytest.approx(0.1)
    assert solution.u[1] == pytest.approx(49.9 * 20.0 / (8000.0 + 1.0 / 2000.0), rel=1e-6)
    assert diag.chi[-1] == pytest.approx(0.0, abs=1e-8)


def test_relaxation_decay_leaves_unrelaxed_rows_alone(car_params):
    x = [0.0, 0.0, 0.0, 1.0]
    plain, _ = _policy(car_params).solve_step(x)
    demanding, diag = _policy(car_params, relaxation_decay=1000.0).solve_step(x)
    assert diag.offset == 0.0
    np.testing.assert_array_equal(demanding.u, plain.u)

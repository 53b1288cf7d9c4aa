"""
Self-check suites shared by ``main.py check`` and the root ``test.py``.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from autodiff.jets import DomainError, fd_gradient, fd_hessian, gradient, hessian
from barriers.chain import (Chain, ChainKind, ConstraintRow, ConvergenceRate, RelativeDegreeMismatch,
                            build_barrier_chain, build_lyapunov_chain)
from benchmarks.car2d import Car2dParams, car2d_barriers, car2d_lyapunov, car2d_system
from benchmarks.pendulum import (ElasticPendulumParams, elastic_pendulum_system,
                                 pendulum_barrier, pendulum_lyapunov)
from controller.qp import QpProblem, QpStatus, enumerate_active_sets, solve
from dynamics.sde import make_generator


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def relative_error(exact: np.ndarray, approx: np.ndarray) -> float:
    return float(np.max(np.abs(exact - approx) / (1.0 + np.abs(exact)), initial=0.0))


def _clear_of_poles(chain: Chain, depth: int, clearance: float = 1.0) -> Callable:
    """Accepts states whose first ``depth`` chain levels are all at least ``clearance``."""
    def accept(x) -> bool:
        point = [float(v) for v in x]
        try:
            return all(float(level.psi(point)) >= clearance for level in chain.levels[:depth])
        except DomainError:
            return False
    return accept


def _chain_fields(system, chain: Chain) -> list:
    """Every level field of a chain and its reciprocal, each on its pole-free states."""
    fields = []
    for i, level in enumerate(chain.levels):
        # psi_0 of a barrier chain is h itself
        if i > 0 or chain.kind is ChainKind.LYAPUNOV:
            fields.append((system, level.psi, _clear_of_poles(chain, i)))
        fields.append((system, level.reciprocal_field(), _clear_of_poles(chain, i + 1)))
    return fields


def _benchmark_fields(pendulum_chains: bool = True):
    """(system, field, in-domain predicate) for every benchmark field and chain level."""
    car = Car2dParams(obstacles=((1.0, 1.0, 0.4), (1.0, 4.0, 0.4), (3.0, 2.5, 0.6)))
    pendulum = ElasticPendulumParams()
    car_sys, pend_sys = car2d_system(car), elastic_pendulum_system(pendulum)
    anywhere = lambda x: True
    fields = [(car_sys, h, anywhere) for h in car2d_barriers(car)]
    fields.append((car_sys, car2d_lyapunov(car), anywhere))
    fields.append((pend_sys, pendulum_barrier(pendulum), anywhere))
    fields.append((pend_sys, pendulum_lyapunov(pendulum), anywhere))

    for h in car2d_barriers(car):
        fields += _chain_fields(car_sys, build_barrier_chain(h, car_sys, 2, (1.0, 1.0), (1.0, 1.0)))
    lyapunov = build_lyapunov_chain(car2d_lyapunov(car), car_sys, 2, (1.0,), (100.0,),
                                    decay=ConvergenceRate(8.0, 0.5))
    fields += _chain_fields(car_sys, lyapunov.with_offset(5.0))

    if pendulum_chains:
        barrier = build_barrier_chain(pendulum_barrier(pendulum), pend_sys, 4, (1.0,) * 4, (1.0,) * 4)
        fields += _chain_fields(pend_sys, barrier)
        lyapunov = build_lyapunov_chain(pendulum_lyapunov(pendulum), pend_sys, 4, (1.0,) * 3, (1.0,) * 3)
        fields += _chain_fields(pend_sys, lyapunov.with_offset(5.0))
    return fields


def _in_domain_states(system, accept, rng, n_states: int):
    states = []
    for _ in range(200 * n_states):
        x = system.sampler(rng)
        if accept(x):
            states.append(x)
            if len(states) == n_states:
                break
    return states


def check_derivatives(n_states: int = 100, seed: int = 0, pendulum_chains: bool = True) -> SuiteResult:
    """
    Jets against central finite differences on every benchmark field and
    every level of the configured-shape chains. ``pendulum_chains`` adds the
    degree-4 pendulum levels, which dominate the run time.
    """
    rng = make_generator(seed)
    worst_grad, worst_hess, checked = 0.0, 0.0, 0
    fields = _benchmark_fields(pendulum_chains)
    for system, field, accept in fields:
        for x in _in_domain_states(system, accept, rng, n_states):
            worst_grad = max(worst_grad, relative_error(gradient(field, x), fd_gradient(field, x)))
            worst_hess = max(worst_hess, relative_error(hessian(field, x), fd_hessian(field, x)))
            checked += 1
    passed = worst_grad <= 1e-5 and worst_hess <= 1e-4
    return SuiteResult("autodiff", passed,
                       f"{checked} states over {len(fields)} fields, "
                       f"max gradient error {worst_grad:.2e}, max Hessian error {worst_hess:.2e}")


def random_problem(rng: np.random.Generator, n_rows: int, bounded: bool = False) -> QpProblem:
    """
    Random 2-control QP with one relaxed row and n_rows - 1 hard rows. The
    hard rows share a feasible anchor in [-1, 1]^2; with ``bounded`` each
    control gets bounds -U(0.3, 3) and +U(0.3, 3), which may cut the anchor off.
    """
    M = rng.standard_normal((2, 2))
    Q = M @ M.T + 0.1 * np.eye(2)
    Q = 0.5 * (Q + Q.T)
    anchor = rng.uniform(-1.0, 1.0, size=2)
    rows = []
    for _ in range(n_rows - 1):
        a_u = rng.standard_normal(2)
        rows.append(ConstraintRow(a_u, 0.0, -float(a_u @ anchor) + rng.uniform(0.0, 1.0)))
    a_u = rng.standard_normal(2)
    rows.append(ConstraintRow(a_u, 1.0, rng.uniform(-3.0, 1.0)))
    if bounded:
        lower, upper = -rng.uniform(0.3, 3.0, size=2), rng.uniform(0.3, 3.0, size=2)
    else:
        lower, upper = np.full(2, -np.inf), np.full(2, np.inf)
    return QpProblem(Q, float(rng.uniform(0.5, 5.0)), tuple(rows), lower, upper)


def check_qp(n_instances: int = 200, seed: int = 0) -> SuiteResult:
    """
    Active-set solver against exhaustive active-set enumeration, half the
    instances with finite control bounds. Where enumeration finds no feasible
    point the solver must report a fallback status.
    """
    rng = make_generator(seed)
    worst_gap, worst_kkt, failures = 0.0, 0.0, 0
    for k in range(n_instances):
        problem = random_problem(rng, int(rng.integers(1, 5)), bounded=k % 2 == 1)
        reference = enumerate_active_sets(problem)
        solution = solve(problem)
        if reference is None:
            if solution.status is QpStatus.OPTIMAL:
                failures += 1
            continue
        if solution.status is not QpStatus.OPTIMAL:
            failures += 1
            continue
        worst_gap = max(worst_gap, float(np.max(np.abs(solution.z - reference))))
        worst_kkt = max(worst_kkt, solution.kkt_residual)
    passed = failures == 0 and worst_gap <= 1e-6 and worst_kkt <= 1e-8
    return SuiteResult("qp", passed,
                       f"{n_instances} instances, max gap {worst_gap:.2e}, max KKT residual {worst_kkt:.2e}, "
                       f"{failures} failures")


def _degree_cases() -> List[Tuple[str, Callable[[int], object], int]]:
    car = Car2dParams()
    car_sys = car2d_system(car)
    pendulum = ElasticPendulumParams()
    pend_sys = elastic_pendulum_system(pendulum)
    h_car, V_car = car2d_barriers(car)[0], car2d_lyapunov(car)
    h_pend, V_pend = pendulum_barrier(pendulum), pendulum_lyapunov(pendulum)
    return [
        ("car barrier", lambda r: build_barrier_chain(h_car, car_sys, r, [1.0] * r, [1.0] * r), 2),
        ("car Lyapunov", lambda r: build_lyapunov_chain(V_car, car_sys, r, [1.0] * (r - 1), [1.0] * (r - 1)), 2),
        ("pendulum barrier", lambda r: build_barrier_chain(h_pend, pend_sys, r, [1.0] * r, [1.0] * r), 4),
        ("pendulum Lyapunov",
         lambda r: build_lyapunov_chain(V_pend, pend_sys, r, [1.0] * (r - 1), [1.0] * (r - 1)), 4),
    ]


def check_relative_degree() -> SuiteResult:
    """Declared degrees certify; one less is rejected."""
    problems = []
    for name, build, degree in _degree_cases():
        try:
            build(degree)
        except RelativeDegreeMismatch as e:
            problems.append(f"{name} r={degree} rejected: {e}")
        try:
            build(degree - 1)
            problems.append(f"{name} r={degree - 1} accepted")
        except RelativeDegreeMismatch:
            pass
    detail = "; ".join(problems) if problems else "car r=2 and pendulum r=4 certified, lower degrees rejected"
    return SuiteResult("relative-degree", not problems, detail)


SUITES = {
    "autodiff": check_derivatives,
    "qp": check_qp,
    "relative-degree": check_relative_degree,
}


def run_all() -> List[SuiteResult]:
    results = []
    for name, suite in SUITES.items():
        try:
            result = suite()
        except Exception as e:
            logging.error(f"Self-check suite '{name}' raised: {e}")
            result = SuiteResult(name, False, f"raised {type(e).__name__}: {e}")
        results.append(result)
    return results

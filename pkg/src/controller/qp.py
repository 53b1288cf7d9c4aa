"""
CLF-CBF quadratic program.

    minimize    u^T Q u + p d^2
    subject to  a_u . u + a_d d + b >= 0   for every constraint row
                u_lower <= u <= u_upper

Solved with a dense primal active-set method over z = (u, d). Infeasibility
is reported through QpStatus, never raised.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linprog

from barriers.chain import Chain, ConstraintRow, top_constraint_row

KKT_TOLERANCE = 1e-8
FEASIBILITY_TOLERANCE = 1e-10
# Margins tried by the phase-1 search, strictest first.
PHASE1_MARGINS = (1e-6, 0.0)


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    BARRIER_ONLY = "BarrierOnly"
    CLAMPED = "Clamped"

    @property
    def flagged(self) -> bool:
        return self is not QpStatus.OPTIMAL


@dataclass(frozen=True)
class QpWeights:
    Q: np.ndarray
    p: float


@dataclass(frozen=True)
class ControlBounds:
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def symmetric(cls, n_u: int, limit: float) -> "ControlBounds":
        return cls(np.full(n_u, -float(limit)), np.full(n_u, float(limit)))


@dataclass(frozen=True)
class QpProblem:
    """
    One control step's QP.

    Args:
        Q: n_u x n_u symmetric positive-definite control weight
        p: Relaxation weight, positive
        rows: Constraint rows (barrier rows with a_d = 0, Lyapunov row with a_d = 1)
        u_lower: Lower control bounds, -inf allowed
        u_upper: Upper control bounds, +inf allowed
    """
    Q: np.ndarray
    p: float
    rows: Tuple[ConstraintRow, ...]
    u_lower: np.ndarray
    u_upper: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "u_lower", np.asarray(self.u_lower, dtype=float).reshape(-1))
        object.__setattr__(self, "u_upper", np.asarray(self.u_upper, dtype=float).reshape(-1))

        n_u = Q.shape[0]
        if Q.shape != (n_u, n_u) or not np.array_equal(Q, Q.T):
            raise ValueError(f"Q must be square and symmetric, got {Q.tolist()}")
        try:
            np.linalg.cholesky(Q)
        except np.linalg.LinAlgError:
            raise ValueError(f"Q must be positive definite, got {Q.tolist()}")
        if not self.p > 0:
            raise ValueError(f"relaxation weight p must be positive, got {self.p}")
        if self.u_lower.shape != (n_u,) or self.u_upper.shape != (n_u,):
            raise ValueError(f"bounds must have length {n_u}")
        if not np.all(self.u_lower < self.u_upper):
            raise ValueError(f"u_lower must be below u_upper componentwise: "
                             f"{self.u_lower.tolist()} vs {self.u_upper.tolist()}")
        for row in self.rows:
            if np.shape(row.a_u) != (n_u,):
                raise ValueError(f"constraint row has {np.size(row.a_u)} control coefficients, expected {n_u}")

    @property
    def n_u(self) -> int:
        return self.Q.shape[0]

    def hessian(self) -> np.ndarray:
        """Hessian of the objective in z = (u, d)."""
        n = self.n_u
        H = np.zeros((n + 1, n + 1))
        H[:n, :n] = 2.0 * self.Q
        H[n, n] = 2.0 * self.p
        return H

    def inequalities(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        All constraints as A z + b >= 0: rows first, then finite lower
        bounds, then finite upper bounds.
        """
        n = self.n_u
        A_rows, b_vals = [], []
        for row in self.rows:
            A_rows.append(np.append(np.asarray(row.a_u, dtype=float), float(row.a_d)))
            b_vals.append(float(row.b))
        for j in range(n):
            if np.isfinite(self.u_lower[j]):
                a = np.zeros(n + 1)
                a[j] = 1.0
                A_rows.append(a)
                b_vals.append(-self.u_lower[j])
        for j in range(n):
            if np.isfinite(self.u_upper[j]):
                a = np.zeros(n + 1)
                a[j] = -1.0
                A_rows.append(a)
                b_vals.append(self.u_upper[j])
        A = np.array(A_rows, dtype=float).reshape(len(A_rows), n + 1)
        return A, np.array(b_vals, dtype=float)

    def without_relaxed_rows(self) -> "QpProblem":
        """Same problem with every row that carries the relaxation dropped."""
        kept = tuple(row for row in self.rows if row.a_d == 0.0)
        return QpProblem(self.Q, self.p, kept, self.u_lower, self.u_upper)

    def bounds_only(self) -> "QpProblem":
        return QpProblem(self.Q, self.p, (), self.u_lower, self.u_upper)


@dataclass
class QpSolution:
    u: np.ndarray
    d: float
    status: QpStatus
    kkt_residual: float
    active_set: FrozenSet[int] = frozenset()
    multipliers: Dict[int, float] = field(default_factory=dict)

    @property
    def z(self) -> np.ndarray:
        return np.append(self.u, self.d)


class _Infeasible(Exception):
    pass


def _normalized(problem: QpProblem) -> Tuple[np.ndarray, np.ndarray, List[int]]:
    """
    Unit-norm constraint rows. Rows with (near) zero coefficients are dropped
    when satisfied; unsatisfiable constant rows make the problem infeasible.
    """
    A, b = problem.inequalities()
    keep = []
    for i in range(len(b)):
        norm = np.linalg.norm(A[i])
        if norm <= 1e-14:
            if b[i] < -FEASIBILITY_TOLERANCE:
                raise _Infeasible(f"constant constraint {i} has value {b[i]}")
            continue
        A[i] /= norm
        b[i] /= norm
        keep.append(i)
    return A, b, keep


def _phase1(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Feasible starting point for A z + b >= 0."""
    n = A.shape[1]
    z0 = np.zeros(n)
    if len(b) == 0 or np.all(b >= 0.0):
        return z0
    for margin in PHASE1_MARGINS:
        result = linprog(np.zeros(n), A_ub=-A, b_ub=b - margin,
                         bounds=[(None, None)] * n, method="highs")
        if result.status == 0:
            return np.asarray(result.x, dtype=float)
    raise _Infeasible("phase-1 found no feasible point")


def _active_set_qp(H: np.ndarray, A: np.ndarray, b: np.ndarray, z: np.ndarray,
                   max_iter: int) -> Tuple[np.ndarray, List[int], np.ndarray]:
    """
    Primal active-set iterations for min 1/2 z^T H z s.t. A z + b >= 0 from
    a feasible z. Ties are broken by the smallest constraint index.

    Returns:
        (minimizer, working set, multipliers of the working set)
    """
    factor = cho_factor(H)
    n = H.shape[0]
    working: List[int] = []
    for _ in range(max_iter):
        g = H @ z
        Hinv_g = cho_solve(factor, g)
        if working:
            Aw = A[working]
            Hinv_AwT = cho_solve(factor, Aw.T)
            S = Aw @ Hinv_AwT
            try:
                lam = cho_solve(cho_factor(S), Aw @ Hinv_g)
            except LinAlgError:
                lam = np.linalg.lstsq(S, Aw @ Hinv_g, rcond=None)[0]
            step = Hinv_AwT @ lam - Hinv_g
        else:
            lam = np.zeros(0)
            step = -Hinv_g

        # n independent working rows pin z: any step left is rounding
        scale = max(1.0, float(np.max(np.abs(z))), float(np.max(np.abs(Hinv_g))))
        pinned = len(working) >= n and np.linalg.matrix_rank(A[working]) >= n
        stalled = pinned or np.max(np.abs(step), initial=0.0) <= 1e-10 * scale
        if stalled:
            lam_floor = -1e-10 * max(1.0, float(np.max(np.abs(g))))
            negative = [w for w, l in zip(working, lam) if l < lam_floor]
            if not negative:
                return z, working, lam
            drop = min(negative)
            working.remove(drop)
            continue

        alpha, blocking = 1.0, None
        slopes = A @ step
        slack = A @ z + b
        for i in range(len(b)):
            if i in working or slopes[i] >= -1e-15:
                continue
            ratio = max(slack[i], 0.0) / -slopes[i]
            if ratio < alpha:
                alpha, blocking = ratio, i
        z = z + alpha * step
        if blocking is not None:
            working.append(blocking)
            working.sort()
    raise _Infeasible(f"active-set iteration limit {max_iter} reached")


def _solve_once(problem: QpProblem, status: QpStatus, max_iter: int) -> QpSolution:
    A_full, b_full, keep = _normalized(problem)
    A, b = A_full[keep], b_full[keep]
    H = problem.hessian()
    z0 = _phase1(A, b)
    if len(b) and np.min(A @ z0 + b) < -1e-7:
        raise _Infeasible("phase-1 point violates the constraints")
    z, working, lam = _active_set_qp(H, A, b, z0, max_iter)

    active = frozenset(keep[w] for w in working)
    norms = np.linalg.norm(problem.inequalities()[0], axis=1)
    multipliers = {keep[w]: float(l / norms[keep[w]]) for w, l in zip(working, lam)}
    n = problem.n_u
    candidate = QpSolution(u=z[:n].copy(), d=float(z[n]), status=status,
                           kkt_residual=0.0, active_set=active, multipliers=multipliers)
    candidate.kkt_residual = kkt_residual(problem, candidate)
    return candidate


def clamped_solution(problem: QpProblem) -> QpSolution:
    """Minimum-norm control inside the bounds, d = 0."""
    u = np.clip(np.zeros(problem.n_u), problem.u_lower, problem.u_upper)
    candidate = QpSolution(u=u, d=0.0, status=QpStatus.CLAMPED, kkt_residual=0.0)
    bounds = problem.bounds_only()
    A, b = bounds.inequalities()
    z = candidate.z
    candidate.active_set = frozenset(i for i in range(len(b)) if abs(A[i] @ z + b[i]) <= FEASIBILITY_TOLERANCE)
    candidate.kkt_residual = kkt_residual(bounds, candidate)
    return candidate


def solve(problem: QpProblem, max_iter: int = 50) -> QpSolution:
    """
    Solve the QP, falling back when it is infeasible.

    Ladder: full problem (Optimal), then without the relaxed Lyapunov rows
    (BarrierOnly), then the clamped minimum-norm control (Clamped).

    Args:
        problem: Assembled QP
        max_iter: Active-set iteration limit per attempt

    Returns:
        QpSolution; never raises for infeasibility
    """
    try:
        return _solve_once(problem, QpStatus.OPTIMAL, max_iter)
    except _Infeasible as e:
        logging.debug(f"Full QP infeasible: {e}")

    reduced = problem.without_relaxed_rows()
    if len(reduced.rows) < len(problem.rows):
        try:
            return _solve_once(reduced, QpStatus.BARRIER_ONLY, max_iter)
        except _Infeasible as e:
            logging.debug(f"Barrier-only QP infeasible: {e}")
    return clamped_solution(problem)


def kkt_residual(problem: QpProblem, candidate: QpSolution) -> float:
    """
    Optimality certificate for a candidate solution.

    Multipliers are recovered by least squares on the candidate's active set
    from the stationarity condition H z = A_W^T lambda. Works on unit-norm
    rows; stationarity and complementarity are relative to max(1, |H z|).

    Returns:
        max(stationarity, primal violation, dual negativity, complementarity)
    """
    A, b = problem.inequalities()
    norms = np.linalg.norm(A, axis=1)
    live = norms > 1e-14
    A_n = np.zeros_like(A)
    b_n = b.copy()
    A_n[live] = A[live] / norms[live, None]
    b_n[live] = b[live] / norms[live]

    z = candidate.z
    g = problem.hessian() @ z
    scale = max(1.0, float(np.max(np.abs(g), initial=0.0)))
    slack = A_n @ z + b_n

    active = [i for i in sorted(candidate.active_set) if live[i]]
    if active:
        lam = np.linalg.lstsq(A_n[active].T, g, rcond=None)[0]
        stationarity = g - A_n[active].T @ lam
    else:
        lam = np.zeros(0)
        stationarity = g

    residual = float(np.max(np.abs(stationarity), initial=0.0)) / scale
    residual = max(residual, float(np.max(-slack, initial=0.0)))
    residual = max(residual, float(np.max(-lam, initial=0.0)) / scale)
    if active:
        residual = max(residual, float(np.max(np.abs(lam * slack[active]))) / scale)
    return residual


def enumerate_active_sets(problem: QpProblem) -> Optional[np.ndarray]:
    """
    Brute-force reference solver: solve the equality-constrained QP for every
    subset of constraints and keep the feasible point with nonnegative
    multipliers and the lowest objective.

    Returns:
        z = (u, d) of the minimizer, or None if no subset qualifies
    """
    A, b = problem.inequalities()
    norms = np.linalg.norm(A, axis=1)
    A = A / np.where(norms > 0, norms, 1.0)[:, None]
    b = b / np.where(norms > 0, norms, 1.0)
    H = problem.hessian()
    n = H.shape[0]
    best, best_value = None, np.inf
    for size in range(0, min(len(b), n) + 1):
        for subset in itertools.combinations(range(len(b)), size):
            idx = list(subset)
            K = np.zeros((n + size, n + size))
            K[:n, :n] = H
            K[:n, n:] = -A[idx].T
            K[n:, :n] = A[idx]
            rhs = np.concatenate([np.zeros(n), -b[idx]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[:n], sol[n:]
            if np.any(A @ z + b < -1e-9) or np.any(lam < -1e-9):
                continue
            value = 0.5 * z @ H @ z
            if value < best_value:
                best, best_value = z, value
    return best


def assemble(x: Sequence[float], lyapunov: Optional[Chain], barriers: Sequence[Chain],
             weights: QpWeights, bounds: ControlBounds) -> QpProblem:
    """
    Build the QP at state x: one row per barrier chain, then the Lyapunov row.

    Raises:
        ChainBoundaryError: from the first chain whose nested set excludes x
    """
    rows = [top_constraint_row(chain, x) for chain in barriers]
    if lyapunov is not None:
        rows.append(top_constraint_row(lyapunov, x))
    return QpProblem(weights.Q, weights.p, tuple(rows), bounds.lower, bounds.upper)

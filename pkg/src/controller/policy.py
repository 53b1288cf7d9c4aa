"""
Closed-loop CLF-CBF policy with the infeasibility fallback ladder.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from barriers.chain import Chain, ChainBoundaryError, ConstraintRow, chain_values, top_constraint_row
from controller.qp import ControlBounds, QpProblem, QpSolution, QpStatus, QpWeights, clamped_solution, solve
from dynamics.sde import StepDiagnostics


@dataclass(frozen=True)
class ControlPolicy:
    """
    Maps (x, t) to a control and its step diagnostics.

    Ladder per step:
        1. full QP with every barrier row and the Lyapunov row
        2. Lyapunov chain at its boundary (after the base relaxation search,
           when enabled) or full QP infeasible: barrier rows only, BarrierOnly
        3. barrier chain at its boundary or barrier rows infeasible:
           clamped minimum-norm control, Clamped

    With ``enforce_barriers`` off the barrier rows are never assembled
    (CLF-only controller) but the barrier values are still reported.

    A relaxed Lyapunov row also demands that the base offset c shrinks at
    rate ``relaxation_decay``: the top level must grow by at least
    relaxation_decay * c, so a relaxed state cannot stall.
    """
    lyapunov: Chain
    barriers: Tuple[Chain, ...]
    weights: QpWeights
    bounds: ControlBounds
    enforce_barriers: bool = True
    base_relaxation: bool = True
    relaxation_margin: float = 0.1
    max_doublings: int = 20
    max_iter: int = 50
    relaxation_decay: float = 0.0

    def psi_values(self, x) -> np.ndarray:
        if not self.barriers:
            return np.zeros(0)
        return np.concatenate([chain_values(chain, x) for chain in self.barriers])

    def relaxed_lyapunov(self, x) -> Optional[Tuple[Chain, ConstraintRow]]:
        """
        Smallest base offset on a doubling ladder that puts x at least
        ``relaxation_margin`` inside every Lyapunov level.
        """
        chi1 = chain_values(self.lyapunov, x)[0]
        if not math.isfinite(chi1):
            return None
        margin = self.relaxation_margin
        offset = max(margin - chi1, margin)
        for _ in range(self.max_doublings + 1):
            shifted = self.lyapunov.with_offset(offset)
            values = chain_values(shifted, x)
            if np.all(values >= margin):
                try:
                    row = top_constraint_row(shifted, x)
                except ChainBoundaryError:
                    pass
                else:
                    return shifted, self._demand_progress(shifted, values[-1], row)
            offset *= 2.0
        return None

    def _demand_progress(self, chain: Chain, top_value: float, row: ConstraintRow) -> ConstraintRow:
        # d/dt chi_top >= rate * c, written in units of V_top = gain / chi_top
        if not self.relaxation_decay:
            return row
        gain = chain.levels[-1].gain
        demand = self.relaxation_decay * chain.offset * gain / (top_value * top_value)
        return replace(row, b=row.b - demand)

    def _lyapunov_row(self, x) -> Tuple[Chain, Optional[ConstraintRow]]:
        try:
            return self.lyapunov, top_constraint_row(self.lyapunov, x)
        except ChainBoundaryError as e:
            logging.debug(f"Lyapunov chain at boundary (level {e.level}, value {e.value:.3e})")
        if self.base_relaxation:
            relaxed = self.relaxed_lyapunov(x)
            if relaxed is not None:
                return relaxed
        return self.lyapunov, None

    def _chi_values(self, chain: Chain, x, row: Optional[ConstraintRow], solution: QpSolution) -> np.ndarray:
        top = row.evaluate(solution.u, solution.d) if row is not None else math.nan
        return np.append(chain_values(chain, x), top)

    def solve_step(self, x) -> Tuple[QpSolution, StepDiagnostics]:
        x = np.asarray(x, dtype=float)
        psi = self.psi_values(x)
        lower, upper = self.bounds.lower, self.bounds.upper

        barrier_rows: List[ConstraintRow] = []
        if self.enforce_barriers:
            try:
                barrier_rows = [top_constraint_row(chain, x) for chain in self.barriers]
            except ChainBoundaryError as e:
                logging.debug(f"Barrier chain '{e.chain.name}' at boundary (level {e.level}); clamping")
                empty = QpProblem(self.weights.Q, self.weights.p, (), lower, upper)
                solution = clamped_solution(empty)
                chi = np.append(chain_values(self.lyapunov, x), math.nan)
                return solution, StepDiagnostics(solution.status, solution.d, psi, chi)

        chain, lyap_row = self._lyapunov_row(x)
        rows = list(barrier_rows) + ([lyap_row] if lyap_row is not None else [])
        problem = QpProblem(self.weights.Q, self.weights.p, tuple(rows), lower, upper)
        solution = solve(problem, self.max_iter)
        if lyap_row is None and solution.status is QpStatus.OPTIMAL:
            solution.status = QpStatus.BARRIER_ONLY
        if solution.status is not QpStatus.OPTIMAL:
            logging.debug(f"Step resolved as {solution.status.value} at x={x.tolist()}")
            lyap_row = None

        chi = self._chi_values(chain, x, lyap_row, solution)
        diagnostics = StepDiagnostics(solution.status, solution.d, psi, chi, offset=chain.offset)
        return solution, diagnostics

    def __call__(self, x, t: float) -> Tuple[np.ndarray, StepDiagnostics]:
        solution, diagnostics = self.solve_step(x)
        return solution.u, diagnostics


def control_policy(x: Sequence[float], t: float, lyapunov: Chain, barriers: Sequence[Chain],
                   weights: QpWeights, bounds: ControlBounds, **options) -> Tuple[np.ndarray, StepDiagnostics]:
    """One evaluation of the fallback ladder; ``options`` are ControlPolicy fields."""
    policy = ControlPolicy(lyapunov, tuple(barriers), weights, bounds, **options)
    return policy(x, t)

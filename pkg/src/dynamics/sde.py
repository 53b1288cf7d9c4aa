"""
Controlled Ito SDE model and closed-loop simulation.
Integrates dx = (f(x) + G(x)u) dt + sigma*G(x) dw with explicit Euler-Maruyama.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

# Recorded in output metadata; both affect bit-exactness of a run.
RNG_NAME = "numpy.Philox"
NORMAL_METHOD = "numpy.Generator.standard_normal (ziggurat)"


class NonFiniteState(ArithmeticError):
    """Raised when an integration step produces NaN or Inf."""

    def __init__(self, message: str, record: Optional["TrajectoryRecord"] = None):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class StochasticAffineSystem:
    """
    Control-affine stochastic system with noise entering through the control
    channels: Sigma(x) = sigma * G(x), so n_w = n_u.

    ``drift`` and ``actuation`` must accept sequences of generic scalars
    (plain reals or jets) and return a list / list of rows.
    """
    name: str
    n_x: int
    n_u: int
    drift: Callable[[Sequence], list]
    actuation: Callable[[Sequence], list]
    noise_scale: float
    state_labels: Tuple[str, ...]
    control_labels: Tuple[str, ...]
    sampler: Optional[Callable[[np.random.Generator], np.ndarray]] = None

    @property
    def n_w(self) -> int:
        return self.n_u

    def drift_array(self, x: np.ndarray) -> np.ndarray:
        return np.array([float(v) for v in self.drift([float(v) for v in x])])

    def actuation_array(self, x: np.ndarray) -> np.ndarray:
        rows = self.actuation([float(v) for v in x])
        return np.array([[float(v) for v in row] for row in rows])


@dataclass
class StepDiagnostics:
    """What a controller reports about one control step."""
    status: object
    relaxation: float
    psi: np.ndarray
    chi: np.ndarray
    offset: float = 0.0


@dataclass
class TrajectoryRecord:
    """Time-indexed closed-loop rollout with per-step controller diagnostics."""
    seed: int
    dt: float
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    relaxations: np.ndarray
    psi_values: np.ndarray
    chi_values: np.ndarray
    qp_status: List[object] = field(default_factory=list)
    truncated: bool = False
    # base offset c of the Lyapunov chain per step, 0 when unrelaxed
    offsets: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.times)

    @property
    def relaxed_steps(self) -> int:
        if self.offsets is None:
            return 0
        return int(np.count_nonzero(self.offsets > 0.0))

    @property
    def flagged(self) -> bool:
        return any(getattr(s, "flagged", False) for s in self.qp_status)


def make_generator(seed: int) -> np.random.Generator:
    """Counter-based 64-bit generator for one trajectory."""
    return np.random.Generator(np.random.Philox(int(seed)))


def brownian_increments(rng: np.random.Generator, n_w: int, dt: float) -> np.ndarray:
    """
    Draw one Brownian increment.

    Args:
        rng: Seeded generator (advanced by the call)
        n_w: Number of noise channels
        dt: Step length in seconds

    Returns:
        n_w independent samples from Normal(0, dt)
    """
    return math.sqrt(dt) * rng.standard_normal(n_w)


def em_step(system: StochasticAffineSystem, x: np.ndarray, u: np.ndarray,
            dt: float, dW: np.ndarray) -> np.ndarray:
    """One explicit Euler-Maruyama step; raises NonFiniteState on blow-up."""
    f = system.drift_array(x)
    G = system.actuation_array(x)
    x_next = x + (f + G @ u) * dt + system.noise_scale * (G @ dW)
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState(f"non-finite state after step from {x.tolist()}")
    return x_next


def sample_count(dt: float, horizon: float) -> int:
    """N = floor(T/dt) + 1, tolerant of representation error in T/dt."""
    return int(math.floor(horizon / dt + 1e-9)) + 1


def simulate(system: StochasticAffineSystem, controller: Callable, x0: Sequence,
             dt: float, horizon: float, seed: int) -> TrajectoryRecord:
    """
    Closed-loop rollout with zero-order-hold control.

    Args:
        system: Stochastic system to integrate
        controller: Map (state, time) -> (control, StepDiagnostics)
        x0: Initial state
        dt: Step length in seconds
        horizon: Final time in seconds
        seed: Trajectory seed

    Returns:
        TrajectoryRecord with N = floor(horizon/dt) + 1 samples

    Raises:
        NonFiniteState: with the partial record (marked truncated) attached
    """
    n = sample_count(dt, horizon)
    times = dt * np.arange(n)
    rng = make_generator(seed)

    states = np.full((n, system.n_x), np.nan)
    controls = np.full((n, system.n_u), np.nan)
    relaxations = np.full(n, np.nan)
    offsets = np.full(n, np.nan)
    psi_rows, chi_rows, statuses = [], [], []

    x = np.array(x0, dtype=float)
    for k in range(n):
        u, diag = controller(x, times[k])
        states[k] = x
        controls[k] = u
        relaxations[k] = diag.relaxation
        offsets[k] = diag.offset
        psi_rows.append(diag.psi)
        chi_rows.append(diag.chi)
        statuses.append(diag.status)
        if k == n - 1:
            break
        dW = brownian_increments(rng, system.n_w, dt)
        try:
            x = em_step(system, x, np.asarray(u, dtype=float), dt, dW)
        except NonFiniteState as e:
            logging.warning(f"Trajectory seed={seed} truncated at t={times[k]:.4f}: {e}")
            kept = k + 1
            record = TrajectoryRecord(
                seed=seed, dt=dt, times=times[:kept], states=states[:kept],
                controls=controls[:kept], relaxations=relaxations[:kept],
                psi_values=_stack(psi_rows), chi_values=_stack(chi_rows),
                qp_status=statuses, truncated=True, offsets=offsets[:kept],
            )
            raise NonFiniteState(str(e), record) from e

    return TrajectoryRecord(
        seed=seed, dt=dt, times=times, states=states, controls=controls,
        relaxations=relaxations, psi_values=_stack(psi_rows),
        chi_values=_stack(chi_rows), qp_status=statuses, offsets=offsets,
    )


def _stack(rows: List[np.ndarray]) -> np.ndarray:
    width = len(rows[0]) if rows else 0
    return np.array(rows, dtype=float).reshape(len(rows), width)

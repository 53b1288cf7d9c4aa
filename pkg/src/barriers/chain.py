"""
Recursive barrier and Lyapunov chains.

A barrier chain starts from a safety function h and builds
    psi_0 = h,  B_i = gamma_i / psi_i,
    psi_{i+1} = kappa_i * psi_i - (dB_i/dx . f + 1/2 tr(d2B_i/dx2 Sigma Sigma^T)),
evaluating the generator along the uncontrolled drift until the control
appears at the top level. A Lyapunov chain does the same starting from
chi_1 = c - (dV_0/dx . f + 1/2 tr(d2V_0/dx2 Sigma Sigma^T)) - beta(V_0),
where beta is an optional convergence-rate demand on V_0.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from autodiff.jets import DomainError, ScalarField, evaluate_jet, reciprocal
from dynamics.sde import StochasticAffineSystem, make_generator

# Absolute size above which an extracted u-coefficient counts as nonzero.
DEGREE_TOLERANCE = 1e-9


class ChainBoundaryError(ArithmeticError):
    """The state is outside the nested set of some chain level."""

    def __init__(self, chain: "Chain", level: int, value: float):
        super().__init__(f"chain '{chain.name}' level {level} value {value!r} is not positive")
        self.chain = chain
        self.level = level
        self.value = value


class RelativeDegreeMismatch(ValueError):
    """The declared relative degree does not match where the control appears."""


class ChainKind(str, Enum):
    BARRIER = "Barrier"
    LYAPUNOV = "Lyapunov"


@dataclass(frozen=True)
class ClassK:
    """Linear class-K function alpha(s) = slope * s."""
    slope: float = 1.0

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError(f"class-K slope must be positive, got {self.slope}")

    def __call__(self, s):
        return s * self.slope


@dataclass(frozen=True)
class ConvergenceRate:
    """
    Decay demanded of V_0 inside chi_1:
        beta(V_0) = rate * V_0 / (1 + V_0 / saturation).

    An infinite saturation gives the exponential demand rate * V_0; a finite
    one caps it at rate * saturation far from the goal. rate = 0 disables it.
    """
    rate: float = 0.0
    saturation: float = math.inf

    def __post_init__(self):
        if not self.rate >= 0:
            raise ValueError(f"convergence rate must be nonnegative, got {self.rate}")
        if not self.saturation > 0:
            raise ValueError(f"convergence saturation must be positive, got {self.saturation}")

    def __call__(self, v):
        if self.rate == 0.0:
            return 0.0
        if math.isinf(self.saturation):
            return v * self.rate
        return v * reciprocal(v * (1.0 / self.saturation) + 1.0) * self.rate


@dataclass(frozen=True)
class ChainLevel:
    """
    One level of the recursion: the residual field psi_i (or chi_i), the gain
    of its reciprocal B_i = gain / psi_i, and the class-K slope used to build
    the next level.
    """
    psi: ScalarField
    gain: float
    alpha: ClassK

    def reciprocal_field(self) -> ScalarField:
        gain = self.gain
        psi = self.psi
        return ScalarField(psi.arity, lambda x: reciprocal(psi(x)) * gain, f"B[{psi.name}]")


@dataclass(frozen=True)
class ConstraintRow:
    """Affine inequality a_u . u + a_d * d + b >= 0."""
    a_u: np.ndarray
    a_d: float
    b: float

    def evaluate(self, u: np.ndarray, d: float = 0.0) -> float:
        return float(np.dot(self.a_u, u) + self.a_d * d + self.b)


@dataclass(frozen=True)
class Chain:
    """
    Barrier chain (levels 0..r-1) or Lyapunov chain (levels 1..r-1).

    ``base`` is h for a barrier chain and V_0 for a Lyapunov chain.
    ``offset`` is the Lyapunov base relaxation c added to chi_1 and
    ``decay`` the convergence demand subtracted from it.
    """
    kind: ChainKind
    degree: int
    levels: Tuple[ChainLevel, ...]
    system: StochasticAffineSystem
    base: ScalarField
    name: str
    gains: Tuple[float, ...]
    slopes: Tuple[float, ...]
    offset: float = 0.0
    decay: ConvergenceRate = ConvergenceRate()

    @property
    def first_level(self) -> int:
        return 0 if self.kind is ChainKind.BARRIER else 1

    def with_offset(self, offset: float) -> "Chain":
        """Same Lyapunov chain with the base relaxation set to ``offset``."""
        if self.kind is not ChainKind.LYAPUNOV:
            raise ValueError("only Lyapunov chains carry a base relaxation")
        levels = _lyapunov_levels(self.base, self.system, self.degree, self.gains, self.slopes,
                                  offset, self.decay)
        return replace(self, levels=levels, offset=offset)


# ---------- generator ----------

def _generator_from_jet(jet, x: Sequence, system: StochasticAffineSystem):
    """grad . f + 1/2 tr(H Sigma Sigma^T) from an already evaluated jet."""
    f = system.drift(x)
    total = 0.0
    for i, g in jet.grad.items():
        fi = f[i]
        if isinstance(fi, float) and fi == 0.0:
            continue
        total = total + g * fi

    sigma = system.noise_scale
    if sigma != 0.0 and jet.hess:
        G = system.actuation(x)
        trace = 0.0
        for (i, j), h in jet.hess.items():
            weight = 1.0 if i == j else 2.0
            for gi, gj in zip(G[i], G[j]):
                if (isinstance(gi, float) and gi == 0.0) or (isinstance(gj, float) and gj == 0.0):
                    continue
                trace = trace + h * (gi * gj) * weight
        total = total + trace * (0.5 * sigma * sigma)
    return total


def generator_uncontrolled(field, x: Sequence, system: StochasticAffineSystem):
    """
    Ito generator of a field along the uncontrolled drift.

    Args:
        field: Scalar field, twice differentiable at x
        x: State (plain reals or jets)
        system: Stochastic system supplying f and Sigma

    Returns:
        grad(field) . f(x) + 1/2 trace(hess(field) Sigma Sigma^T)
    """
    return _generator_from_jet(evaluate_jet(field, x), x, system)


def _next_psi(level: ChainLevel, system: StochasticAffineSystem, name: str) -> ScalarField:
    psi, gain, alpha = level.psi, level.gain, level.alpha

    def fn(x):
        jet = evaluate_jet(psi, x)
        barrier = reciprocal(jet) * gain
        return alpha(jet.value) - _generator_from_jet(barrier, x, system)

    return ScalarField(psi.arity, fn, name)


# ---------- construction ----------

def _check_lengths(r: int, gains: Sequence[float], slopes: Sequence[float], expected: int, what: str):
    if r < 1:
        raise ValueError(f"relative degree must be >= 1, got {r}")
    if len(gains) != expected or len(slopes) != expected:
        raise ValueError(f"{what} chain of degree {r} needs {expected} gains and class-K slopes, "
                         f"got {len(gains)} and {len(slopes)}")
    if any(not g > 0 for g in gains):
        raise ValueError(f"{what} gains must be positive: {list(gains)}")


def _barrier_levels(h: ScalarField, system, r: int, gains, slopes) -> Tuple[ChainLevel, ...]:
    levels: List[ChainLevel] = []
    psi = h
    for i in range(r):
        level = ChainLevel(psi, float(gains[i]), ClassK(float(slopes[i])))
        levels.append(level)
        if i < r - 1:
            psi = _next_psi(level, system, f"{h.name}.psi{i + 1}")
    return tuple(levels)


def _lyapunov_levels(V0: ScalarField, system, r: int, gains, slopes, offset: float,
                     decay: ConvergenceRate) -> Tuple[ChainLevel, ...]:
    if r == 1:
        return ()

    def chi1(x):
        return offset - generator_uncontrolled(V0, x, system) - decay(V0(x))

    levels: List[ChainLevel] = []
    chi = ScalarField(V0.arity, chi1, f"{V0.name}.chi1")
    for i in range(1, r):
        level = ChainLevel(chi, float(gains[i - 1]), ClassK(float(slopes[i - 1])))
        levels.append(level)
        if i < r - 1:
            chi = _next_psi(level, system, f"{V0.name}.chi{i + 1}")
    return tuple(levels)


def build_barrier_chain(h: ScalarField, system: StochasticAffineSystem, r_b: int,
                        gains: Sequence[float], alphas: Sequence[float],
                        samples: Optional[Sequence[np.ndarray]] = None,
                        n_samples: int = 8, name: Optional[str] = None) -> Chain:
    """
    Build the barrier chain psi_0..psi_{r_b-1} for safety function h.

    Args:
        h: Safety function, psi_0
        system: Stochastic system
        r_b: Declared relative degree
        gains: gamma_0..gamma_{r_b-1}
        alphas: Class-K slopes kappa_0..kappa_{r_b-1}
        samples: States used to certify the relative degree; drawn from
            ``system.sampler`` when omitted
        n_samples: Number of states to draw when sampling
        name: Chain name used in logs and CSV columns

    Returns:
        Immutable Chain

    Raises:
        RelativeDegreeMismatch: if the control appears below the top level or
            never appears at the top level on the sampled states
    """
    _check_lengths(r_b, gains, alphas, r_b, "barrier")
    chain = Chain(
        kind=ChainKind.BARRIER, degree=r_b,
        levels=_barrier_levels(h, system, r_b, gains, alphas),
        system=system, base=h, name=name or h.name,
        gains=tuple(float(g) for g in gains), slopes=tuple(float(a) for a in alphas),
    )
    certify_relative_degree(chain, samples, n_samples)
    logging.info(f"Built barrier chain '{chain.name}' of relative degree {r_b}")
    return chain


def build_lyapunov_chain(V0: ScalarField, system: StochasticAffineSystem, r_l: int,
                         gains: Sequence[float], alphas: Sequence[float],
                         samples: Optional[Sequence[np.ndarray]] = None,
                         n_samples: int = 8, name: Optional[str] = None,
                         decay: Optional[ConvergenceRate] = None) -> Chain:
    """
    Build the Lyapunov chain chi_1..chi_{r_l-1} for V0.

    ``gains`` and ``alphas`` hold upsilon_i and the class-K slopes for levels
    1..r_l-1 (empty for r_l = 1). The relaxation variable enters only the top
    constraint row. ``decay`` (none by default) is folded into chi_1.
    """
    _check_lengths(r_l, gains, alphas, r_l - 1, "Lyapunov")
    decay = decay or ConvergenceRate()
    chain = Chain(
        kind=ChainKind.LYAPUNOV, degree=r_l,
        levels=_lyapunov_levels(V0, system, r_l, gains, alphas, 0.0, decay),
        system=system, base=V0, name=name or V0.name,
        gains=tuple(float(g) for g in gains), slopes=tuple(float(a) for a in alphas),
        decay=decay,
    )
    certify_relative_degree(chain, samples, n_samples)
    logging.info(f"Built Lyapunov chain '{chain.name}' of relative degree {r_l}")
    return chain


# ---------- evaluation ----------

def _generator_fields(chain: Chain) -> List[ScalarField]:
    """Fields whose generator defines each level above: B_i, or V_0 then V_i."""
    fields = [level.reciprocal_field() for level in chain.levels]
    if chain.kind is ChainKind.LYAPUNOV:
        fields.insert(0, chain.base)
    return fields


def u_coefficient(field, x: np.ndarray, system: StochasticAffineSystem) -> np.ndarray:
    """G(x)^T grad(field)(x): how the control enters the generator of ``field``."""
    jet = evaluate_jet(field, [float(v) for v in x])
    G = system.actuation_array(x)
    grad = np.zeros(system.n_x)
    for i, g in jet.grad.items():
        grad[i] = float(g)
    return G.T @ grad


def certify_relative_degree(chain: Chain, samples: Optional[Sequence[np.ndarray]] = None,
                            n_samples: int = 8) -> None:
    """
    Check that the control is absent below the top level and present at it.

    Raises:
        RelativeDegreeMismatch
    """
    if samples is None:
        if chain.system.sampler is None:
            logging.debug(f"No sampler for '{chain.system.name}'; skipping relative-degree check")
            return
        rng = make_generator(0)
        samples = [chain.system.sampler(rng) for _ in range(n_samples)]

    fields = _generator_fields(chain)
    top_seen = 0.0
    for x in samples:
        for i, field in enumerate(fields):
            try:
                coeff = u_coefficient(field, x, chain.system)
            except DomainError:
                continue
            size = float(np.max(np.abs(coeff))) if coeff.size else 0.0
            if i < len(fields) - 1 and size > DEGREE_TOLERANCE:
                raise RelativeDegreeMismatch(
                    f"chain '{chain.name}': control appears at level {i + chain.first_level + 1} "
                    f"(|coefficient| = {size:.3e}) below the declared degree {chain.degree}")
            if i == len(fields) - 1:
                top_seen = max(top_seen, size)
    if top_seen <= DEGREE_TOLERANCE:
        raise RelativeDegreeMismatch(
            f"chain '{chain.name}': control never appears at the top level of declared degree {chain.degree}")


def chain_values(chain: Chain, x: Sequence) -> np.ndarray:
    """
    Level values psi_0..psi_{r-1} (or chi_1..chi_{r-1}).

    A DomainError at a level is reported as -inf, and so is every level above
    the first nonpositive one: those are built from a reciprocal outside its set.
    """
    point = [float(v) for v in x]
    out = np.full(len(chain.levels), -math.inf)
    for k, level in enumerate(chain.levels):
        try:
            out[k] = float(level.psi(point))
        except DomainError:
            break
        if not out[k] > 0:
            break
    return out


def _check_interior(chain: Chain, point: List[float]) -> None:
    # the top level is checked by the caller from its jet
    for k, level in enumerate(chain.levels[:-1]):
        try:
            value = float(level.psi(point))
        except DomainError:
            value = 0.0
        if not value > 0:
            raise ChainBoundaryError(chain, k + chain.first_level, value)


def top_constraint_row(chain: Chain, x: Sequence) -> ConstraintRow:
    """
    Extract the top level as an affine row in (u, d).

    Barrier: a_u = -G^T grad B_{r-1}, a_d = 0,
             b = kappa_{r-1} psi_{r-1} - grad B_{r-1} . f - 1/2 tr(hess B_{r-1} Sigma Sigma^T).
    Lyapunov: the same with the V levels and a_d = 1 (V_0 directly when r = 1).

    Raises:
        ChainBoundaryError: if some level value is not positive at x
    """
    point = [float(v) for v in x]
    system = chain.system
    if chain.levels:
        _check_interior(chain, point)
        top = chain.levels[-1]
        try:
            jet = evaluate_jet(top.psi, point)
        except DomainError:
            raise ChainBoundaryError(chain, len(chain.levels) - 1 + chain.first_level, 0.0)
        value = float(jet.value)
        if not value > 0:
            raise ChainBoundaryError(chain, len(chain.levels) - 1 + chain.first_level, value)
        field_jet = reciprocal(jet) * top.gain
        value_term = top.alpha(value)
    else:
        field_jet = evaluate_jet(chain.base, point)
        value_term = 0.0

    grad = np.zeros(system.n_x)
    for i, g in field_jet.grad.items():
        grad[i] = float(g)
    G = system.actuation_array(np.asarray(point))
    a_u = -(G.T @ grad)
    b = value_term - float(_generator_from_jet(field_jet, point, system))
    a_d = 1.0 if chain.kind is ChainKind.LYAPUNOV else 0.0
    return ConstraintRow(a_u=a_u, a_d=a_d, b=float(b))

"""
Forward-mode differentiation with nested second-order jets.
Provides exact gradients and Hessians of scalar fields over the state, and a
central finite-difference oracle used by the tests and the self-check suite.
"""

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class DomainError(ArithmeticError):
    """Raised when a field is evaluated outside its domain (e.g. 1/0)."""


class Jet2:
    """
    Truncated second-order Taylor expansion of a scalar.

    The gradient and Hessian are stored sparsely: ``grad`` maps a variable
    index to its partial derivative and ``hess`` maps ``(i, j)`` with
    ``i <= j`` to the mixed partial. Entries are generic scalars, so a Jet2
    whose entries are themselves Jet2 objects carries higher derivatives.

    Every jet carries a ``tag`` naming the differentiation level that created
    it. Arithmetic between jets of different tags treats the lower-tagged
    operand as a constant, which keeps nested levels from mixing up their
    variables.
    """

    __slots__ = ("value", "grad", "hess", "tag")
    # let numpy scalars on the left defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, grad=None, hess=None, tag: int = 0):
        self.value = value
        self.grad = grad if grad is not None else {}
        self.hess = hess if hess is not None else {}
        self.tag = tag

    def __repr__(self):
        return f"Jet2(value={self.value!r}, grad={self.grad!r}, hess={self.hess!r}, tag={self.tag})"

    # ---------- scaling / shifting by constants ----------
    def _scaled(self, c) -> "Jet2":
        return Jet2(
            self.value * c,
            {i: g * c for i, g in self.grad.items()},
            {k: h * c for k, h in self.hess.items()},
            self.tag,
        )

    def _shifted(self, c) -> "Jet2":
        return Jet2(self.value + c, self.grad, self.hess, self.tag)

    # ---------- arithmetic ----------
    def __add__(self, other):
        if isinstance(other, Jet2):
            if other.tag == self.tag:
                return Jet2(
                    self.value + other.value,
                    _merge(self.grad, other.grad),
                    _merge(self.hess, other.hess),
                    self.tag,
                )
            if other.tag > self.tag:
                return other._shifted(self)
        return self._shifted(other)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(
            -self.value,
            {i: -g for i, g in self.grad.items()},
            {k: -h for k, h in self.hess.items()},
            self.tag,
        )

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet2):
            if other.tag == self.tag:
                return _product(self, other)
            if other.tag > self.tag:
                return other._scaled(self)
        return self._scaled(other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, power):
        if isinstance(power, int) and power >= 0:
            result = 1.0
            base = self
            while power:
                if power & 1:
                    result = base * result
                base = base * base
                power >>= 1
            return result
        v = self.value
        return _compose(
            self,
            v ** power,
            power * v ** (power - 1),
            power * (power - 1) * v ** (power - 2),
        )


def _merge(p: dict, q: dict) -> dict:
    out = dict(p)
    for k, v in q.items():
        if k in out:
            out[k] = out[k] + v
        else:
            out[k] = v
    return out


def _product(a: Jet2, b: Jet2) -> Jet2:
    av, bv = a.value, b.value
    grad = {i: g * bv for i, g in a.grad.items()}
    for i, g in b.grad.items():
        term = av * g
        grad[i] = grad[i] + term if i in grad else term

    hess = {k: h * bv for k, h in a.hess.items()}
    for k, h in b.hess.items():
        term = av * h
        hess[k] = hess[k] + term if k in hess else term
    for i, gi in a.grad.items():
        for j, gj in b.grad.items():
            if i == j:
                key, term = (i, i), 2 * (gi * gj)
            else:
                key, term = ((i, j) if i < j else (j, i)), gi * gj
            hess[key] = hess[key] + term if key in hess else term
    return Jet2(av * bv, grad, hess, a.tag)


def _compose(u: Jet2, f0, f1, f2) -> Jet2:
    """Apply a scalar function with derivatives (f0, f1, f2) at u.value to u."""
    grad = {i: f1 * g for i, g in u.grad.items()}
    hess = {k: f1 * h for k, h in u.hess.items()}
    items = list(u.grad.items())
    for a, (i, gi) in enumerate(items):
        for j, gj in items[a:]:
            key = (i, j) if i <= j else (j, i)
            term = f2 * (gi * gj)
            hess[key] = hess[key] + term if key in hess else term
    return Jet2(f0, grad, hess, u.tag)


# ---------- elementary functions over generic scalars ----------

def reciprocal(x):
    """1/x for plain reals and jets; raises DomainError at exactly zero."""
    if isinstance(x, Jet2):
        r = reciprocal(x.value)
        r2 = r * r
        return _compose(x, r, -r2, 2 * (r2 * r))
    if x == 0:
        raise DomainError("reciprocal evaluated at zero")
    return 1.0 / x


def sin(x):
    if isinstance(x, Jet2):
        s, c = sin(x.value), cos(x.value)
        return _compose(x, s, c, -s)
    return math.sin(x)


def cos(x):
    if isinstance(x, Jet2):
        s, c = sin(x.value), cos(x.value)
        return _compose(x, c, -s, -c)
    return math.cos(x)


def exp(x):
    if isinstance(x, Jet2):
        e = exp(x.value)
        return _compose(x, e, e, e)
    return math.exp(x)


def sqrt(x):
    if isinstance(x, Jet2):
        r = sqrt(x.value)
        inv = reciprocal(r)
        return _compose(x, r, 0.5 * inv, -0.25 * inv * inv * inv)
    if x < 0:
        raise DomainError(f"sqrt of negative value {x}")
    return math.sqrt(x)


def tag_of(x) -> int:
    return x.tag if isinstance(x, Jet2) else -1


def primal(x) -> float:
    """Innermost real value of a (possibly nested) jet."""
    while isinstance(x, Jet2):
        x = x.value
    return float(x)


# ---------- fields ----------

@dataclass(frozen=True)
class ScalarField:
    """A scalar function of the state that accepts generic scalars."""
    arity: int
    fn: Callable[[Sequence], object]
    name: str = "field"

    def __call__(self, x):
        return self.fn(x)


def evaluate_jet(field: Callable, x: Sequence) -> Jet2:
    """
    Evaluate a field on seeded jets one level above the entries of x.

    Args:
        field: Scalar field (any callable over a sequence of generic scalars)
        x: Point, plain reals or jets

    Returns:
        Jet2 holding the value, gradient and Hessian at x
    """
    tag = 1 + max((tag_of(xi) for xi in x), default=-1)
    seeds = [
        Jet2(xi if isinstance(xi, Jet2) else float(xi), {j: 1.0}, {}, tag)
        for j, xi in enumerate(x)
    ]
    out = field(seeds)
    if not (isinstance(out, Jet2) and out.tag == tag):
        out = Jet2(out, {}, {}, tag)
    return out


def _is_plain(x) -> bool:
    return all(not isinstance(xi, Jet2) for xi in x)


def gradient(field: Callable, x: Sequence) -> np.ndarray:
    """
    Exact gradient of a scalar field.

    Args:
        field: Scalar field
        x: State vector (plain reals or jets for nested differentiation)

    Returns:
        Gradient; a float array for plain input, an object array otherwise
    """
    n = len(x)
    jet = evaluate_jet(field, x)
    entries = [jet.grad.get(j, 0.0) for j in range(n)]
    if _is_plain(x):
        return np.array([float(e) for e in entries])
    return np.array(entries, dtype=object)


def hessian(field: Callable, x: Sequence) -> np.ndarray:
    """Exact Hessian of a scalar field; symmetric by construction."""
    n = len(x)
    jet = evaluate_jet(field, x)
    plain = _is_plain(x)
    out = np.zeros((n, n)) if plain else np.full((n, n), 0.0, dtype=object)
    for (i, j), h in jet.hess.items():
        h = float(h) if plain else h
        out[i, j] = h
        out[j, i] = h
    return out


# ---------- finite-difference oracle ----------

def _steps(x: np.ndarray, step: float) -> np.ndarray:
    return step * (1.0 + np.abs(x))


def fd_gradient(field: Callable, x: Sequence, step: float = 1e-6) -> np.ndarray:
    """
    Central-difference gradient.

    The step for coordinate j is ``step * (1 + |x_j|)``.
    """
    x = np.asarray(x, dtype=float)
    h = _steps(x, step)
    out = np.zeros(len(x))
    for j in range(len(x)):
        e = np.zeros(len(x))
        e[j] = h[j]
        out[j] = (float(field(list(x + e))) - float(field(list(x - e)))) / (2 * h[j])
    return out


def fd_hessian(field: Callable, x: Sequence, step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian, symmetrised."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    h = _steps(x, step)
    out = np.zeros((n, n))

    def f(point):
        return float(field(list(point)))

    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        for j in range(i, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            value = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
            out[i, j] = value
            out[j, i] = value
    return out

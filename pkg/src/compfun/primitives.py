"""Closed registry of scalar node primitives with exact partial derivatives.

Every non-input node of a compositional function evaluates one entry of this
registry.  Each entry knows how many inputs it accepts for a given parameter
vector, how to evaluate on a batch of points, and how to produce any mixed
partial derivative exactly.  Keeping the registry closed is what makes Sobolev
norms and serialization well defined.

Parameter conventions (``z`` is the node's ordered input vector):

=============  ===========================  ==================================
name           params                       value
=============  ===========================  ==================================
``affine``     ``(w_1, ..., w_k, b)``       ``w . z + b``
``product``    ``()`` or ``(c,)``           ``c * z_1 * z_2``
``power``      ``(n,)`` or ``(n, c)``       ``c * z_1 ** n`` (integer n >= 0)
``sin``        ``()``                       ``sin(z_1)``
``cos``        ``()``                       ``cos(z_1)``
``exp``        ``()``                       ``exp(z_1)``
``tanh``       ``()``                       ``tanh(z_1)``
``sigmoid``    ``()``                       ``1 / (1 + exp(-z_1))``
``reciprocal`` ``()`` or ``(s,)``           ``1 / (z_1 + s)``
``quotient``   ``()`` or ``(c, s)``         ``c * z_1 / (z_2 + s)``
``dot``        ``()``                       ``sum_k z_k z_{k+p}`` with 2p inputs
=============  ===========================  ==================================

Neuron nodes use an activation name from :data:`ACTIVATIONS` as their
primitive and carry ``(w_1, ..., w_k, b)`` so that they compute
``sigma(w . z + b)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

__all__ = [
    "ACTIVATIONS",
    "Primitive",
    "REGISTRY",
    "UnknownPrimitiveError",
    "activation",
    "activation_derivative",
    "get",
]


class UnknownPrimitiveError(KeyError):
    """Raised when a primitive name is not in the closed registry."""


# ---------------------------------------------------------------------------
# scalar activations and their derivatives of arbitrary order


@lru_cache(maxsize=None)
def _tanh_poly(n: int) -> Polynomial:
    # d/dt tanh = 1 - tanh^2, so the n-th derivative is a polynomial in tanh(t)
    if n == 0:
        return Polynomial([0.0, 1.0])
    prev = _tanh_poly(n - 1)
    return prev.deriv() * Polynomial([1.0, 0.0, -1.0])


@lru_cache(maxsize=None)
def _sigmoid_poly(n: int) -> Polynomial:
    if n == 0:
        return Polynomial([0.0, 1.0])
    prev = _sigmoid_poly(n - 1)
    return prev.deriv() * Polynomial([0.0, 1.0, -1.0])


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
    "sigmoid": _sigmoid,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
}


def activation(name: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise UnknownPrimitiveError(f"unknown activation {name!r}") from None


def activation_derivative(name: str, order: int, t: np.ndarray) -> np.ndarray:
    """Return the ``order``-th derivative of a registered activation at ``t``."""
    t = np.asarray(t, dtype=float)
    if name == "sin":
        return np.sin(t + order * np.pi / 2)
    if name == "cos":
        return np.cos(t + order * np.pi / 2)
    if name == "exp":
        return np.exp(t)
    if name == "tanh":
        return _tanh_poly(order)(np.tanh(t))
    if name == "sigmoid":
        return _sigmoid_poly(order)(_sigmoid(t))
    raise UnknownPrimitiveError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------------
# registry entries


@dataclass(frozen=True)
class Primitive:
    """One registry entry.

    ``arity(params)`` returns the required number of inputs, ``fn(params, Z)``
    evaluates on a batch ``Z`` of shape ``(N, k)`` and ``deriv(params, k, Z)``
    returns the mixed partial selected by the multi-index ``k``.
    """

    name: str
    arity: Callable[[tuple], int]
    fn: Callable[[tuple, np.ndarray], np.ndarray]
    deriv: Callable[[tuple, tuple, np.ndarray], np.ndarray]
    affine: bool = False


def _zeros(Z):
    return np.zeros(Z.shape[0])


def _ones(Z):
    return np.ones(Z.shape[0])


# affine ---------------------------------------------------------------------


def _affine_arity(p):
    if len(p) < 1:
        raise ValueError("affine needs at least the bias parameter")
    return len(p) - 1


def _affine_fn(p, Z):
    w = np.asarray(p[:-1], dtype=float)
    if w.size == 0:
        return np.full(Z.shape[0], float(p[-1]))
    return Z @ w + p[-1]


def _affine_deriv(p, k, Z):
    order = sum(k)
    if order == 0:
        return _affine_fn(p, Z)
    if order == 1:
        return np.full(Z.shape[0], float(p[k.index(1)]))
    return _zeros(Z)


# product ---------------------------------------------------------------------


def _product_scale(p):
    return float(p[0]) if p else 1.0


def _product_fn(p, Z):
    return _product_scale(p) * Z[:, 0] * Z[:, 1]


def _product_deriv(p, k, Z):
    c = _product_scale(p)
    a, b = k
    if a > 1 or b > 1:
        return _zeros(Z)
    x = Z[:, 0] if a == 0 else _ones(Z)
    z = Z[:, 1] if b == 0 else _ones(Z)
    return c * x * z


# power -----------------------------------------------------------------------


def _power_parts(p):
    n = int(p[0])
    if n != p[0] or n < 0:
        raise ValueError("power exponent must be a nonnegative integer")
    c = float(p[1]) if len(p) > 1 else 1.0
    return n, c


def _power_arity(p):
    if len(p) not in (1, 2):
        raise ValueError("power takes (n,) or (n, c)")
    _power_parts(p)
    return 1


def _power_fn(p, Z):
    n, c = _power_parts(p)
    return c * Z[:, 0] ** n


def _power_deriv(p, k, Z):
    n, c = _power_parts(p)
    j = k[0]
    if j > n:
        return _zeros(Z)
    coef = factorial(n) / factorial(n - j)
    return c * coef * Z[:, 0] ** (n - j)


# unary activations as general nodes -------------------------------------------


def _unary_entry(name):
    f = ACTIVATIONS[name]

    def fn(p, Z):
        return f(Z[:, 0])

    def deriv(p, k, Z):
        return activation_derivative(name, k[0], Z[:, 0])

    def arity(p):
        if p:
            raise ValueError(f"{name} takes no parameters")
        return 1

    return Primitive(name, arity, fn, deriv)


# reciprocal ------------------------------------------------------------------


def _shift(p, i=0):
    return float(p[i]) if len(p) > i else 0.0


def _reciprocal_arity(p):
    if len(p) > 1:
        raise ValueError("reciprocal takes () or (shift,)")
    return 1


def _reciprocal_fn(p, Z):
    return 1.0 / (Z[:, 0] + _shift(p))


def _reciprocal_deriv(p, k, Z):
    j = k[0]
    return (-1.0) ** j * factorial(j) * (Z[:, 0] + _shift(p)) ** (-(j + 1))


# quotient --------------------------------------------------------------------


def _quotient_parts(p):
    if len(p) == 0:
        return 1.0, 0.0
    if len(p) == 2:
        return float(p[0]), float(p[1])
    raise ValueError("quotient takes () or (scale, shift)")


def _quotient_arity(p):
    _quotient_parts(p)
    return 2


def _quotient_fn(p, Z):
    c, s = _quotient_parts(p)
    return c * Z[:, 0] / (Z[:, 1] + s)


def _quotient_deriv(p, k, Z):
    c, s = _quotient_parts(p)
    a, b = k
    if a > 1:
        return _zeros(Z)
    num = Z[:, 0] if a == 0 else _ones(Z)
    den = (-1.0) ** b * factorial(b) * (Z[:, 1] + s) ** (-(b + 1))
    return c * num * den


# dot ---------------------------------------------------------------------------


def _dot_arity(p):
    if p:
        raise ValueError("dot takes no parameters; arity comes from the inputs")
    return -2  # any even number of inputs


def _dot_fn(p, Z):
    half = Z.shape[1] // 2
    return np.sum(Z[:, :half] * Z[:, half:], axis=1)


def _dot_deriv(p, k, Z):
    half = len(k) // 2
    order = sum(k)
    if order == 0:
        return _dot_fn(p, Z)
    if order > 2 or max(k) > 1:
        return _zeros(Z)
    hot = [i for i, v in enumerate(k) if v]
    if order == 1:
        i = hot[0]
        partner = i + half if i < half else i - half
        return Z[:, partner].copy()
    i, j = hot
    return _ones(Z) if j - i == half else _zeros(Z)


REGISTRY: dict[str, Primitive] = {
    "affine": Primitive("affine", _affine_arity, _affine_fn, _affine_deriv, affine=True),
    "product": Primitive("product", lambda p: 2, _product_fn, _product_deriv),
    "power": Primitive("power", _power_arity, _power_fn, _power_deriv),
    "reciprocal": Primitive("reciprocal", _reciprocal_arity, _reciprocal_fn, _reciprocal_deriv),
    "quotient": Primitive("quotient", _quotient_arity, _quotient_fn, _quotient_deriv),
    "dot": Primitive("dot", _dot_arity, _dot_fn, _dot_deriv),
}
for _name in ACTIVATIONS:
    REGISTRY[_name] = _unary_entry(_name)


def get(name: str) -> Primitive:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownPrimitiveError(f"unknown primitive {name!r}") from None


def check_arity(name: str, params: Sequence[float], n_inputs: int) -> None:
    """Raise ``ValueError`` if ``n_inputs`` does not fit the primitive."""
    want = get(name).arity(tuple(params))
    if want == -2:
        if n_inputs == 0 or n_inputs % 2:
            raise ValueError(f"{name} needs a positive even number of inputs, got {n_inputs}")
    elif want != n_inputs:
        raise ValueError(f"{name} with params {tuple(params)} needs {want} inputs, got {n_inputs}")


# neurons ------------------------------------------------------------------------


def neuron_fn(act: str, params: Sequence[float], Z: np.ndarray) -> np.ndarray:
    w = np.asarray(params[:-1], dtype=float)
    return activation(act)(Z @ w + params[-1])


def neuron_deriv(act: str, params: Sequence[float], k: tuple, Z: np.ndarray) -> np.ndarray:
    w = np.asarray(params[:-1], dtype=float)
    scale = float(np.prod(w ** np.asarray(k)))
    return scale * activation_derivative(act, sum(k), Z @ w + params[-1])


def multi_indices(d: int, order: int) -> list[tuple[int, ...]]:
    """All multi-indices of length ``d`` with entries summing to ``order``."""
    if d == 0:
        return [()] if order == 0 else []
    if d == 1:
        return [(order,)]
    out = []
    for first in range(order, -1, -1):
        for rest in multi_indices(d - 1, order - first):
            out.append((first,) + rest)
    return out


def central_difference(fn: Callable[[np.ndarray], np.ndarray], k: tuple, Z: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Tensor-product central difference approximation of the ``k`` partial.

    ``h`` holds one step per axis.  Uses the symmetric stencil
    ``sum_j (-1)^j C(n, j) f(x + (n/2 - j) h)`` along each differentiated axis.
    """
    stencils = []
    for axis, n in enumerate(k):
        if n == 0:
            continue
        stencils.append([(axis, (n / 2 - j) * h[axis], (-1) ** j * comb(n, j) / h[axis] ** n) for j in range(n + 1)])
    total = np.zeros(Z.shape[0])

    def rec(level, shift, weight):
        nonlocal total
        if level == len(stencils):
            total = total + weight * fn(Z + shift)
            return
        for axis, offset, w in stencils[level]:
            s = shift.copy()
            s[axis] += offset
            rec(level + 1, s, weight * w)

    rec(0, np.zeros(Z.shape[1]), 1.0)
    return total

"""Euler-step operators, unrolled flow maps and flow-surrogate bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .algebra import RANGE_MARGIN, check_iterates, compose_power, is_neural_network, output_ranges
from .dag import CompositionalFunction, Node, _fresh_id
from .errors import ShapeError, UnsupportedError
from .features import Features
from .sampling import box_points

__all__ = [
    "FlowIterator",
    "Thm4Bound",
    "elr_lipschitz",
    "euler_flow",
    "euler_step",
    "exact_flow",
    "flow_net",
    "jacobian_norm",
    "make_lorenz96",
    "sup_norm",
    "thm4_bound",
]

MAX_UNROLLED_NODES = 10**6


def make_lorenz96(d: int = 4, F: float = 8.0, R: float = 1.0, m: int = 2) -> CompositionalFunction:
    """Lorenz-96 right-hand side ``x_{i-1}(x_{i+1} - x_{i-2}) - x_i + F``.

    Layer 1 holds the linear differences, layer 2 the product nodes on
    ``[-2R, 2R]^2`` and layer 3 the linear outputs.  Indices are cyclic.
    """
    if d < 4:
        raise ValueError("Lorenz-96 needs d >= 4 so that the cyclic neighbours are distinct")
    x = [f"x{i}" for i in range(1, d + 1)]

    def at(i):  # 1-based cyclic index
        return x[(i - 1) % d]

    nodes = [Node(xi, "input", R=R) for xi in x]
    for i in range(1, d + 1):
        nodes.append(Node(f"s{i}", "linear", "affine", (1.0, -1.0, 0.0), 1, (at(i + 1), at(i - 2)), R, 1))
    for i in range(1, d + 1):
        nodes.append(Node(f"p{i}", "general", "product", (), 2, (at(i - 1), f"s{i}"), 2 * R, m))
    for i in range(1, d + 1):
        nodes.append(Node(f"f{i}", "linear", "affine", (-1.0, 1.0, F), 3, (at(i), f"p{i}"), max(R, 2 * R * R), 1))
    return CompositionalFunction(tuple(nodes))


def lorenz96_rhs(X: np.ndarray, F: float = 8.0) -> np.ndarray:
    """Direct vectorized Lorenz-96 right-hand side, used as an oracle."""
    X = np.atleast_2d(X)
    return (np.roll(X, -1, axis=1) - np.roll(X, 2, axis=1)) * np.roll(X, 1, axis=1) - X + F


# ---------------------------------------------------------------------------
# Euler operator and flows


def euler_step(f: CompositionalFunction, h: float, samples: int = 2048) -> CompositionalFunction:
    """Induced DAG of ``x -> x + h f(x)`` with one linear output per coordinate."""
    if f.d != f.q:
        raise ShapeError(f"Euler step needs a map R^d -> R^d, got d={f.d}, q={f.q}")
    if not h > 0:
        raise ValueError("step size must be positive")
    r = output_ranges(f, samples)
    taken = set(f._index)
    nodes = list(f.nodes)
    layer = f.l_max + 1
    for k, (xin, fk) in enumerate(zip(f.input_nodes, f.output_ids)):
        nid = _fresh_id(f"e{k + 1}", taken)
        taken.add(nid)
        R = max(xin.R, RANGE_MARGIN * r[k] + 1e-9)
        nodes.append(Node(nid, "linear", "affine", (1.0, h, 0.0), layer, (xin.id, fk), R, 1))
    return CompositionalFunction(tuple(nodes))


def _with_input_radius(f: CompositionalFunction, radius) -> CompositionalFunction:
    radii = np.broadcast_to(np.asarray(radius, dtype=float), (f.d,))
    if np.any(radii > f.input_radii * (1 + 1e-12)):
        raise ShapeError("initial-state box must lie inside the domain")
    it = iter(radii)
    return CompositionalFunction(tuple(n.with_(R=float(next(it))) if n.is_input else n for n in f.nodes))


@dataclass(eq=False)
class FlowIterator:
    """Lazy ``K``-fold composition of a step map, evaluated by iteration.

    Used when unrolling would exceed the node budget.  Supports evaluation
    and the counting queries used in experiments, not graph algebra.
    """

    step: CompositionalFunction
    K: int
    head: CompositionalFunction

    @property
    def d(self) -> int:
        return self.head.d

    @property
    def q(self) -> int:
        return self.step.q

    @property
    def input_radii(self) -> np.ndarray:
        return self.head.input_radii

    @property
    def neuron_count(self) -> int:
        return self.K * self.step.neuron_count

    @property
    def node_count(self) -> int:
        return len(self.head) + (self.K - 1) * (len(self.step) - self.step.d)

    @property
    def l_max(self) -> int:
        return self.K * self.step.l_max

    def evaluate(self, x, check_domains: bool = True, overrides=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        X = self.head.evaluate(X, check_domains=check_domains)
        for _ in range(self.K - 1):
            X = self.step.evaluate(X, check_domains=check_domains)
        return X[0] if single else X

    __call__ = evaluate


def euler_flow(
    f: CompositionalFunction,
    T: float,
    K: int,
    x_radius=None,
    check: bool = True,
    samples: int = 1024,
    max_nodes: int = MAX_UNROLLED_NODES,
):
    """``K`` Euler steps of size ``T / K`` as one compositional function.

    ``x_radius`` restricts the initial states to a smaller box (the set whose
    trajectories stay in the domain).  Sampled initial states are iterated
    and the first iterate leaving the domain raises
    :class:`~compfun.errors.DomainEscapeError`.  Above ``max_nodes`` unrolled
    nodes a :class:`FlowIterator` is returned instead.
    """
    if K < 1 or not T > 0:
        raise ValueError("need K >= 1 and T > 0")
    step = euler_step(f, T / K)
    head = step if x_radius is None else _with_input_radius(step, x_radius)
    if K * len(step) > max_nodes:
        if check:
            check_iterates(step, K, head, samples=samples)
        return FlowIterator(step, K, head)
    return compose_power(step, K, first=head, check_escape=check, samples=samples)


def flow_net(fNN: CompositionalFunction, T: float, K: int, x_radius=None, check: bool = True, samples: int = 1024, max_nodes: int = MAX_UNROLLED_NODES):
    """The deep network ``(ELR^NN)^K`` built from a network right-hand side."""
    if not is_neural_network(fNN) and any(n.kind == "general" for n in fNN.nodes):
        raise UnsupportedError("flow_net expects a network right-hand side (no general nodes)")
    return euler_flow(fNN, T, K, x_radius, check, samples, max_nodes)


def exact_flow(rhs, T: float, X0: np.ndarray, rtol: float = 1e-11, atol: float = 1e-12) -> np.ndarray:
    """Reference flow ``phi(T; x0)`` for a batch of initial states.

    ``rhs`` maps an ``(N, d)`` array to an ``(N, d)`` array.  All states are
    integrated as one system with an adaptive Runge-Kutta method.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    N, d = X0.shape

    def fun(t, y):
        return np.asarray(rhs(y.reshape(N, d)), dtype=float).ravel()

    sol = solve_ivp(fun, (0.0, T), X0.ravel(), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[:, -1].reshape(N, d)


# ---------------------------------------------------------------------------
# constants for the flow bound


def _fn(f):
    if isinstance(f, CompositionalFunction):
        return lambda X: f.evaluate(X, check_domains=False)
    return f


def sup_norm(f, radii, p=np.inf, samples: int = 8192, seed: int = 0) -> float:
    """Sampled ``max |f(x)|_p`` over the box with half-widths ``radii``."""
    X = box_points(radii, samples, seed=seed)
    return float(np.max(np.linalg.norm(_fn(f)(X), ord=p, axis=1)))


def _jacobians(f, X: np.ndarray, h: float) -> np.ndarray:
    fn = _fn(f)
    N, d = X.shape
    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        cols.append((fn(X + e) - fn(X - e)) / (2 * h))
    return np.stack(cols, axis=2)  # (N, q, d)


def jacobian_norm(f, radii, p=np.inf, samples: int = 4096, seed: int = 0, h: float = 1e-6) -> float:
    """Sampled ``max |df/dx|_p`` (induced matrix norm) via central differences."""
    X = box_points(radii, samples, seed=seed)
    J = _jacobians(f, X, h)
    return float(np.max(np.linalg.norm(J, ord=p, axis=(1, 2))))


def elr_lipschitz(f, h: float, radii, p=np.inf, samples: int = 4096, seed: int = 0, margin: float = 0.05) -> float:
    """Sampled Lipschitz constant of ``x -> x + h f(x)`` with a safety margin.

    Uses ``max |I + h J(x)|_p`` plus ``margin * h * max |J(x)|_p``, so the
    margin scales with the step and the matching ``alpha = (L - 1) / h`` of
    ``1 + h alpha`` stays bounded as ``h -> 0``.
    """
    X = box_points(radii, samples, seed=seed)
    J = _jacobians(f, X, 1e-6)
    M = np.eye(J.shape[1])[None] + h * J
    raw = float(np.max(np.linalg.norm(M, ord=p, axis=(1, 2))))
    return raw + margin * h * float(np.max(np.linalg.norm(J, ord=p, axis=(1, 2))))


@dataclass(frozen=True)
class Thm4Bound:
    bound: float
    C: float
    complexity: float
    K: int


def thm4_bound(features: Features, A: float, B: float, alpha: float, T: float, n_width: int, C1: float = 1.0) -> Thm4Bound:
    """Flow-surrogate bound ``C n^(-1/r)`` and its complexity bound.

    ``C = C1 max(e^(alpha T), 1) T L_max Lambda |V_G| + A e^(B T) T`` and the
    complexity is ``(n^(1/r) + 1) n |V_G|``; ``K`` is the matching default
    number of steps ``ceil(n^(1/r))``.
    """
    if features.empty:
        raise UnsupportedError("features are empty")
    r = features.r_max
    C = C1 * max(math.exp(alpha * T), 1.0) * T * features.L_max * features.Lambda * features.n_general + A * math.exp(B * T) * T
    bound = C * n_width ** (-1.0 / r)
    complexity = (n_width ** (1.0 / r) + 1.0) * n_width * features.n_general
    return Thm4Bound(bound, C, complexity, default_steps(n_width, r))


def default_steps(n_width: int, r_max: float) -> int:
    """``ceil(n^(1/r))`` with a guard against rounding just above an integer."""
    x = n_width ** (1.0 / r_max)
    k = round(x)
    return int(k) if abs(x - k) < 1e-9 * max(1.0, x) else int(math.ceil(x))

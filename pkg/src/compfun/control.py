"""Contraction-map optimal control over exact or network costs.

A cost ``V`` is any callable mapping rows ``(x, u)`` of shape ``(N, d + q)``
to ``N`` values; compositional functions qualify.  The fixed-point map is
``psi(x, u) = u - beta dV/du``; the network version replaces the gradient by
forward differences of an approximate cost.

The zero-order-hold part builds the endpoint map of piecewise-constant
controls, the terminal cost ``J = Psi o Phi``, and the end-to-end pipeline
that substitutes networks into ``J`` before running the solver.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .algebra import compose, compose_power, merge_linear_nodes
from .dag import CompositionalFunction, Node, identity_node
from .errors import ConfigError, ContractionError, ConvexityError, DomainEscapeError, InvarianceError
from .features import extract_features
from .nn import FitConfig, assemble_deep, fit_nodes
from .ode import default_steps
from .sampling import box_points

__all__ = [
    "ControlProblem",
    "HessianBounds",
    "OptimalControlMap",
    "Thm8Config",
    "ZOHProblem",
    "as_cost",
    "check_contraction",
    "contraction_constants",
    "estimate_hessian_bounds",
    "finite_diff_grad",
    "grid_oracle",
    "make_lq_problem",
    "make_quadratic_problem",
    "optimal_h",
    "psi_map",
    "solve_optimal",
    "solver_network",
    "thm7_bound",
    "thm8_pipeline",
    "zoh_cost",
    "zoh_cost_dag",
    "zoh_rollout",
]


def as_cost(V) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a cost so that it maps ``(N, d + q)`` rows to an ``(N,)`` array."""
    if isinstance(V, CompositionalFunction):
        if V.q != 1:
            raise ConfigError("a cost must be scalar valued")
        return lambda Z: V.evaluate(Z, check_domains=False)[:, 0]

    def fn(Z):
        out = np.asarray(V(Z), dtype=float)
        return out.reshape(out.shape[0], -1)[:, 0] if out.ndim > 1 else out

    return fn


def _batch(x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    single = x.ndim == 1 and u.ndim == 1
    X = np.atleast_2d(x)
    U = np.atleast_2d(u)
    if X.shape[0] == 1 and U.shape[0] > 1:
        X = np.repeat(X, U.shape[0], axis=0)
    if U.shape[0] == 1 and X.shape[0] > 1:
        U = np.repeat(U, X.shape[0], axis=0)
    return X, U, single


@dataclass
class ControlProblem:
    """Minimize ``V(x, u)`` over ``u`` for each ``x`` in the box ``D``.

    ``gamma`` bounds ``|u*(x) - u0|``; iterates must stay in the ball of
    radius ``2 gamma`` around ``u0``.  ``grad_u`` optionally gives the exact
    gradient for oracle paths and ``u_star`` the exact minimizer.
    """

    cost: object
    d: int
    q: int
    u0: np.ndarray
    gamma: float
    x_radius: object = 1.0
    lambda_min: float | None = None
    lambda_max: float | None = None
    grad_u: Callable | None = None
    u_star: Callable | None = None

    def __post_init__(self):
        self.u0 = np.broadcast_to(np.asarray(self.u0, dtype=float), (self.q,)).copy()
        self.x_radius = np.broadcast_to(np.asarray(self.x_radius, dtype=float), (self.d,)).copy()
        if self.lambda_min is not None and self.lambda_min <= 0:
            raise ConvexityError("lambda_min must be positive")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")

    @property
    def V(self):
        return as_cost(self.cost)

    def sample_x(self, n: int, seed: int = 0) -> np.ndarray:
        return box_points(self.x_radius, n, seed=seed)

    def sample_u(self, n: int, seed: int = 0) -> np.ndarray:
        """Points of the admissible ball ``|u - u0| <= 2 gamma``."""
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((n, self.q))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = 2 * self.gamma * rng.uniform(0, 1, n) ** (1.0 / self.q)
        return self.u0 + g * rad[:, None]


# ---------------------------------------------------------------------------
# gradients, Hessians, constants


def finite_diff_grad(V, x, u, h: float) -> np.ndarray:
    """Forward-difference gradient of ``V`` in ``u``: ``(V(u + h e_j) - V(u)) / h``."""
    if not h > 0:
        raise ValueError("h must be positive")
    V = as_cost(V)
    X, U, single = _batch(x, u)
    N, q = U.shape
    rows = [np.hstack([X, U])]
    for j in range(q):
        Uj = U.copy()
        Uj[:, j] += h
        rows.append(np.hstack([X, Uj]))
    vals = V(np.vstack(rows)).reshape(q + 1, N)
    G = (vals[1:] - vals[0]).T / h
    return G[0] if single else G


def central_grad(V, x, u, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, for oracle comparisons only."""
    V = as_cost(V)
    X, U, single = _batch(x, u)
    N, q = U.shape
    rows = []
    for j in range(q):
        for s in (1.0, -1.0):
            Uj = U.copy()
            Uj[:, j] += s * h
            rows.append(np.hstack([X, Uj]))
    vals = V(np.vstack(rows)).reshape(q, 2, N)
    G = ((vals[:, 0] - vals[:, 1]) / (2 * h)).T
    return G[0] if single else G


def hessian_u(V, x, u, h: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian in ``u``; shape ``(N, q, q)``."""
    V = as_cost(V)
    X, U, _ = _batch(x, u)
    N, q = U.shape
    H = np.zeros((N, q, q))
    for i in range(q):
        for j in range(i, q):
            rows = []
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                Uij = U.copy()
                Uij[:, i] += si * h
                Uij[:, j] += sj * h
                rows.append(np.hstack([X, Uij]))
            v = V(np.vstack(rows)).reshape(4, N)
            H[:, i, j] = H[:, j, i] = (v[0] - v[1] - v[2] + v[3]) / (4 * h * h)
    return H


@dataclass(frozen=True)
class HessianBounds:
    lambda_min: float
    lambda_max: float
    C1: float
    raw_min: float
    raw_max: float
    raw_diag: float
    samples: int


def estimate_hessian_bounds(problem: ControlProblem, n_samples: int = 32, h: float = 1e-4, margin: float = 0.1, seed: int = 0) -> HessianBounds:
    """Sampled Hessian eigenvalue bounds, shrunk/inflated by ``margin``.

    ``C1`` bounds the diagonal second derivatives, used by the bias term of
    forward differences.  At least 20 sample pairs are always used.
    """
    n = max(int(n_samples), 20)
    X = problem.sample_x(n, seed=seed)[:n]
    U = problem.sample_u(X.shape[0], seed=seed + 1)
    H = hessian_u(problem.V, X, U, h)
    eig = np.linalg.eigvalsh(H)
    lo, hi = float(eig.min()), float(eig.max())
    diag = float(np.max(np.abs(np.diagonal(H, axis1=1, axis2=2))))
    if lo <= 0:
        raise ConvexityError(f"sampled Hessian has eigenvalue {lo:.3g} <= 0")
    return HessianBounds(lo * (1 - margin), hi * (1 + margin), diag * (1 + margin), lo, hi, diag, X.shape[0])


def contraction_constants(lambda_min: float, lambda_max: float):
    """Default step ``beta = 1 / max(1, 2 lambda_max)`` and its factor ``L``."""
    if lambda_min <= 0 or lambda_max < lambda_min:
        raise ConvexityError("need 0 < lambda_min <= lambda_max")
    s = max(1.0, 2.0 * lambda_max)
    return 1.0 / s, 1.0 - lambda_min / s


def check_contraction(problem: ControlProblem, beta: float, n_samples: int = 32, seed: int = 0, h: float = 1e-4) -> float:
    """Sampled ``max |I - beta H|_2``; raises if it is not below 1."""
    X = problem.sample_x(max(n_samples, 20), seed=seed)
    U = problem.sample_u(X.shape[0], seed=seed + 1)
    H = hessian_u(problem.V, X, U, h)
    M = np.eye(problem.q)[None] - beta * H
    L = float(np.max(np.linalg.norm(M, ord=2, axis=(1, 2))))
    if L >= 1.0:
        raise ContractionError(f"step {beta} gives |I - beta H| = {L:.4g} >= 1")
    return L


def psi_map(V, beta: float, grad: Callable | None = None, h: float = 1e-6):
    """The map ``(x, u) -> u - beta dV/du``.

    ``grad(x, u)`` supplies the exact gradient; otherwise central differences
    with step ``h`` are used.
    """

    def psi(x, u):
        X, U, single = _batch(x, u)
        G = grad(X, U) if grad is not None else central_grad(V, X, U, h)
        out = U - beta * np.asarray(G)
        return out[0] if single else out

    return psi


def thm7_bound(gamma: float, L: float, C1: float, q: int, K: int, h: float, e1: float) -> float:
    """``gamma L^K + C1 sqrt(q) K h + 2 sqrt(q) K e1 / h``."""
    return gamma * L**K + C1 * math.sqrt(q) * K * h + 2.0 * math.sqrt(q) * K * e1 / h


def optimal_h(C1: float, e1: float) -> float:
    """Step minimizing ``C1 h + 2 e1 / h``."""
    return math.sqrt(2.0 * e1 / C1)


# ---------------------------------------------------------------------------
# solver


@dataclass
class OptimalControlMap:
    """``x -> (psi~(x, .))^K (u0)`` for a given cost and step parameters."""

    problem: ControlProblem
    V: object
    K: int
    h: float
    beta: float
    L: float
    exact_gradient: bool = False
    check_invariance: bool = True
    tol: float = 1e-9

    def __call__(self, X, return_history: bool = False):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.repeat(self.problem.u0[None], X.shape[0], axis=0)
        radius = 2 * self.problem.gamma
        V = as_cost(self.V)
        history = [U.copy()]
        for k in range(self.K):
            if self.exact_gradient:
                G = self.problem.grad_u(X, U) if self.problem.grad_u is not None else central_grad(V, X, U)
            else:
                G = finite_diff_grad(V, X, U, self.h)
            U = U - self.beta * G
            if self.check_invariance:
                dist = np.linalg.norm(U - self.problem.u0, axis=1)
                if np.any(dist > radius * (1 + self.tol)):
                    raise InvarianceError(
                        f"iterate {k + 1} left the ball of radius {radius:.4g} (distance {dist.max():.4g}); gamma or the Hessian bounds are wrong"
                    )
            if return_history:
                history.append(U.copy())
        return (U, history) if return_history else U

    @property
    def network_complexity_bound(self) -> int | None:
        if isinstance(self.V, CompositionalFunction):
            return 2 * self.V.neuron_count * self.problem.q * self.K
        return None


def solve_optimal(
    problem: ControlProblem,
    K: int,
    h: float = 1e-4,
    V=None,
    beta: float | None = None,
    exact_gradient: bool = False,
    check: bool = True,
) -> OptimalControlMap:
    """The ``K``-step contraction iteration from ``u0``.

    ``V`` defaults to the problem's exact cost; pass a network cost to get
    the surrogate solver.  ``beta`` defaults to ``1 / max(1, 2 lambda_max)``
    from the problem's (or sampled) Hessian bounds.  A supplied ``beta`` is
    checked for contraction on samples of the exact cost when ``check``.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    lmin, lmax = problem.lambda_min, problem.lambda_max
    if lmin is None or lmax is None:
        hb = estimate_hessian_bounds(problem)
        lmin, lmax = hb.lambda_min, hb.lambda_max
    b0, L = contraction_constants(lmin, lmax)
    if beta is None:
        beta = b0
    elif check:
        L = check_contraction(problem, beta)
    return OptimalControlMap(problem, problem.cost if V is None else V, K, h, beta, L, exact_gradient, True)


def solver_network(V: CompositionalFunction, d: int, q: int, K: int, h: float, beta: float, u0) -> CompositionalFunction:
    """Materialize ``x -> (psi~(x, .))^K (u0)`` as one compositional function.

    Each step holds ``q + 1`` copies of the cost network (the forward
    differences), so the neuron count is ``(q + 1) K n1 <= 2 q K n1``.
    Domains of the shifted copies are not re-certified; evaluate with
    ``check_domains=False``.
    """
    if V.d != d + q or V.q != 1:
        raise ConfigError("cost network must map (x, u) to a scalar")
    u0 = np.broadcast_to(np.asarray(u0, dtype=float), (q,))
    xr = V.input_radii[:d]
    ur = V.input_radii[d:]
    ins = [Node(f"x{i + 1}", "input", R=xr[i]) for i in range(d)] + [Node(f"u{j + 1}", "input", R=ur[j]) for j in range(q)]
    xs = [n.id for n in ins[:d]]
    us = [n.id for n in ins[d:]]
    nodes = list(ins)
    # shifted controls u_j + h feed the j-th difference copy
    for j in range(q):
        nodes.append(Node(f"sh{j + 1}", "linear", "affine", (1.0, h), 1, (us[j],), ur[j] + h, 1))
    copies = []
    for c in range(q + 1):
        feed = xs + [f"sh{j + 1}" if (c == j + 1) else us[j] for j in range(q)]
        mp = dict(zip(V.input_ids, feed))
        for n in V.nodes:
            if not n.is_input:
                mp[n.id] = f"J{c}." + n.id
        for n in V.nodes:
            if not n.is_input:
                nodes.append(n.with_(id=mp[n.id], layer=n.layer + 1, inputs=tuple(mp[s] for s in n.inputs)))
        copies.append(mp[V.output_ids[0]])
    top = V.l_max + 2
    for i in range(d):
        nodes.append(identity_node(f"xo{i + 1}", xs[i], top, xr[i]))
    for j in range(q):
        w = beta / h
        nodes.append(Node(f"uo{j + 1}", "linear", "affine", (1.0, w, -w, 0.0), top, (us[j], copies[0], copies[j + 1]), max(ur[j], 1.0), 1))
    # lift the shifted copies' outputs so every output sits in the last layer
    step = CompositionalFunction(tuple(_lift_to(nodes, top - 1, set(copies))))
    chain = compose_power(step, K, check_escape=False) if K > 0 else None
    init_nodes = [Node(f"x{i + 1}", "input", R=xr[i]) for i in range(d)]
    init_nodes += [identity_node(f"x0{i + 1}", f"x{i + 1}", 1, xr[i]) for i in range(d)]
    init_nodes += [Node(f"u0{j + 1}", "linear", "affine", (0.0, float(u0[j])), 1, ("x1",), max(abs(float(u0[j])), 1e-9), 1) for j in range(q)]
    init = CompositionalFunction(tuple(init_nodes))
    select = [Node(f"x{i + 1}", "input", R=xr[i]) for i in range(d)] + [Node(f"u{j + 1}", "input", R=ur[j]) for j in range(q)]
    select += [identity_node(f"U{j + 1}", f"u{j + 1}", 1, ur[j]) for j in range(q)]
    sel = CompositionalFunction(tuple(select))
    body = compose(chain, init, check_range=False) if chain is not None else init
    return compose(sel, body, check_range=False)


def _lift_to(nodes, layer, ids):
    return [n.with_(layer=layer) if n.id in ids and n.layer < layer else n for n in nodes]


# ---------------------------------------------------------------------------
# zero-order hold


def _dyn(f):
    if isinstance(f, CompositionalFunction):
        return lambda Z: f.evaluate(Z, check_domains=False)
    return f


def _term(Psi):
    if isinstance(Psi, CompositionalFunction):
        return lambda Z: Psi.evaluate(Z, check_domains=False)[:, 0]

    def fn(Z):
        out = np.asarray(Psi(Z), dtype=float)
        return out.reshape(out.shape[0], -1)[:, 0] if out.ndim > 1 else out

    return fn


@dataclass(frozen=True)
class EulerIntegrator:
    """``substeps`` explicit Euler steps per hold interval."""

    substeps: int = 100


def zoh_rollout(f, x, U, dt: float, N_t: int, q: int, integrator=EulerIntegrator(), state_radius=None) -> np.ndarray:
    """Endpoint of piecewise-constant controls ``U = (u_1, ..., u_{N_t})``.

    ``integrator`` is an :class:`EulerIntegrator` or a callable
    ``flow(dt, X, u)`` giving the exact interval map.  With
    ``state_radius`` the state is checked after every interval and a
    :class:`DomainEscapeError` names the first interval that leaves the box.
    """
    X, Ub, single = _batch(x, U)
    if Ub.shape[1] != q * N_t:
        raise ConfigError(f"expected {q * N_t} stacked controls, got {Ub.shape[1]}")
    fn = _dyn(f)
    r = None if state_radius is None else np.broadcast_to(np.asarray(state_radius, dtype=float), (X.shape[1],))

    def check(k):
        if r is not None and np.any(np.abs(X) > r * (1 + 1e-9)):
            raise DomainEscapeError(f"state leaves the domain during interval {k}", index=k)

    for k in range(N_t):
        u = Ub[:, k * q : (k + 1) * q]
        if isinstance(integrator, EulerIntegrator):
            hs = dt / integrator.substeps
            for _ in range(integrator.substeps):
                X = X + hs * fn(np.hstack([X, u]))
                check(k)
        else:
            X = integrator(dt, X, u)
            check(k)
    return X[0] if single else X


def zoh_cost(Psi, f, x, U, dt: float, N_t: int, q: int, integrator=EulerIntegrator(), state_radius=None):
    """``J(x, U) = Psi(Phi(x, U))``."""
    XT = zoh_rollout(f, x, U, dt, N_t, q, integrator, state_radius)
    single = np.asarray(x).ndim == 1 and np.asarray(U).ndim == 1
    out = _term(Psi)(np.atleast_2d(XT))
    return float(out[0]) if single else out


def _stage_dag(f: CompositionalFunction, d: int, q: int, N_t: int, k: int, h: float, u_radius) -> CompositionalFunction:
    """One Euler substep of interval ``k`` acting on ``(x, U)``; ``U`` passes through."""
    xr = f.input_radii[:d]
    ins = [Node(f"x{i + 1}", "input", R=xr[i]) for i in range(d)]
    ins += [Node(f"U{j + 1}", "input", R=u_radius[j]) for j in range(q * N_t)]
    feed = [f"x{i + 1}" for i in range(d)] + [f"U{k * q + j + 1}" for j in range(q)]
    mp = dict(zip(f.input_ids, feed))
    for n in f.nodes:
        if not n.is_input:
            mp[n.id] = "f." + n.id
    body = [n.with_(id=mp[n.id], inputs=tuple(mp[s] for s in n.inputs)) for n in f.nodes if not n.is_input]
    top = f.l_max + 1
    outs = []
    for i, fo in enumerate(f.output_ids):
        R = max(xr[i], f[fo].R)
        outs.append(Node(f"y{i + 1}", "linear", "affine", (1.0, h, 0.0), top, (f"x{i + 1}", mp[fo]), R, 1))
    outs += [identity_node(f"V{j + 1}", f"U{j + 1}", top, u_radius[j]) for j in range(q * N_t)]
    return CompositionalFunction(tuple(ins + body + outs))


def zoh_cost_dag(
    Psi: CompositionalFunction,
    f: CompositionalFunction,
    d: int,
    q: int,
    N_t: int,
    dt: float,
    substeps: int,
    u_radius,
    x0_radius=None,
    check: bool = True,
    samples: int = 512,
):
    """``J(x, U)`` as one compositional function built by composition.

    ``f`` maps ``(x, u)`` to ``dx/dt``; each hold interval contributes
    ``substeps`` Euler stages.  The unused control pass-throughs of the last
    stage are pruned when ``Psi`` is composed on top.
    """
    if f.d != d + q or f.q != d or Psi.d != d or Psi.q != 1:
        raise ConfigError("dynamics must map R^(d+q) to R^d and the terminal cost R^d to R")
    u_radius = np.broadcast_to(np.asarray(u_radius, dtype=float), (q * N_t,))
    h = dt / substeps
    Phi = None
    for k in range(N_t):
        stage = _stage_dag(f, d, q, N_t, k, h, u_radius)
        first = None
        if Phi is None and x0_radius is not None:
            r0 = np.broadcast_to(np.asarray(x0_radius, dtype=float), (d,))
            r0 = np.maximum(r0, 1e-12)
            it = iter(list(r0) + list(u_radius))
            first = CompositionalFunction(tuple(n.with_(R=float(next(it))) if n.is_input else n for n in stage.nodes))
        block = compose_power(stage, substeps, first=first, check_escape=False)
        Phi = block if Phi is None else compose(block, Phi, check_range=False)
    xr = f.input_radii[:d]
    aug = [Node(f"z{i + 1}", "input", R=xr[i]) for i in range(d)] + [Node(f"W{j + 1}", "input", R=u_radius[j]) for j in range(q * N_t)]
    mp = dict(zip(Psi.input_ids, [f"z{i + 1}" for i in range(d)]))
    for n in Psi.nodes:
        if not n.is_input:
            mp[n.id] = "psi." + n.id
    aug += [n.with_(id=mp[n.id], inputs=tuple(mp[s] for s in n.inputs)) for n in Psi.nodes if not n.is_input]
    J = compose(CompositionalFunction(tuple(aug)), Phi, check_range=False)
    if check:
        # certify on samples: the rollout names the first interval that leaves
        # the state box, then every node domain of the built graph is checked
        r0 = xr if x0_radius is None else np.broadcast_to(np.asarray(x0_radius, dtype=float), (d,))
        Z = box_points(np.concatenate([r0, u_radius]), samples, seed=0)
        zoh_rollout(f, Z[:, :d], Z[:, d:], dt, N_t, q, EulerIntegrator(substeps), state_radius=xr)
        J.evaluate(Z, check_domains=True)
    return J


@dataclass
class ZOHProblem:
    """Terminal-cost control of ``dx/dt = f(x, u)`` with held controls.

    ``x_radius`` is the box of initial states (zero half-widths allowed),
    ``u_radius`` the box containing the admissible control ball, and
    ``flow(dt, X, u)`` an optional exact interval map.
    """

    dynamics: CompositionalFunction
    terminal: CompositionalFunction
    d: int
    q: int
    T: float
    N_t: int
    x_radius: np.ndarray
    u0: np.ndarray
    flow: Callable | None = None
    u_star: Callable | None = None
    u_search_radius: float = 2.0
    gamma: float | None = None

    def __post_init__(self):
        if self.T / self.N_t > 2.0:
            raise ConfigError("hold intervals longer than 2 are not supported")
        self.x_radius = np.broadcast_to(np.asarray(self.x_radius, dtype=float), (self.d,)).copy()
        self.u0 = np.broadcast_to(np.asarray(self.u0, dtype=float), (self.q * self.N_t,)).copy()

    @property
    def dt(self) -> float:
        return self.T / self.N_t

    @property
    def n_controls(self) -> int:
        return self.q * self.N_t

    def exact_cost(self, reference_substeps: int = 2000):
        integ = self.flow if self.flow is not None else EulerIntegrator(reference_substeps)

        def J(Z):
            Z = np.atleast_2d(Z)
            return zoh_cost(self.terminal, self.dynamics, Z[:, : self.d], Z[:, self.d :], self.dt, self.N_t, self.q, integ)

        return J

    def control_problem(self, gamma: float) -> ControlProblem:
        return ControlProblem(self.exact_cost(), self.d, self.n_controls, self.u0, gamma, self.x_radius, u_star=self.u_star)


def grid_oracle(J, X: np.ndarray, center, radius: float, n: int = 200) -> np.ndarray:
    """Brute-force minimizer of ``J(x, .)`` on an ``n``-per-axis grid.

    Feasible for up to two control variables.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    m = center.size
    if m > 2:
        raise ConfigError("grid oracle supports at most two controls")
    axes = [np.linspace(c - radius, c + radius, n) for c in center]
    G = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=-1)
    X = np.atleast_2d(X)
    out = np.empty((X.shape[0], m))
    for i, x in enumerate(X):
        vals = J(np.hstack([np.repeat(x[None], G.shape[0], axis=0), G]))
        out[i] = G[int(np.argmin(vals))]
    return out


@dataclass(frozen=True)
class Thm8Config:
    """Knobs of the end-to-end pipeline; the ``c*_scale`` factors multiply
    the schedule constants."""

    widths: tuple = (16, 32, 64)
    fit: FitConfig = field(default_factory=FitConfig)
    max_substeps: int = 64
    c1_scale: float = 1.0
    c2_scale: float = 1.0
    c3_scale: float = 1.0
    gamma_factor: float = 1.25
    hessian_samples: int = 24
    e1_samples: int = 2000
    x_samples: int = 32
    oracle_grid: int = 200
    seed: int = 0


def _schedule(gamma, L, C1, eps, nq, cfg: Thm8Config):
    Cb1 = cfg.c1_scale * gamma / math.log(1.0 / L)
    Cb2 = cfg.c2_scale / (C1 * Cb1)
    Cb3 = cfg.c3_scale / (2.0 * C1 * Cb1**2)
    K_raw = Cb1 / eps
    K = max(1, int(math.ceil(K_raw - 1e-9)))
    h = Cb2 * eps**2 / math.sqrt(nq)
    e1 = Cb3 * eps**4 / nq
    return {"Cbar1": Cb1, "Cbar2": Cb2, "Cbar3": Cb3, "K_raw": K_raw, "K": K, "h": h, "e1_target": e1}


def thm8_pipeline(problem: ZOHProblem, eps: float, cfg: Thm8Config = Thm8Config()):
    """Network approximation of ``x -> U*(x)`` with the schedule driven by ``eps``.

    Steps: exact cost; ``gamma`` from a grid oracle; sampled Hessian bounds;
    ``K ~ 1/eps``, ``h ~ eps^2 / sqrt(q N_t)``, ``e1 ~ eps^4 / (q N_t)``;
    widths are increased until the network cost meets ``e1`` (or the width
    list runs out, which is reported as a budget overrun); then the
    contraction solver runs on the network cost.  Returns
    ``(solver_map, report)``.
    """
    t0 = time.time()
    nq = problem.n_controls
    J = problem.exact_cost()
    Xs = box_points(problem.x_radius, cfg.x_samples, seed=cfg.seed + 11)
    U_grid = grid_oracle(J, Xs, problem.u0, problem.u_search_radius, cfg.oracle_grid)
    gamma = problem.gamma
    if gamma is None:
        gamma = cfg.gamma_factor * float(np.max(np.linalg.norm(U_grid - problem.u0, axis=1)))
        gamma = max(gamma, 1e-6)
    cp = problem.control_problem(gamma)
    hb = estimate_hessian_bounds(cp, cfg.hessian_samples, seed=cfg.seed)
    beta, L = contraction_constants(hb.lambda_min, hb.lambda_max)
    sched = _schedule(gamma, L, hb.C1, eps, nq, cfg)
    u_radius = np.abs(problem.u0) + 2 * gamma
    r_f = extract_features(problem.dynamics).r_max
    r_psi = extract_features(problem.terminal).r_max
    Xe = box_points(problem.x_radius, cfg.e1_samples, seed=cfg.seed + 3)
    Zs = np.hstack([Xe, cp.sample_u(Xe.shape[0], seed=cfg.seed + 4)])
    Jex = J(Zs)
    chosen = None
    trials = []
    for n in cfg.widths:
        nets_f, err_f = fit_nodes(problem.dynamics, n, cfg.fit)
        nets_p, err_p = fit_nodes(problem.terminal, n, cfg.fit)
        fNN = merge_linear_nodes(assemble_deep(problem.dynamics, nets_f))
        pNN = merge_linear_nodes(assemble_deep(problem.terminal, nets_p))
        sub = min(default_steps(n, r_f), cfg.max_substeps)
        Jnn = zoh_cost_dag(pNN, fNN, problem.d, problem.q, problem.N_t, problem.dt, sub, u_radius, problem.x_radius)
        Jeu = zoh_cost(problem.terminal, problem.dynamics, Zs[:, : problem.d], Zs[:, problem.d :], problem.dt, problem.N_t, problem.q, EulerIntegrator(sub))
        Jv = Jnn.evaluate(Zs, check_domains=False)[:, 0]
        e1 = float(np.max(np.abs(Jv - Jex)))
        trial = {
            "n_width": n,
            "substeps": sub,
            "e1": e1,
            "e1_fit": float(np.max(np.abs(Jv - Jeu))),
            "e1_euler": float(np.max(np.abs(Jeu - Jex))),
            "neurons": Jnn.neuron_count,
            "nodes": len(Jnn),
        }
        trials.append(trial)
        chosen = (Jnn, trial)
        if e1 <= sched["e1_target"]:
            break
    Jnn, trial = chosen
    budget_exceeded = trial["e1"] > sched["e1_target"]
    solver = OptimalControlMap(cp, Jnn, sched["K"], sched["h"], beta, L)
    report = {
        "eps": eps,
        "gamma": gamma,
        "lambda_min": hb.lambda_min,
        "lambda_max": hb.lambda_max,
        "C1": hb.C1,
        "beta": beta,
        "L": L,
        **sched,
        "n_width": trial["n_width"],
        "substeps": trial["substeps"],
        "e1": trial["e1"],
        "e1_fit": trial["e1_fit"],
        "e1_euler": trial["e1_euler"],
        "e1_target_met": not budget_exceeded,
        "budget_exceeded": budget_exceeded,
        "trials": trials,
        "n1": Jnn.neuron_count,
        "neuron_count": (nq + 1) * sched["K"] * Jnn.neuron_count,
        "complexity_bound": 2 * Jnn.neuron_count * nq * sched["K"],
        "r_max": max(r_f, r_psi),
        "r_f": r_f,
        "scaling_shape": eps ** (-(4 * max(r_f, r_psi) + 1 + 4 * max(r_f, r_psi) / r_f)),
    }
    try:
        U_nn = solver(Xs)
        report["invariance_error"] = None
    except InvarianceError as exc:
        U_nn = None
        report["invariance_error"] = str(exc)
    report["thm7_bound"] = thm7_bound(gamma, L, hb.C1, nq, sched["K"], sched["h"], trial["e1"])
    if U_nn is not None:
        report["measured_error"] = float(np.max(np.linalg.norm(U_nn - U_grid, axis=1)))
        if problem.u_star is not None:
            report["measured_error_closed_form"] = float(np.max(np.linalg.norm(U_nn - problem.u_star(Xs), axis=1)))
            report["oracle_grid_error"] = float(np.max(np.linalg.norm(U_grid - problem.u_star(Xs), axis=1)))
    else:
        report["measured_error"] = float("inf")
    report["pass"] = report["measured_error"] <= 3 * eps
    report["seconds"] = time.time() - t0
    return solver, report


# ---------------------------------------------------------------------------
# linear-quadratic test problem


def make_lq_problem(a: float = -0.5, x_target: float = 1.0, rho: float = 1.0, T: float = 2.0, N_t: int = 2, x_radius: float = 1.0, m: int = 2) -> ZOHProblem:
    """Scalar ``dx/dt = a x + u`` steered toward ``x_target``.

    The control energy ``rho/2 int u^2`` is carried by an accumulator state
    ``c`` with ``dc/dt = rho u^2 / 2`` so the cost stays terminal:
    ``Psi(x, c) = (x - x_target)^2 / 2 + c``.  Initial states are
    ``x in [-x_radius, x_radius]``, ``c = 0``.
    """
    dt = T / N_t
    e_dt = math.exp(a * dt)
    gain = (e_dt - 1.0) / a if a != 0 else dt
    # bounds on the trajectory for the chosen control box
    u_max = 2.0 * 1.25 * 2.0
    xr = max(x_radius, abs(x_target)) + u_max * (T if a >= 0 else min(T, 2.0 / abs(a)))
    cr = 0.5 * rho * u_max**2 * T * 1.25
    ur = u_max
    f_nodes = [
        Node("x", "input", R=xr),
        Node("c", "input", R=cr),
        Node("u", "input", R=ur),
        Node("usq", "general", "power", (2.0, 0.5 * rho), 1, ("u",), ur, m),
        Node("dx", "linear", "affine", (a, 1.0, 0.0), 2, ("x", "u"), xr, 1),
        Node("dc", "linear", "affine", (1.0, 0.0), 2, ("usq",), 0.5 * rho * ur**2, 1),
    ]
    f = CompositionalFunction(tuple(f_nodes))
    sr = xr + abs(x_target)
    psi_nodes = [
        Node("z", "input", R=xr),
        Node("zc", "input", R=cr),
        Node("err", "linear", "affine", (1.0, -x_target), 1, ("z",), xr, 1),
        Node("sq", "general", "power", (2.0, 0.5), 2, ("err",), sr, m),
        Node("J", "linear", "affine", (1.0, 1.0, 0.0), 3, ("sq", "zc"), max(0.5 * sr**2, cr), 1),
    ]
    Psi = CompositionalFunction(tuple(psi_nodes))
    coeffs = np.array([math.exp(a * (T - (k + 1) * dt)) * gain for k in range(N_t)])
    e_T = math.exp(a * T)
    Hm = np.outer(coeffs, coeffs) + rho * dt * np.eye(N_t)
    Hinv_c = np.linalg.solve(Hm, coeffs)

    def flow(dt_, X, u):
        ed = math.exp(a * dt_)
        g = (ed - 1.0) / a if a != 0 else dt_
        x = ed * X[:, 0] + g * u[:, 0]
        c = X[:, 1] + 0.5 * rho * u[:, 0] ** 2 * dt_
        return np.column_stack([x, c])

    def u_star(X):
        X = np.atleast_2d(X)
        return -np.outer(e_T * X[:, 0] - x_target, Hinv_c)

    prob = ZOHProblem(f, Psi, 2, 1, T, N_t, np.array([x_radius, 0.0]), np.zeros(N_t), flow=flow, u_star=u_star, u_search_radius=2.0)
    prob.hessian = Hm
    return prob


def make_quadratic_problem(M, x_radius: float = 1.0, e1: float = 0.0, freq: float = 1000.0):
    """``V = |u - M x|^2 / 2`` with minimizer ``u* = M x``, plus a noisy copy.

    Returns ``(problem, V_noisy)`` where ``V_noisy`` differs from ``V`` by at
    most ``e1`` through a fast oscillation, standing in for a network cost.
    ``gamma`` is the exact maximum of ``|M x|`` over the corners of the box.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    q, d = M.shape

    def V(Z):
        D = Z[:, d:] - Z[:, :d] @ M.T
        return 0.5 * np.sum(D * D, axis=1)

    def grad(X, U):
        return U - X @ M.T

    def V_noisy(Z):
        return V(Z) + e1 * np.sin(freq * (Z[:, d:].sum(axis=1) + 0.37 * Z[:, :d].sum(axis=1)))

    from .sampling import corners

    gamma = float(np.max(np.linalg.norm(corners(np.full(d, x_radius)) @ M.T, axis=1)))
    prob = ControlProblem(V, d, q, np.zeros(q), max(gamma, 1e-12), x_radius, 1.0, 1.0, grad_u=grad, u_star=lambda X: np.atleast_2d(X) @ M.T)
    return prob, V_noisy

"""Shallow-network node fits, deep assembly and product/quotient networks.

Inner weights of every shallow network are frozen by a seeded low-discrepancy
scheme that does not look at the target, so the output coefficients are a
linear function of the target values.  Training happens on ``[-1, 1]^d``;
weights are divided by the node's domain radius afterwards so the network
acts on ``[-R, R]^d``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import primitives as prim
from .algebra import compose, is_neural_network, merge_linear_nodes, output_ranges, stack, substitute_node
from .bounds import thm5_product_lambda, thm5_quotient_lambda
from .dag import CompositionalFunction, Node
from .errors import BoundInvalidError, ConfigError, DivisionSafetyError, MissingNetError, RangeError
from .sampling import box_points, corners, sobol, tensor_grid

__all__ = [
    "FitConfig",
    "OperationNet",
    "ShallowNet",
    "assemble_deep",
    "build_product_net",
    "build_quotient_net",
    "fit_nodes",
    "fit_shallow",
    "fit_with_weights",
    "inner_weights",
    "is_neural_network",
    "measure_sup_error",
    "product_net",
    "quotient_net",
]

SMOOTH_ACTIVATIONS = tuple(prim.ACTIVATIONS)


@dataclass(frozen=True)
class FitConfig:
    """Frozen-feature least-squares fitting plan.

    ``ridge`` is the Tikhonov weight relative to the number of training
    points: the fit minimizes ``|P a - y|^2 + ridge * N * |a|^2``.  It is
    multiplied by 10 while the augmented system's condition number exceeds
    ``cond_limit``.
    """

    activation: str = "tanh"
    seed: int = 0
    bias: float = 1.0
    shared_bias: bool = True
    scale_range: tuple = (0.05, 3.0)
    ridge: float = 1e-16
    cond_limit: float = 1e14
    max_ridge_steps: int = 16
    train_per_axis: int = 65
    train_sobol_log2: int = 14
    measure_factor: int = 4
    restarts: int = 1

    def __post_init__(self):
        if self.activation not in SMOOTH_ACTIVATIONS:
            raise ConfigError(
                f"activation {self.activation!r} is not a registered smooth activation; choose from {SMOOTH_ACTIVATIONS}"
            )
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigError("scale_range must satisfy 0 < low <= high")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")


@dataclass(frozen=True, eq=False)
class ShallowNet:
    """``x -> sum_j a_j sigma(w_j . x + b_j)`` on ``[-R, R]^d``."""

    weights: np.ndarray
    biases: np.ndarray
    coeffs: np.ndarray
    activation: str = "tanh"
    R: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", np.asarray(self.biases, dtype=float).reshape(W.shape[0]))
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).reshape(W.shape[0]))
        prim.activation(self.activation)

    @property
    def width(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    @property
    def sup_error(self) -> float | None:
        return self.meta.get("sup_error")

    def hidden(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return prim.activation(self.activation)(X @ self.weights.T + self.biases)

    def __call__(self, X) -> np.ndarray:
        return self.hidden(X) @ self.coeffs

    def activation_bound(self) -> float:
        if self.activation == "exp":
            return float(np.exp(np.max(np.abs(self.weights).sum(axis=1) * self.R + np.abs(self.biases))))
        return 1.0

    def to_dag(self) -> CompositionalFunction:
        """One hidden layer of neurons and one linear output node."""
        nodes = [Node(f"x{k + 1}", "input", R=self.R) for k in range(self.d)]
        xs = tuple(n.id for n in nodes)
        for j in range(self.width):
            params = tuple(self.weights[j]) + (self.biases[j],)
            nodes.append(Node(f"h{j + 1}", "neuron", self.activation, params, 1, xs, self.R, 2))
        hs = tuple(f"h{j + 1}" for j in range(self.width))
        nodes.append(Node("y", "linear", "affine", tuple(self.coeffs) + (0.0,), 2, hs, self.activation_bound(), 1))
        return CompositionalFunction(tuple(nodes))


# ---------------------------------------------------------------------------
# fitting


def inner_weights(d: int, n: int, cfg: FitConfig, seed: int | None = None):
    """Frozen inner weights and biases on the unit box ``[-1, 1]^d``.

    Directions come from scrambled Sobol points, scales are log-uniform in
    ``cfg.scale_range``.  With ``shared_bias`` every bias equals ``cfg.bias``.
    """
    seed = cfg.seed if seed is None else seed
    pts = sobol(d + 1, n, seed=seed)
    dirs = pts[:, :d]
    norms = np.linalg.norm(dirs, axis=1)
    bad = norms < 1e-12
    dirs[bad] = 1.0
    norms[bad] = np.sqrt(d)
    dirs = dirs / norms[:, None]
    lo, hi = cfg.scale_range
    u = 0.5 * (pts[:, d] + 1.0)
    scales = np.exp(np.log(lo) + u * (np.log(hi) - np.log(lo)))
    W = dirs * scales[:, None]
    if cfg.shared_bias:
        b = np.full(n, cfg.bias)
    else:
        rng = np.random.default_rng(seed)
        b = rng.uniform(-1.0, 1.0, n) * np.maximum(scales, 1.0)
    return W, b


def _train_points(d: int, cfg: FitConfig, seed: int) -> np.ndarray:
    if d <= 2:
        return tensor_grid(np.ones(d), cfg.train_per_axis)
    return np.vstack([corners(np.ones(d)), sobol(d, 2**cfg.train_sobol_log2, seed=seed + 7919)])


def _measure_points(d: int, cfg: FitConfig, seed: int) -> np.ndarray:
    if d <= 2:
        return tensor_grid(np.ones(d), cfg.measure_factor * (cfg.train_per_axis - 1) + 1)
    return np.vstack([corners(np.ones(d)), sobol(d, 2 ** (cfg.train_sobol_log2 + 2), seed=seed + 104729)])


def _ridge_solve(P: np.ndarray, Y: np.ndarray, cfg: FitConfig):
    """Least squares with escalating Tikhonov weight; ``Y`` may be 2-D."""
    N, n = P.shape
    lam = cfg.ridge
    for _ in range(cfg.max_ridge_steps):
        A = np.vstack([P, np.sqrt(lam * N) * np.eye(n)])
        rhs = np.concatenate([Y, np.zeros((n,) + Y.shape[1:])])
        coef, _, _, sv = np.linalg.lstsq(A, rhs, rcond=None)
        if sv[-1] > 0 and sv[0] / sv[-1] <= cfg.cond_limit and np.all(np.isfinite(coef)):
            return coef, lam
        lam *= 10.0
    return coef, lam


def fit_with_weights(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray, cfg: FitConfig):
    """Output coefficients for frozen ``(W, b)`` on unit-box points ``X``."""
    P = prim.activation(cfg.activation)(X @ W.T + b)
    return _ridge_solve(P, Y, cfg)


def measure_sup_error(net: ShallowNet, node: Node, cfg: FitConfig = FitConfig(), seed: int = 0) -> float:
    X = _measure_points(net.d, cfg, seed) * net.R
    return float(np.max(np.abs(net(X) - node.evaluate(X))))


def _fit_once(node: Node, n_width: int, cfg: FitConfig, seed: int):
    d = node.d
    W, b = inner_weights(d, n_width, cfg, seed)
    Xt = _train_points(d, cfg, seed)
    y = node.evaluate(node.R * Xt)
    a, lam = fit_with_weights(W, b, Xt, y, cfg)
    net = ShallowNet(W / node.R, b, a, cfg.activation, node.R)
    err = measure_sup_error(net, node, cfg, seed)
    meta = {
        "node": node.id,
        "seed": seed,
        "ridge": lam,
        "train_points": int(Xt.shape[0]),
        "measure_points": int(_measure_points(d, cfg, seed).shape[0]),
        "scale_range": list(cfg.scale_range),
        "bias": cfg.bias,
        "sup_error": err,
    }
    return replace(net, meta=meta), err


def fit_shallow(node: Node, n_width: int, cfg: FitConfig = FitConfig()):
    """Fit a width-``n_width`` shallow network to ``node`` on its domain.

    Returns ``(net, measured_sup_error)``; the error is measured on a grid
    four times denser than the training grid.  With ``cfg.restarts > 1`` the
    best of several seeds is kept.
    """
    if node.is_input:
        raise ConfigError("input nodes carry no function to fit")
    if n_width < 1:
        raise ConfigError("n_width must be >= 1")
    best = None
    for r in range(cfg.restarts):
        net, err = _fit_once(node, n_width, cfg, cfg.seed + r)
        if best is None or err < best[1]:
            best = (net, err)
    return best


def fit_nodes(f: CompositionalFunction, n_width, cfg: FitConfig = FitConfig(), threads: int = 1, node_ids=None):
    """Fit every general node (or ``node_ids``); returns ``(nets, errors)``.

    ``n_width`` is an int or a mapping from node id to width.  Results are
    keyed in graph order regardless of ``threads``.
    """
    ids = [n.id for n in f.general_nodes] if node_ids is None else list(node_ids)

    def one(nid):
        w = n_width[nid] if isinstance(n_width, Mapping) else n_width
        return fit_shallow(f[nid], w, cfg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, ids))
    else:
        results = [one(i) for i in ids]
    nets = {i: r[0] for i, r in zip(ids, results)}
    errors = {i: r[1] for i, r in zip(ids, results)}
    return nets, errors


def _widen(f: CompositionalFunction, slack: Mapping[str, float]) -> CompositionalFunction:
    grow: dict = {}
    for nid, s in slack.items():
        for c in f.consumers(nid):
            grow[c] = max(grow.get(c, 0.0), s)
    if not grow:
        return f
    return CompositionalFunction(tuple(n.with_(R=n.R + grow[n.id]) if n.id in grow else n for n in f.nodes))


def assemble_deep(f: CompositionalFunction, nets: Mapping[str, ShallowNet], merge: bool = False) -> CompositionalFunction:
    """Substitute a shallow network for every general node of ``f``.

    Nodes are replaced in descending layer order.  Because a network's output
    may overshoot its node's range by the fit error, consumers of replaced
    nodes get their domain radius widened by twice the recorded sup error.
    With ``merge`` the hidden linear nodes are folded into neurons.
    """
    general = sorted(f.general_nodes, key=lambda n: -n.layer)
    for n in general:
        if n.id not in nets:
            raise MissingNetError(f"no network supplied for general node {n.id!r}")
        net = nets[n.id]
        if net.d != n.d:
            raise RangeError(f"network for {n.id!r} has {net.d} inputs, node has {n.d}")
        if abs(net.R - n.R) > 1e-12 * max(1.0, n.R):
            raise RangeError(f"network for {n.id!r} has domain radius {net.R}, node has {n.R}")
    out = f
    for n in general:
        out = substitute_node(out, n.id, nets[n.id].to_dag(), check_range=False)
    slack = {n.id: 2.0 * float(nets[n.id].sup_error or 0.0) for n in general}
    out = _widen(out, slack)
    return merge_linear_nodes(out) if merge else out


# ---------------------------------------------------------------------------
# products and quotients of networks


@dataclass(eq=False)
class OperationNet:
    """Result of :func:`build_product_net` or :func:`build_quotient_net`."""

    net: CompositionalFunction
    psi: CompositionalFunction
    psi_net: CompositionalFunction
    psi_errors: dict
    Lambda: float
    A: np.ndarray
    B: np.ndarray
    R: np.ndarray
    psi_sup_error: float
    extra: dict = field(default_factory=dict)

    @property
    def neuron_count(self) -> int:
        return self.net.neuron_count


def _psi_sup_error(psi: CompositionalFunction, psi_net: CompositionalFunction, X: np.ndarray | None = None) -> float:
    """Sup error of the assembled ``psi`` network on ``X`` (default: its input box)."""
    if X is None:
        X = box_points(psi.input_radii, 20000, seed=5)
    return float(np.max(np.abs(psi.evaluate(X, check_domains=False) - psi_net.evaluate(X, check_domains=False))))


def build_product_net(
    f1NN: CompositionalFunction,
    f2NN: CompositionalFunction,
    n_width: int,
    m: int = 2,
    bounds: Mapping | None = None,
    cfg: FitConfig = FitConfig(),
    margin: float = 1.05,
) -> OperationNet:
    """Network for ``f1 . f2`` from networks of the operands.

    Builds the inner-product function ``psi(u, v) = sum_k u_k v_k`` with one
    product node per component, fits those nodes, and composes the
    assembled ``psi`` network with the stacked operands.  ``bounds`` may
    supply per-component sup bounds ``A`` and ``B``; otherwise they are
    sampled.
    """
    if f1NN.q != f2NN.q:
        raise RangeError("operands must have the same output dimension")
    q = f1NN.q
    A = np.asarray(bounds["A"], dtype=float) if bounds and "A" in bounds else output_ranges(f1NN)
    B = np.asarray(bounds["B"], dtype=float) if bounds and "B" in bounds else output_ranges(f2NN)
    ru = np.maximum(A * margin, 1e-9)
    rv = np.maximum(B * margin, 1e-9)
    Rk = np.maximum(ru, rv)
    nodes = [Node(f"u{k + 1}", "input", R=ru[k]) for k in range(q)]
    nodes += [Node(f"v{k + 1}", "input", R=rv[k]) for k in range(q)]
    for k in range(q):
        nodes.append(Node(f"p{k + 1}", "general", "product", (), 1, (f"u{k + 1}", f"v{k + 1}"), Rk[k], m))
    nodes.append(Node("s", "linear", "affine", (1.0,) * q + (0.0,), 2, tuple(f"p{k + 1}" for k in range(q)), float(np.max(Rk**2)), 1))
    psi = CompositionalFunction(tuple(nodes))
    nets, errs = fit_nodes(psi, n_width, cfg)
    psi_net = assemble_deep(psi, nets, merge=True)
    net = compose(psi_net, stack(f1NN, f2NN))
    lam = thm5_product_lambda(A, B, np.maximum(A, B), m)
    return OperationNet(net, psi, psi_net, errs, lam, A, B, np.maximum(A, B), _psi_sup_error(psi, psi_net))


def build_quotient_net(
    f1NN: CompositionalFunction,
    f2NN: CompositionalFunction,
    n_width: int,
    m: int = 2,
    bounds: Mapping | None = None,
    cfg: FitConfig = FitConfig(),
    margin: float = 1.05,
) -> OperationNet:
    """Network for ``f1 / f2`` from scalar networks of the operands.

    The quotient node is fitted on a square centered away from the pole:
    ``u`` is rescaled to the half-width ``r`` of the denominator's range and
    ``v`` is shifted by that range's center ``c``, so the fitted node is
    ``(A / r) s / (w + c)`` on ``[-r, r]^2``.  ``bounds`` may carry ``A``,
    ``B`` (a lower bound of ``|f2|``) and the operand errors ``e1``, ``e2``.
    """
    if f1NN.q != 1 or f2NN.q != 1:
        raise RangeError("quotient networks need scalar operands")
    bounds = dict(bounds or {})
    X = box_points(f2NN.input_radii, 4096, seed=0)
    g = f2NN.evaluate(X, check_domains=False)[:, 0]
    gmin, gmax = float(np.min(g)), float(np.max(g))
    if gmin <= 0 <= gmax:
        raise DivisionSafetyError("the denominator network vanishes or changes sign")
    B = float(bounds.get("B", min(abs(gmin), abs(gmax))))
    if "e2" in bounds and bounds["e2"] > 0.5 * B:
        raise BoundInvalidError(f"denominator error {bounds['e2']} exceeds half of min|g| = {B}")
    A = float(bounds.get("A", output_ranges(f1NN)[0]))
    Au = max(A * margin, 1e-9)
    Rv = max(abs(gmin), abs(gmax)) * margin
    c = 0.5 * (gmin + gmax)
    r = max(0.5 * (gmax - gmin) * margin, 1e-3 * abs(c))
    if abs(c) - r <= 0:
        raise DivisionSafetyError("the widened denominator range reaches zero")
    nodes = [
        Node("u", "input", R=Au),
        Node("v", "input", R=Rv),
        Node("s", "linear", "affine", (r / Au, 0.0), 1, ("u",), Au, 1),
        Node("w", "linear", "affine", (1.0, -c), 1, ("v",), Rv, 1),
        Node("quot", "general", "quotient", (Au / r, c), 2, ("s", "w"), r, m),
    ]
    psi = CompositionalFunction(tuple(nodes))
    nets, errs = fit_nodes(psi, n_width, cfg)
    psi_net = assemble_deep(psi, nets, merge=True)
    net = compose(psi_net, stack(f1NN, f2NN))
    R1 = max(A, max(abs(gmin), abs(gmax)))
    lam = thm5_quotient_lambda(A, B, R1, m)
    # psi is only meaningful where v lies in the (widened) denominator range
    Xs = box_points([Au, r], 20000, seed=5)
    Xs[:, 1] += c
    return OperationNet(
        net, psi, psi_net, errs, lam, np.array([A]), np.array([B]), np.array([R1]), _psi_sup_error(psi, psi_net, Xs),
        extra={"center": c, "half_width": r},
    )


def product_net(f1NN, f2NN, n_width: int, m: int = 2, bounds=None, cfg: FitConfig = FitConfig()) -> CompositionalFunction:
    return build_product_net(f1NN, f2NN, n_width, m, bounds, cfg).net


def quotient_net(f1NN, f2NN, n_width: int, m: int = 2, bounds=None, cfg: FitConfig = FitConfig()) -> CompositionalFunction:
    return build_quotient_net(f1NN, f2NN, n_width, m, bounds, cfg).net

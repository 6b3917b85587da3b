"""Node-associated Lipschitz constants, Sobolev norms and the feature quadruple.

Lipschitz constants are estimated on the truncation of the graph along the
node's layer, by difference quotients along the node's dummy-input axis.
Sample points are snapped to a dyadic grid, so affine dependence yields exact
quotients.  The reported constant is the sampled supremum inflated by a
safety margin.

Two conventions are offered for the ``W^{m,inf}`` norm of a node:

``"graded"`` (default)
    ``sum_{j <= m} max_{|k| = j} sup |d^k f|``: for each derivative order the
    largest partial is counted once.
``"full"``
    ``sum_{|k| <= m} sup |d^k f|`` over every multi-index.

For the product node ``xz`` on ``[-2, 2]^2`` these give 7 and 9.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import primitives as prim
from .algebra import _truncate
from .dag import CompositionalFunction, Node
from .errors import UnsupportedError
from .sampling import box_points, dyadic, tensor_grid

__all__ = [
    "FeatureConfig",
    "Features",
    "LipschitzConfig",
    "NodeFeature",
    "SobolevConfig",
    "associated_lipschitz",
    "extract_features",
    "lipschitz_sup",
    "node_lipschitz",
    "propagate_errors",
    "sobolev_norm",
]


@dataclass(frozen=True)
class LipschitzConfig:
    """Sampling plan for difference-quotient Lipschitz estimates."""

    n_base: int = 256
    n_axis: int = 17
    refine_top: int = 6
    refine_points: int = 33
    jitters: int = 6
    margin: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class SobolevConfig:
    per_axis: int = 65
    n_sobol: int = 4096
    convention: str = "graded"
    method: str = "exact"
    max_exact_order: int = 8
    fd_fallback: bool = True
    fd_rel_step: float = 1e-4

    def __post_init__(self):
        if self.convention not in ("graded", "full"):
            raise ValueError(f"unknown Sobolev convention {self.convention!r}")
        if self.method not in ("exact", "fd"):
            raise ValueError(f"unknown derivative method {self.method!r}")


@dataclass(frozen=True)
class FeatureConfig:
    lipschitz: LipschitzConfig = field(default_factory=LipschitzConfig)
    sobolev: SobolevConfig = field(default_factory=SobolevConfig)
    threads: int = 1


# ---------------------------------------------------------------------------
# Lipschitz constants


def _pnorm(A: np.ndarray, p) -> np.ndarray:
    return np.linalg.norm(A, ord=p, axis=-1)


def _axis_scan(fbar: CompositionalFunction, base: np.ndarray, j: int, ts: np.ndarray, p) -> np.ndarray:
    """Evaluate ``fbar`` along axis ``j`` through each base point.

    Returns outputs of shape ``(n_base, len(ts), q)``.
    """
    nb, nt = base.shape[0], ts.size
    P = np.repeat(base, nt, axis=0)
    P[:, j] = np.tile(ts, nb)
    F = fbar.evaluate(P, check_domains=False)
    return F.reshape(nb, nt, -1)


def _pair_quotients(F: np.ndarray, ts: np.ndarray, p) -> np.ndarray:
    """Max over pairs ``a < b`` of ``|F_a - F_b|_p / |t_a - t_b|`` per base point."""
    ia, ib = np.triu_indices(ts.size, k=1)
    diff = _pnorm(F[:, ia, :] - F[:, ib, :], p)
    return diff / np.abs(ts[ia] - ts[ib])


def lipschitz_sup(fbar: CompositionalFunction, j: int, p=np.inf, cfg: LipschitzConfig = LipschitzConfig()) -> float:
    """Sampled supremum of difference quotients of ``fbar`` along input ``j``."""
    radii = fbar.input_radii
    Rj = radii[j]
    lo, hi = -radii, radii
    base = np.clip(dyadic(box_points(radii, cfg.n_base, seed=cfg.seed)), lo, hi)
    ts = np.clip(dyadic(np.linspace(-Rj, Rj, cfg.n_axis)), -Rj, Rj)
    F = _axis_scan(fbar, base, j, ts, p)
    Q = _pair_quotients(F, ts, p)
    best = float(np.max(Q))
    # refine around the largest coarse quotients: finer axis scans through the
    # same base point and through small random jitters of it
    rng = np.random.default_rng(cfg.seed)
    step = 2 * Rj / (cfg.n_axis - 1)
    flat = np.argsort(Q, axis=None)[::-1][: cfg.refine_top]
    ia, ib = np.triu_indices(ts.size, k=1)
    for idx in flat:
        bi, pi = np.unravel_index(idx, Q.shape)
        a, b = ts[ia[pi]], ts[ib[pi]]
        lo_t, hi_t = max(-Rj, a - step), min(Rj, b + step)
        fine = np.unique(np.clip(dyadic(np.linspace(lo_t, hi_t, cfg.refine_points)), -Rj, Rj))
        pts = [base[bi]]
        for _ in range(cfg.jitters):
            jit = base[bi] + rng.uniform(-0.05, 0.05, size=radii.size) * radii
            pts.append(np.clip(dyadic(jit), lo, hi))
        Ff = _axis_scan(fbar, np.array(pts), j, fine, p)
        adj = _pnorm(Ff[:, 1:, :] - Ff[:, :-1, :], p) / np.diff(fine)
        best = max(best, float(np.max(adj)))
    return best


def _truncation_for(f: CompositionalFunction, layer: int, cache: dict | None):
    if cache is not None and layer in cache:
        return cache[layer]
    out = _truncate(f, layer)
    if cache is not None:
        cache[layer] = out
    return out


def node_lipschitz(
    f: CompositionalFunction,
    node_id: str,
    p=np.inf,
    cfg: LipschitzConfig = LipschitzConfig(),
    _cache: dict | None = None,
) -> float:
    """Lipschitz constant of ``f`` with respect to the value of ``node_id``.

    The estimate is the sampled supremum of difference quotients on the
    truncation along the node's layer, times ``1 + cfg.margin``.
    """
    n = f[node_id]
    if n.layer >= f.l_max:
        raise UnsupportedError(f"node {node_id!r} lies in the output layer; no truncation exists")
    fbar, info = _truncation_for(f, n.layer, _cache)
    return lipschitz_sup(fbar, info.index(node_id), p, cfg) * (1.0 + cfg.margin)


def associated_lipschitz(
    f: CompositionalFunction,
    node_id: str,
    p=np.inf,
    cfg: LipschitzConfig = LipschitzConfig(),
    margin: bool = True,
    _cache: dict | None = None,
) -> float:
    """Like :func:`node_lipschitz` but defined for output nodes too.

    Changing one output coordinate by ``delta`` moves ``f`` by ``|delta|`` in
    every ``p``-norm, so output-layer nodes get the constant 1.
    """
    n = f[node_id]
    if n.layer >= f.l_max:
        return 1.0
    fbar, info = _truncation_for(f, n.layer, _cache)
    sup = lipschitz_sup(fbar, info.index(node_id), p, cfg)
    return sup * (1.0 + cfg.margin) if margin else sup


def propagate_errors(
    f: CompositionalFunction,
    node_errors: Mapping[str, float],
    p=np.inf,
    cfg: LipschitzConfig = LipschitzConfig(),
    lipschitz: Mapping[str, float] | None = None,
) -> float:
    """Bound on ``|f - f~|_p`` after replacing each keyed node by a version
    within ``eps_j`` of it: ``sum_j L_j eps_j``.

    ``lipschitz`` may supply precomputed constants; otherwise they are
    estimated with the safety margin.
    """
    cache: dict = {}
    total = 0.0
    for nid, eps in node_errors.items():
        if nid not in f:
            raise KeyError(f"unknown node id {nid!r}")
        if f[nid].is_input:
            raise ValueError(f"node {nid!r} is an input node")
        if eps == 0:
            continue
        L = lipschitz[nid] if lipschitz is not None and nid in lipschitz else associated_lipschitz(f, nid, p, cfg, _cache=cache)
        total += L * float(eps)
    return total


# ---------------------------------------------------------------------------
# Sobolev norms


def _node_grid(node: Node, cfg: SobolevConfig) -> np.ndarray:
    d = node.d
    if d <= 2:
        return tensor_grid(np.full(d, node.R), cfg.per_axis)
    return box_points(np.full(d, node.R), cfg.n_sobol, seed=0)


def _fd_partial(node: Node, k: tuple, Z: np.ndarray, cfg: SobolevConfig) -> np.ndarray:
    h = np.full(node.d, node.R * cfg.fd_rel_step)
    return prim.central_difference(node.evaluate, k, Z, h)


def sobolev_norm(node: Node, m: int | None = None, cfg: SobolevConfig = SobolevConfig()) -> float:
    """Sampled ``W^{m,inf}`` norm of a node over its domain hypercube."""
    if node.is_input:
        raise UnsupportedError("input nodes carry no function")
    m = node.m if m is None else int(m)
    if m > cfg.max_exact_order and cfg.method == "exact" and not cfg.fd_fallback:
        raise UnsupportedError(f"order {m} exceeds exact derivative depth {cfg.max_exact_order}")
    Z = _node_grid(node, cfg)
    total = 0.0
    for order in range(m + 1):
        sups = []
        for k in prim.multi_indices(node.d, order):
            if cfg.method == "fd" or order > cfg.max_exact_order:
                vals = _fd_partial(node, k, Z, cfg) if order else node.evaluate(Z)
            else:
                vals = node.partial(k, Z)
            sups.append(float(np.max(np.abs(vals))))
        total += max(sups) if cfg.convention == "graded" else sum(sups)
    return total


# ---------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class NodeFeature:
    id: str
    d: int
    m: int
    R: float
    L: float
    sobolev: float

    @property
    def ratio(self) -> float:
        return self.d / self.m

    @property
    def scaled_sobolev(self) -> float:
        return max(self.R**self.m, 1.0) * self.sobolev


@dataclass(frozen=True)
class Features:
    """The quadruple ``(r_max, Lambda, L_max, n_general)`` plus per-node data.

    ``L`` entries are sampled suprema without the safety margin; the margin
    used for error propagation is recorded in ``lipschitz_margin``.
    """

    r_max: float
    Lambda: float
    L_max: float
    n_general: int
    p: float
    per_node: tuple = ()
    sobolev_convention: str = "graded"
    lipschitz_margin: float = 0.05

    @property
    def empty(self) -> bool:
        return self.n_general == 0

    def quadruple(self) -> tuple:
        return (self.r_max, self.Lambda, self.L_max, self.n_general)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["p"] = "inf" if np.isinf(self.p) else self.p
        out["empty"] = self.empty
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["id", "d", "m", "R", "L", "sobolev", "scaled_sobolev"])
        for nf in self.per_node:
            w.writerow([nf.id, nf.d, nf.m, nf.R, nf.L, nf.sobolev, nf.scaled_sobolev])
        return buf.getvalue()


def extract_features(f: CompositionalFunction, p=np.inf, cfg: FeatureConfig = FeatureConfig()) -> Features:
    """Features of ``f`` computed over its general nodes.

    A graph without general nodes yields ``Features.empty`` with zero entries.
    """
    general = f.general_nodes
    if not general:
        return Features(0.0, 0.0, 0.0, 0, float(p), (), cfg.sobolev.convention, cfg.lipschitz.margin)
    caches: dict = {}
    # truncations are shared per layer; build them before fanning out
    for n in general:
        if n.layer < f.l_max:
            _truncation_for(f, n.layer, caches)

    def one(n: Node) -> NodeFeature:
        L = associated_lipschitz(f, n.id, p, cfg.lipschitz, margin=False, _cache=caches)
        return NodeFeature(n.id, n.d, n.m, n.R, L, sobolev_norm(n, n.m, cfg.sobolev))

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            per_node = list(pool.map(one, general))
    else:
        per_node = [one(n) for n in general]
    return Features(
        r_max=max(nf.ratio for nf in per_node),
        Lambda=max(nf.scaled_sobolev for nf in per_node),
        L_max=max(nf.L for nf in per_node),
        n_general=len(per_node),
        p=float(p),
        per_node=tuple(per_node),
        sobolev_convention=cfg.sobolev.convention,
        lipschitz_margin=cfg.lipschitz.margin,
    )

"""Experiment runners: random-graph audits and the approximation, flow and
control sweeps.  Each runner returns an :class:`ExperimentReport` whose rows
go to CSV and whose assertions go to a JSON summary."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import algebra as alg
from .bounds import calibrate_C1, iterate_error_bound, thm2_bound
from .control import Thm8Config, make_lq_problem, make_quadratic_problem, solve_optimal, thm7_bound, thm8_pipeline
from .dag import CompositionalFunction, Node, insert_identity_nodes
from .errors import BudgetExceededError, ConfigError
from .features import LipschitzConfig, associated_lipschitz, extract_features, propagate_errors
from .fileio import load_dag
from .nn import FitConfig, assemble_deep, fit_nodes
from .ode import elr_lipschitz, euler_flow, exact_flow, flow_net, jacobian_norm, lorenz96_rhs, make_lorenz96, sup_norm, thm4_bound, default_steps
from .sampling import box_points

__all__ = [
    "ApproxConfig",
    "AuditConfig",
    "ExperimentReport",
    "FlowConfig",
    "OptctlConfig",
    "config_from_dict",
    "load_config",
    "random_dag",
    "run_experiment",
]

UNARY = ("sin", "cos", "tanh", "sigmoid", "exp", "power", "reciprocal")
BINARY = ("product", "quotient", "dot")


# ---------------------------------------------------------------------------
# random graphs


def random_dag(
    seed: int,
    max_layers: int = 4,
    max_nodes: int = 12,
    d: int | None = None,
    radii=None,
    q: int | None = None,
    neurons: bool = False,
) -> CompositionalFunction:
    """A random layered graph over the primitive registry.

    Node domains are 1.25 times the sampled range of their inputs, so the
    result passes validation.  With ``q`` a final linear layer produces
    exactly ``q`` outputs; with ``neurons`` the hidden general nodes are
    tanh neurons and the outputs are linear.  At most ``max_layers``
    non-input layers and ``max_nodes`` nodes in total.
    """
    rng = np.random.default_rng(seed)
    if d is None:
        d = int(rng.integers(1, 4))
    radii = rng.uniform(0.5, 1.5, d) if radii is None else np.broadcast_to(np.asarray(radii, dtype=float), (d,))
    nodes = [Node(f"x{i + 1}", "input", R=float(radii[i])) for i in range(d)]
    X = box_points(radii, 1024, seed=seed % 997)
    vals = {n.id: X[:, i] for i, n in enumerate(nodes)}
    rng_of = {n.id: float(radii[i]) for i, n in enumerate(nodes)}
    final = q is not None or neurons
    n_layers = int(rng.integers(2, max_layers + 1))
    body_layers = n_layers - 1 if final else n_layers
    q_final = q if q is not None else int(rng.integers(1, 3))
    budget = max_nodes - d - (q_final if final else 0)
    budget = max(budget, body_layers)
    by_layer = {0: [n.id for n in nodes]}
    count = 0
    for layer in range(1, body_layers + 1):
        left = body_layers - layer
        k = int(rng.integers(1, 4))
        k = max(1, min(k, budget - count - left))
        by_layer[layer] = []
        lower = [i for l in range(layer) for i in by_layer[l]]
        for j in range(k):
            prev = by_layer[layer - 1]
            first = prev[int(rng.integers(len(prev)))]
            nid = f"n{layer}_{j}"
            node = _random_node(rng, nid, layer, first, lower, rng_of, neurons)
            Z = np.column_stack([vals[s] for s in node.inputs])
            v = node.evaluate(Z)
            vals[nid] = v
            rng_of[nid] = float(np.max(np.abs(v)))
            nodes.append(node)
            by_layer[layer].append(nid)
            count += 1
    if final:
        top = body_layers + 1
        consumed = {s for n in nodes for s in n.inputs}
        sinks = [n.id for n in nodes if not n.is_input and n.id not in consumed]
        groups = [[] for _ in range(q_final)]
        for i, s in enumerate(sinks):
            groups[i % q_final].append(s)
        hidden = [n.id for n in nodes if not n.is_input]
        for k in range(q_final):
            if not groups[k]:
                groups[k].append(hidden[int(rng.integers(len(hidden)))])
            extra = [hidden[int(rng.integers(len(hidden)))]] if rng.random() < 0.5 else []
            ins = tuple(dict.fromkeys(groups[k] + extra))
            w = tuple(rng.uniform(-1, 1, len(ins))) + (float(rng.uniform(-0.5, 0.5)),)
            R = 1.25 * max(rng_of[s] for s in ins) + 1e-9
            nodes.append(Node(f"out{k + 1}", "linear", "affine", w, top, ins, R, 1))
    else:
        # outputs must share the last layer: lift every sink to it
        consumed = {s for n in nodes for s in n.inputs}
        top = max(n.layer for n in nodes)
        nodes = [n.with_(layer=top) if not n.is_input and n.id not in consumed else n for n in nodes]
    return CompositionalFunction(tuple(nodes))


def _random_node(rng, nid, layer, first, lower, rng_of, neurons):
    def others(k):
        pool = [s for s in lower if s != first]
        if k <= 0 or not pool:
            return []
        pick = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
        return [pool[int(i)] for i in pick]

    if neurons:
        ins = tuple([first] + others(int(rng.integers(0, 2))))
        R = 1.25 * max(rng_of[s] for s in ins) + 1e-9
        if rng.random() < 0.3:
            w = tuple(rng.uniform(-1, 1, len(ins))) + (float(rng.uniform(-0.5, 0.5)),)
            return Node(nid, "linear", "affine", w, layer, ins, R, 1)
        w = tuple(rng.uniform(-1.5, 1.5, len(ins))) + (float(rng.uniform(-0.5, 0.5)),)
        return Node(nid, "neuron", "tanh", w, layer, ins, R, 2)
    choice = rng.choice(["affine", "unary", "binary"], p=[0.3, 0.45, 0.25])
    if choice == "affine":
        ins = tuple([first] + others(int(rng.integers(0, 3))))
        w = tuple(rng.uniform(-1, 1, len(ins))) + (float(rng.uniform(-0.5, 0.5)),)
        R = 1.25 * max(rng_of[s] for s in ins) + 1e-9
        return Node(nid, "linear", "affine", w, layer, ins, R, 1)
    if choice == "unary":
        name = str(rng.choice(UNARY))
        r = rng_of[first]
        if name in ("exp", "power") and r > 2.0:
            name = "sin"
        params = ()
        if name == "power":
            params = (float(rng.integers(2, 4)), 0.5)
        elif name == "reciprocal":
            params = (1.5 * r + 0.5,)
        return Node(nid, "general", name, params, layer, (first,), 1.25 * r + 1e-9, 2)
    name = str(rng.choice(BINARY))
    if name == "dot":
        k = 2 * int(rng.integers(1, 3))
        ins = [first] + others(k - 1)
        while len(ins) < k:
            ins.append(first)
    else:
        rest = others(1)
        ins = [first] + (rest if rest else [first])
    ins = tuple(ins)
    R = 1.25 * max(rng_of[s] for s in ins) + 1e-9
    params = ()
    if name == "product":
        params = (float(rng.uniform(0.5, 1.0)),)
    elif name == "quotient":
        params = (1.0, 1.5 * R + 0.5)
    return Node(nid, "general", name, params, layer, ins, R, 2)


def offset_output(f: CompositionalFunction, shift: float, scale: float = 1.0) -> CompositionalFunction:
    """Append ``y = scale * f + shift`` on top of a scalar function."""
    (out,) = f.output_ids
    r = alg.output_ranges(f)[0]
    R = 1.25 * r + 1e-9
    node = Node("shifted", "linear", "affine", (scale, shift), f.l_max + 1, (out,), R, 1)
    return CompositionalFunction(tuple(f.nodes) + (node,))


# ---------------------------------------------------------------------------
# report plumbing


@dataclass
class Assertion:
    name: str
    bound: float
    measured: float
    passed: bool

    def to_dict(self):
        return {"name": self.name, "bound": _num(self.bound), "measured": _num(self.measured), "pass": bool(self.passed)}


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


@dataclass
class ExperimentReport:
    kind: str
    config_hash: str
    seed: int
    columns: list
    rows: list = field(default_factory=list)
    assertions: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    budget_exceeded: bool = False

    def check(self, name, bound, measured, passed=None):
        ok = bool(measured <= bound) if passed is None else bool(passed)
        self.assertions.append(Assertion(name, float(bound), float(measured), ok))
        return ok

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    @property
    def exit_code(self) -> int:
        if self.budget_exceeded:
            return 2
        return 0 if self.passed else 1

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "assertions": [a.to_dict() for a in self.assertions],
            "passed": self.passed,
            "budget_exceeded": self.budget_exceeded,
            "extra": _plain(self.extra),
        }

    def write(self, out_dir) -> tuple:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{self.kind}.csv"
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt(row[c]) for c in self.columns])
        json_path = out / f"{self.kind}_summary.json"
        json_path.write_text(json.dumps(self.summary(), indent=1, sort_keys=True) + "\n")
        return csv_path, json_path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating, float)):
        return _num(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


class _Budget:
    def __init__(self, seconds):
        self.t0 = time.monotonic()
        self.seconds = seconds

    def check(self, what):
        if self.seconds is not None and time.monotonic() - self.t0 > self.seconds:
            raise BudgetExceededError(f"time budget of {self.seconds} s exceeded during {what}")


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class AuditConfig:
    kind: str = "algebra-audit"
    seed: int = 0
    n_dags: int = 50
    points: int = 100
    grid_points: int = 10_000
    rel_tol: float = 1e-12
    lipschitz_dags: int = 10
    max_seconds: float | None = None


@dataclass(frozen=True)
class ApproxConfig:
    kind: str = "approx"
    seed: int = 0
    system: str = "lorenz96"
    dag_path: str | None = None
    d: int = 4
    F: float = 8.0
    R: float = 1.0
    m: int = 2
    widths: tuple = (8, 16, 32, 64)
    measure_points: int = 10_000
    C1: float = 1.0
    max_seconds: float | None = None


@dataclass(frozen=True)
class FlowConfig:
    kind: str = "flow"
    seed: int = 0
    system: str = "lorenz96"
    dag_path: str | None = None
    d: int = 4
    F: float = 8.0
    R: float = 1.0
    m: int = 2
    T: float = 0.05
    x_radius: float = 0.4
    K: int | None = None
    widths: tuple = (8, 16, 32, 64)
    seeds: tuple = (0, 1, 2)
    initial_states: int = 256
    C1: float = 1.0
    max_nodes: int = 10**6
    max_seconds: float | None = None


@dataclass(frozen=True)
class OptctlConfig:
    kind: str = "optctl"
    seed: int = 0
    problem: str = "lq"
    eps: tuple = (0.1, 0.05)
    widths: tuple = (16, 32, 64)
    max_substeps: int = 64
    a: float = -0.5
    x_target: float = 1.0
    rho: float = 1.0
    T: float = 2.0
    N_t: int = 2
    x_radius: float = 1.0
    Ks: tuple = (5, 10, 20)
    hs: tuple = (1e-2, 1e-3)
    e1s: tuple = (0.0, 1e-4)
    x_samples: int = 32
    max_seconds: float | None = None


CONFIGS = {"algebra-audit": AuditConfig, "approx": ApproxConfig, "flow": FlowConfig, "optctl": OptctlConfig}


def config_from_dict(data: dict):
    kind = data.get("kind")
    if kind not in CONFIGS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {sorted(CONFIGS)}")
    cls = CONFIGS[kind]
    names = {f.name for f in fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"unknown config field(s) for {kind}: {sorted(extra)}")
    clean = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**clean)


def load_config(path):
    """Load a JSON config; a relative ``dag_path`` is taken relative to the config file."""
    path = Path(path)
    data = json.loads(path.read_text())
    if isinstance(data.get("dag_path"), str) and not Path(data["dag_path"]).is_absolute():
        data["dag_path"] = str((path.parent / data["dag_path"]).resolve())
    return config_from_dict(data)


def config_hash(cfg) -> str:
    text = json.dumps(_plain(asdict(cfg)), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# algebra audit


def _rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def _interior(f: CompositionalFunction, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, (n, f.d)) * f.input_radii


def audit_oracles(seed: int, points: int = 100) -> dict:
    """Worst relative error of each algebra operation against plain arithmetic."""
    f = random_dag(seed)
    X = _interior(f, points, seed)
    fx = f(X, check_domains=False)
    out = {}
    f2 = random_dag(seed + 10_000, d=f.d, radii=f.input_radii, q=f.q)
    f2x = f2(X, check_domains=False)
    a, b = 0.7, -1.3
    out["linear_combine"] = _rel_err(alg.linear_combine(f, f2, a, b)(X), a * fx + b * f2x)
    out["inner_product"] = _rel_err(alg.inner_product(f, f2)(X)[:, 0], np.sum(fx * f2x, axis=1))
    num = random_dag(seed + 20_000, d=f.d, radii=f.input_radii, q=1)
    den0 = random_dag(seed + 30_000, d=f.d, radii=f.input_radii, q=1)
    shift = 2.0 * alg.output_ranges(den0)[0] + 1.0
    den = offset_output(den0, shift)
    out["divide"] = _rel_err(alg.divide(num, den)(X)[:, 0], num(X)[:, 0] / den(X)[:, 0])
    r = alg.output_ranges(f)
    g = random_dag(seed + 40_000, d=f.q, radii=1.25 * np.maximum(r, 1e-3))
    out["compose"] = _rel_err(alg.compose(g, f)(X), g(fx, check_domains=False))
    rng = np.random.default_rng(seed)
    hidden = [n for n in f.nodes if not n.is_input]
    target = hidden[int(rng.integers(len(hidden)))]
    vals = f.node_values(X, check_domains=False)
    sub0 = random_dag(seed + 50_000, d=target.d, radii=target.R, q=1)
    span = max(float(np.max(np.abs(f.node_values(box_points(f.input_radii, 2048), check_domains=False)[target.id]))), 1e-3)
    sub = offset_output(sub0, 0.0, 0.8 * span / max(alg.output_ranges(sub0)[0], 1e-12))
    fs = alg.substitute_node(f, target.id, sub)
    oracle = f.evaluate(X, check_domains=False, overrides={target.id: lambda v, Z: sub.evaluate(Z, check_domains=False)[:, 0]})
    # a substitute that ignores one of its inputs leaves that source as an
    # extra sink, so compare the original outputs by id
    got = fs.node_values(X, check_domains=False)
    out["substitute_node"] = _rel_err(np.column_stack([got[o] for o in f.output_ids]), oracle)
    worst = 0.0
    for i in range(1, f.l_max):
        F, info = alg.truncate(f, i)
        Z = np.column_stack([vals[nid] for nid in info.dummy_ids])
        worst = max(worst, _rel_err(F(Z, check_domains=False), np.column_stack([vals[o] for o in F.output_ids])))
    out["truncate"] = worst
    net = random_dag(seed + 60_000, neurons=True)
    Xn = _interior(net, points, seed)
    merged = alg.merge_linear_nodes(net)
    out["merge_linear_nodes"] = _rel_err(merged(Xn), net(Xn))
    out["merge_is_network"] = alg.is_neural_network(merged)
    out["identity_insertion"] = max(
        _rel_err(insert_identity_nodes(f)(X, check_domains=False), fx),
        _rel_err(insert_identity_nodes(net)(Xn), net(Xn)),
    )
    return out


def perturbation_check(seed: int, grid_points: int = 10_000, rel: float = 1e-3, cfg: LipschitzConfig = LipschitzConfig()):
    """Measured deviation and first-order bound after perturbing every node.

    Node ``j`` is replaced by ``v + eps_j sin(7 sum Z + j)`` with
    ``eps_j = rel * max(R_j, 1e-3)``.
    """
    f = random_dag(seed)
    hidden = [n for n in f.nodes if not n.is_input]
    eps = {n.id: rel * max(n.R, 1e-3) for n in hidden}

    def bump(e, j):
        return lambda v, Z: v + e * np.sin(7.0 * Z.sum(axis=1) + j)

    over = {n.id: bump(eps[n.id], j) for j, n in enumerate(hidden)}
    X = box_points(f.input_radii, grid_points, seed=seed)
    dev = float(np.max(np.abs(f(X, check_domains=False) - f.evaluate(X, check_domains=False, overrides=over))))
    bound = propagate_errors(f, eps, np.inf, cfg)
    # chained version: perturb half the nodes first, then the rest
    half = {k: over[k] for k in list(over)[::2]}
    mid = f.evaluate(X, check_domains=False, overrides=half)
    stage1 = float(np.max(np.abs(f(X, check_domains=False) - mid)))
    stage2 = float(np.max(np.abs(mid - f.evaluate(X, check_domains=False, overrides=over))))
    return {"measured": dev, "bound": bound, "chain_total": dev, "chain_stages": stage1 + stage2}


def iterate_checks(K_max: int = 10, points: int = 201) -> list:
    """Iterated scalar affine maps with injected errors.

    Returns rows ``(L, K, measured, bound, tight_ratio)`` where the measured
    value uses oscillating perturbations and the ratio uses constant ones,
    for which the bound is attained.
    """
    x = np.linspace(-1, 1, points)
    rows = []
    for L in (0.5, 2.0):
        for K in range(1, K_max + 1):
            e1, e2 = 1e-3, 2e-3

            def run(pf, pg):
                y = x + pg(x)
                for _ in range(K):
                    y = L * y + 0.1 + pf(y)
                return y

            exact = run(lambda y: 0.0, lambda y: 0.0)
            wavy = run(lambda y: e1 * np.sin(13.0 * y), lambda y: e2 * np.cos(11.0 * y))
            const = run(lambda y: e1, lambda y: e2)
            bound = iterate_error_bound(L, K, e1, e2)
            measured = float(np.max(np.abs(wavy - exact)))
            tight = bound / float(np.max(np.abs(const - exact)))
            rows.append({"L": L, "K": K, "measured": measured, "bound": bound, "tight_ratio": tight})
    return rows


def lipschitz_structure_checks(seed: int, cfg: LipschitzConfig = LipschitzConfig()) -> dict:
    """Composition product rule and carry-over under upstream substitution.

    Returns the worst ratios ``L_{g o f} / (L_f L_g)`` and the worst relative
    change of downstream node constants after substituting a layer-1 node.
    """
    f = random_dag(seed, q=1)
    r = alg.output_ranges(f)[0]
    Rg = 1.25 * max(r, 1e-3)
    g = CompositionalFunction(
        (
            Node("z", "input", R=Rg),
            Node("gz", "general", "sin", (), 1, ("z",), Rg, 2),
            Node("gy", "linear", "affine", (1.5, 0.0), 2, ("gz",), Rg, 1),
        )
    )
    from .features import lipschitz_sup

    Lg = lipschitz_sup(g, 0, np.inf, cfg) * (1 + cfg.margin)
    h = alg.compose(g, f)
    worst_ratio = 0.0
    for n in f.nodes:
        if n.is_input:
            continue
        Lf = associated_lipschitz(f, n.id, np.inf, cfg)
        Lh = associated_lipschitz(h, n.id, np.inf, cfg)
        worst_ratio = max(worst_ratio, Lh / (Lf * Lg))
    # carry-over: rescale a layer-1 node whose primitive has a scale parameter
    worst_change = 0.0
    compared = 0
    cands = [n for n in f.nodes if n.layer == 1 and n.primitive in ("affine", "product", "power")]
    if cands and f.l_max >= 3:
        n = cands[0]
        if n.primitive == "affine":
            params = tuple(0.9 * p for p in n.params)
        elif n.primitive == "product":
            params = (0.9 * (n.params[0] if n.params else 1.0),)
        else:
            params = (n.params[0], 0.9 * (n.params[1] if len(n.params) > 1 else 1.0))
        ins = [Node(f"z{k + 1}", "input", R=n.R) for k in range(n.d)]
        sub = CompositionalFunction(tuple(ins) + (Node("y", n.kind, n.primitive, params, 1, tuple(i.id for i in ins), n.R, n.m),))
        # 0.9 times the node's value never leaves the consumers' domains, while
        # the sampled check would use the substitute's whole input box
        fs = alg.substitute_node(f, n.id, sub, check_range=False)
        for m in f.nodes:
            if m.is_input or m.layer < 2 or m.layer >= f.l_max:
                continue
            a = associated_lipschitz(f, m.id, np.inf, cfg)
            b = associated_lipschitz(fs, m.id, np.inf, cfg)
            worst_change = max(worst_change, abs(a - b) / max(a, 1e-12))
            compared += 1
    return {"product_ratio": worst_ratio, "carry_over_change": worst_change, "carry_over_nodes": compared}


def run_audit(cfg: AuditConfig) -> ExperimentReport:
    rep = ExperimentReport(cfg.kind, config_hash(cfg), cfg.seed, ["dag", "check", "measured", "bound", "pass"])
    budget = _Budget(cfg.max_seconds)
    try:
        ops_worst: dict = {}
        pert_viol = 0
        chain_viol = 0
        net_fail = 0
        for k in range(cfg.n_dags):
            s = cfg.seed * 100_003 + k
            o = audit_oracles(s, cfg.points)
            for name, v in o.items():
                if name == "merge_is_network":
                    net_fail += 0 if v else 1
                    rep.rows.append({"dag": s, "check": name, "measured": float(not v), "bound": 0.0, "pass": bool(v)})
                    continue
                ops_worst[name] = max(ops_worst.get(name, 0.0), v)
                rep.rows.append({"dag": s, "check": name, "measured": v, "bound": cfg.rel_tol, "pass": v <= cfg.rel_tol})
            p = perturbation_check(s, cfg.grid_points)
            pert_viol += p["measured"] > p["bound"]
            chain_viol += p["chain_total"] > p["chain_stages"] * (1 + 1e-12)
            rep.rows.append({"dag": s, "check": "perturbation", "measured": p["measured"], "bound": p["bound"], "pass": p["measured"] <= p["bound"]})
            rep.rows.append({"dag": s, "check": "chain", "measured": p["chain_total"], "bound": p["chain_stages"], "pass": p["chain_total"] <= p["chain_stages"] * (1 + 1e-12)})
            budget.check(f"audit of graph {k}")
        for name, v in sorted(ops_worst.items()):
            rep.check(f"oracle:{name}", cfg.rel_tol, v)
        rep.check("merge_output_is_network", 0, net_fail)
        rep.check("perturbation_violations", 0, pert_viol)
        rep.check("chain_violations", 0, chain_viol)
        it = iterate_checks()
        worst_sound = max(r["measured"] / r["bound"] for r in it)
        worst_tight = max(r["tight_ratio"] for r in it)
        rep.check("iterate_bound_soundness", 1.0, worst_sound)
        rep.check("iterate_bound_tightness", 3.0, worst_tight)
        for r in it:
            rep.rows.append({"dag": -1, "check": f"iterate L={r['L']} K={r['K']}", "measured": r["measured"], "bound": r["bound"], "pass": r["measured"] <= r["bound"]})
        ratio, change = 0.0, 0.0
        for k in range(cfg.lipschitz_dags):
            s = cfg.seed * 100_003 + k
            ls = lipschitz_structure_checks(s)
            ratio = max(ratio, ls["product_ratio"])
            change = max(change, ls["carry_over_change"])
            budget.check(f"Lipschitz checks of graph {k}")
        rep.check("composition_lipschitz_ratio", 1.02, ratio)
        rep.check("substitution_carry_over", 0.02, change)
    except BudgetExceededError as exc:
        rep.budget_exceeded = True
        rep.extra["budget"] = str(exc)
    return rep


# ---------------------------------------------------------------------------
# approximation sweep


def _system(cfg) -> CompositionalFunction:
    if cfg.system == "lorenz96":
        return make_lorenz96(cfg.d, cfg.F, cfg.R, cfg.m)
    if cfg.system == "file":
        if not cfg.dag_path:
            raise ConfigError("system 'file' needs dag_path")
        return load_dag(cfg.dag_path)
    raise ConfigError(f"unknown system {cfg.system!r}")


def run_approx(cfg: ApproxConfig, threads: int = 1) -> ExperimentReport:
    cols = ["n_width", "measured_error", "propagated_bound", "thm2_bound", "neuron_count"]
    rep = ExperimentReport(cfg.kind, config_hash(cfg), cfg.seed, cols)
    budget = _Budget(cfg.max_seconds)
    f = _system(cfg)
    feats = extract_features(f)
    cache: dict = {}
    Ls = {n.id: associated_lipschitz(f, n.id, _cache=cache) for n in f.general_nodes}
    X = box_points(f.input_radii, cfg.measure_points, seed=cfg.seed + 1)
    fx = f(X)
    errors, scales = [], []
    try:
        for n in cfg.widths:
            nets, errs = fit_nodes(f, n, FitConfig(seed=cfg.seed), threads=threads)
            fNN = assemble_deep(f, nets, merge=True)
            measured = float(np.max(np.abs(fNN(X) - fx)))
            p3 = propagate_errors(f, errs, lipschitz=Ls)
            t2 = thm2_bound(feats, n, cfg.C1) if not feats.empty else 0.0
            rep.rows.append({"n_width": n, "measured_error": measured, "propagated_bound": p3, "thm2_bound": t2, "neuron_count": fNN.neuron_count})
            rep.check(f"propagated_dominance n={n}", p3 + 1e-9, measured)
            rep.check(f"neuron_count n={n}", n * len(f.general_nodes), fNN.neuron_count, fNN.neuron_count == n * len(f.general_nodes))
            if not feats.empty:
                errors.append(measured)
                scales.append(t2 / cfg.C1)
            budget.check(f"width {n}")
        if len(rep.rows) >= 2:
            rep.check("error_decreases", rep.rows[0]["measured_error"], rep.rows[-1]["measured_error"])
    except BudgetExceededError as exc:
        rep.budget_exceeded = True
        rep.extra["budget"] = str(exc)
    rep.extra["features"] = feats.to_dict()
    if errors:
        rep.extra["calibrated_C1"] = calibrate_C1(errors, scales)
    return rep


# ---------------------------------------------------------------------------
# flow sweep


def run_flow(cfg: FlowConfig, threads: int = 1) -> ExperimentReport:
    cols = ["n_width", "K", "measured_error", "prop4_bound", "thm4_bound", "neuron_count"]
    rep = ExperimentReport(cfg.kind, config_hash(cfg), cfg.seed, cols)
    budget = _Budget(cfg.max_seconds)
    f = _system(cfg)
    if cfg.system == "lorenz96":
        rhs = lambda Y: lorenz96_rhs(Y, cfg.F)  # noqa: E731
    else:
        rhs = lambda Y: f.evaluate(Y, check_domains=False)  # noqa: E731
    feats = extract_features(f)
    radii = f.input_radii
    A = sup_norm(f, radii)
    B = jacobian_norm(f, radii)
    X0 = box_points(np.full(f.d, cfg.x_radius), cfg.initial_states, seed=cfg.seed + 2)
    exact = exact_flow(rhs, cfg.T, X0)
    try:
        for n in cfg.widths:
            K = cfg.K or default_steps(n, feats.r_max)
            if K * (len(f) + f.d) > cfg.max_nodes:
                raise BudgetExceededError(f"unrolled flow with K={K} exceeds {cfg.max_nodes} nodes")
            h = cfg.T / K
            L_elr = elr_lipschitz(f, h, radii)
            alpha = (L_elr - 1.0) / h
            eul = euler_flow(f, cfg.T, K, cfg.x_radius)
            ex = eul(X0)
            euler_bound = A * math.exp(B * cfg.T) * cfg.T / K
            best = None
            for s in cfg.seeds:
                nets, errs = fit_nodes(f, n, FitConfig(seed=s), threads=threads)
                fNN = assemble_deep(f, nets, merge=True)
                Xf = box_points(radii, 8192, seed=s + 7)
                e_f = float(np.max(np.abs(fNN(Xf, check_domains=False) - f(Xf))))
                net = flow_net(fNN, cfg.T, K, cfg.x_radius)
                nx = net(X0, check_domains=False)
                gap = float(np.max(np.abs(nx - ex)))
                meas = float(np.max(np.abs(nx - exact)))
                p4 = iterate_error_bound(L_elr, K, h * e_f, 0.0)
                rep.check(f"euler_vs_net n={n} seed={s}", p4, gap)
                if best is None or meas < best[0]:
                    best = (meas, p4, net.neuron_count)
                budget.check(f"width {n} seed {s}")
            meas, p4, count = best
            t4 = thm4_bound(feats, A, B, alpha, cfg.T, n, cfg.C1).bound
            rep.rows.append({"n_width": n, "K": K, "measured_error": meas, "prop4_bound": p4 + euler_bound, "thm4_bound": t4, "neuron_count": count})
            rep.check(f"global_error n={n}", p4 + euler_bound, meas)
        errs = [r["measured_error"] for r in rep.rows]
        mono = all(b <= a for a, b in zip(errs, errs[1:]))
        rep.check("measured_error_monotone", 0.0, 0.0 if mono else 1.0, mono)
    except BudgetExceededError as exc:
        rep.budget_exceeded = True
        rep.extra["budget"] = str(exc)
    rep.extra.update({"A": A, "B": B, "features": feats.to_dict()})
    return rep


# ---------------------------------------------------------------------------
# control


def run_optctl(cfg: OptctlConfig) -> ExperimentReport:
    cols = ["eps", "K", "h", "e1", "measured_error", "thm7_bound", "neuron_count"]
    rep = ExperimentReport(cfg.kind, config_hash(cfg), cfg.seed, cols)
    budget = _Budget(cfg.max_seconds)
    try:
        if cfg.problem == "lq":
            prob = make_lq_problem(cfg.a, cfg.x_target, cfg.rho, cfg.T, cfg.N_t, cfg.x_radius)
            tc = Thm8Config(widths=tuple(cfg.widths), max_substeps=cfg.max_substeps, x_samples=cfg.x_samples, seed=cfg.seed)
            runs = []
            for eps in cfg.eps:
                _, r = thm8_pipeline(prob, eps, tc)
                r.pop("seconds", None)
                runs.append(r)
                rep.rows.append({"eps": eps, "K": r["K"], "h": r["h"], "e1": r["e1"], "measured_error": r["measured_error"], "thm7_bound": r["thm7_bound"], "neuron_count": r["neuron_count"]})
                rep.check(f"within_3eps eps={eps}", 3 * eps, r["measured_error"])
                budget.check(f"eps {eps}")
            rep.extra["runs"] = runs
            rep.extra["K_times_eps"] = [r["K_raw"] * r["eps"] for r in runs]
            rep.extra["h_over_eps2"] = [r["h"] / r["eps"] ** 2 for r in runs]
        elif cfg.problem == "quadratic":
            rng = np.random.default_rng(cfg.seed)
            M = rng.uniform(-1, 1, (2, 2))
            M /= max(1.0, np.linalg.norm(M, 2))
            for e1 in cfg.e1s:
                prob, Vn = make_quadratic_problem(M, cfg.x_radius, e1)
                X = prob.sample_x(cfg.x_samples, seed=cfg.seed)
                for K in cfg.Ks:
                    for h in cfg.hs:
                        sol = solve_optimal(prob, K, h, V=Vn)
                        err = float(np.max(np.linalg.norm(sol(X) - prob.u_star(X), axis=1)))
                        bnd = thm7_bound(prob.gamma, sol.L, 1.0, prob.q, K, h, e1)
                        rep.rows.append({"eps": float("nan"), "K": K, "h": h, "e1": e1, "measured_error": err, "thm7_bound": bnd, "neuron_count": 0})
                        rep.check(f"thm7 K={K} h={h} e1={e1}", bnd, err)
                budget.check(f"e1 {e1}")
        else:
            raise ConfigError(f"unknown control problem {cfg.problem!r}")
    except BudgetExceededError as exc:
        rep.budget_exceeded = True
        rep.extra["budget"] = str(exc)
    return rep


def run_experiment(cfg, out_dir=None, threads: int = 1) -> ExperimentReport:
    """Run one configured experiment and (optionally) write its report files."""
    if isinstance(cfg, (str, Path)):
        cfg = load_config(cfg)
    elif isinstance(cfg, dict):
        cfg = config_from_dict(cfg)
    if isinstance(cfg, AuditConfig):
        rep = run_audit(cfg)
    elif isinstance(cfg, ApproxConfig):
        rep = run_approx(cfg, threads)
    elif isinstance(cfg, FlowConfig):
        rep = run_flow(cfg, threads)
    elif isinstance(cfg, OptctlConfig):
        rep = run_optctl(cfg)
    else:
        raise ConfigError(f"unsupported config {type(cfg).__name__}")
    if out_dir is not None:
        rep.write(out_dir)
    return rep

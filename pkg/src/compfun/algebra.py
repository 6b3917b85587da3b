"""Induced-DAG constructions on compositional functions.

All operations return new :class:`~compfun.dag.CompositionalFunction`
objects and never share hidden nodes between operands; only input layers are
overlapped.  Domain radii of newly created nodes are set from sampled ranges
of their sources, inflated by :data:`RANGE_MARGIN`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dag import CompositionalFunction, Node, _fresh_id, identity_node, within
from .errors import (
    CompatibilityError,
    DivisionSafetyError,
    DomainError,
    DomainEscapeError,
    MergeBlockedError,
    RangeError,
    ShapeError,
    UnsupportedError,
)
from .sampling import box_points

__all__ = [
    "RANGE_MARGIN",
    "TruncationInfo",
    "compose",
    "compose_power",
    "divide",
    "identity_dag",
    "inner_product",
    "is_neural_network",
    "linear_combine",
    "merge_linear_nodes",
    "output_ranges",
    "stack",
    "substitute_node",
    "truncate",
]

RANGE_MARGIN = 1.25
RANGE_SAMPLES = 2048


def output_ranges(f: CompositionalFunction, samples: int = RANGE_SAMPLES, seed: int = 0) -> np.ndarray:
    """Sampled ``max |f_k|`` for each output over the input box."""
    X = box_points(f.input_radii, samples, seed=seed)
    Y = f.evaluate(X, check_domains=False)
    return np.max(np.abs(Y), axis=0)


def _radius_for(r) -> float:
    return float(RANGE_MARGIN * np.max(r) + 1e-9)


def _check_same_inputs(f1: CompositionalFunction, f2: CompositionalFunction, need_q: bool = True):
    if f1.d != f2.d:
        raise ShapeError(f"input dimensions differ: {f1.d} vs {f2.d}")
    if need_q and f1.q != f2.q:
        raise ShapeError(f"output dimensions differ: {f1.q} vs {f2.q}")
    if not np.allclose(f1.input_radii, f2.input_radii, rtol=1e-12, atol=0):
        raise ShapeError("operands have different input domains")


def _unique_prefix(base: str, ids) -> str:
    prefix = base
    while any(i.startswith(prefix) for i in ids):
        prefix = "_" + prefix
    return prefix


def _merge_pair(f1: CompositionalFunction, f2: CompositionalFunction):
    """Shared input layer followed by the relabelled hidden/output blocks.

    Returns ``(nodes, out1, out2, taken)`` where ``out1``/``out2`` are the new
    ids of each operand's outputs.
    """
    ins = f1.input_ids
    m1 = {i: i for i in ins}
    m2 = {j: i for j, i in zip(f2.input_ids, ins)}
    for n in f1.nodes:
        if not n.is_input:
            m1[n.id] = f"a.{n.id}"
    for n in f2.nodes:
        if not n.is_input:
            m2[n.id] = f"b.{n.id}"
    clash = set(ins) & ({v for k, v in m1.items() if k not in ins} | {v for k, v in m2.items() if k not in f2.input_ids})
    if clash:
        raise ShapeError(f"input ids {sorted(clash)} collide with relabelled node ids")
    nodes = list(f1.input_nodes)
    for f, mp in ((f1, m1), (f2, m2)):
        for n in f.nodes:
            if n.is_input:
                continue
            nodes.append(n.with_(id=mp[n.id], inputs=tuple(mp[s] for s in n.inputs)))
    out1 = [m1[i] for i in f1.output_ids]
    out2 = [m2[i] for i in f2.output_ids]
    return nodes, out1, out2, {n.id for n in nodes}


def linear_combine(f1: CompositionalFunction, f2: CompositionalFunction, a: float, b: float) -> CompositionalFunction:
    """Induced DAG of ``a f1 + b f2`` with a new linear output layer."""
    _check_same_inputs(f1, f2)
    r1, r2 = output_ranges(f1), output_ranges(f2)
    nodes, out1, out2, taken = _merge_pair(f1, f2)
    layer = max(f1.l_max, f2.l_max) + 1
    for k, (u, v) in enumerate(zip(out1, out2)):
        nid = _fresh_id(f"out{k + 1}", taken)
        taken.add(nid)
        nodes.append(Node(nid, "linear", "affine", (a, b, 0.0), layer, (u, v), _radius_for([r1[k], r2[k]]), 1))
    return CompositionalFunction(tuple(nodes))


def inner_product(f1: CompositionalFunction, f2: CompositionalFunction) -> CompositionalFunction:
    """Induced DAG of ``f1 . f2`` whose single output is a ``dot`` node."""
    _check_same_inputs(f1, f2)
    r = np.concatenate([output_ranges(f1), output_ranges(f2)])
    nodes, out1, out2, taken = _merge_pair(f1, f2)
    layer = max(f1.l_max, f2.l_max) + 1
    nid = _fresh_id("out", taken)
    nodes.append(Node(nid, "general", "dot", (), layer, tuple(out1) + tuple(out2), _radius_for(r), 2))
    return CompositionalFunction(tuple(nodes))


def divide(f1: CompositionalFunction, f2: CompositionalFunction, samples: int = 4096, seed: int = 0) -> CompositionalFunction:
    """Induced DAG of ``f1 / f2`` for scalar operands.

    The denominator is sampled on the corners and Sobol points of the input
    box; a sign change or a value within ``1e-12`` of zero is rejected.
    """
    if f1.q != 1 or f2.q != 1:
        raise ShapeError("division needs scalar operands")
    _check_same_inputs(f1, f2)
    X = box_points(f2.input_radii, samples, seed=seed)
    den = f2.evaluate(X, check_domains=False)[:, 0]
    if np.min(np.abs(den)) < 1e-12 or (np.min(den) < 0 < np.max(den)):
        raise DivisionSafetyError("the denominator vanishes or changes sign on the sampled domain")
    r = [output_ranges(f1)[0], float(np.max(np.abs(den)))]
    nodes, out1, out2, taken = _merge_pair(f1, f2)
    layer = max(f1.l_max, f2.l_max) + 1
    nid = _fresh_id("out", taken)
    nodes.append(Node(nid, "general", "quotient", (), layer, (out1[0], out2[0]), _radius_for(r), 2))
    return CompositionalFunction(tuple(nodes))


def stack(f1: CompositionalFunction, f2: CompositionalFunction) -> CompositionalFunction:
    """``x -> (f1(x), f2(x))`` over a shared input layer.

    Outputs of the shallower operand are lifted to the common last layer,
    which is allowed because output nodes have no consumers.
    """
    _check_same_inputs(f1, f2, need_q=False)
    nodes, out1, out2, _ = _merge_pair(f1, f2)
    top = max(f1.l_max, f2.l_max)
    outs = set(out1) | set(out2)
    nodes = [n.with_(layer=top) if n.id in outs else n for n in nodes]
    return CompositionalFunction(tuple(nodes))


def identity_dag(d: int, R) -> CompositionalFunction:
    """The map ``x -> x`` on ``[-R, R]^d`` with one identity node per output."""
    radii = np.broadcast_to(np.asarray(R, dtype=float), (d,))
    nodes = [Node(f"x{k + 1}", "input", R=radii[k]) for k in range(d)]
    nodes += [identity_node(f"y{k + 1}", f"x{k + 1}", 1, radii[k]) for k in range(d)]
    return CompositionalFunction(tuple(nodes))


# ---------------------------------------------------------------------------
# substitution


def substitute_node(
    f: CompositionalFunction,
    node_id: str,
    g: CompositionalFunction,
    check_range: bool = True,
    samples: int = RANGE_SAMPLES,
) -> CompositionalFunction:
    """Replace node ``node_id`` of ``f`` by the scalar function ``g``.

    Slot ``k`` of the node feeds input ``k`` of ``g``.  With ``i`` the node's
    layer and ``delta = i - (highest layer feeding the node)``, nodes of ``f``
    in layers ``>= i`` move up by ``max(0, l_max(g) - delta)``; hidden nodes
    of ``g`` land at ``i - delta + layer``; and ``g``'s output keeps the id
    ``node_id`` and lands at ``max(i, i - delta + l_max(g))``.
    """
    n = f[node_id]
    if n.is_input:
        raise ShapeError("input nodes cannot be substituted")
    if g.q != 1:
        raise ShapeError(f"substituted function must be scalar, got q={g.q}")
    if g.d != n.d:
        raise ShapeError(f"node {node_id!r} has {n.d} inputs but the substitute has {g.d}")
    if check_range:
        if np.any(g.input_radii < n.R * (1 - 1e-9)):
            raise RangeError(f"substitute's input domain is smaller than the domain of node {node_id!r}")
        cons = f.consumers(node_id)
        if cons:
            limit = min(f[c].R for c in cons)
            r = output_ranges(g, samples)[0]
            if not within(np.array([r]), limit):
                raise RangeError(f"substitute's range {r:.6g} exceeds the consumer domain {limit:.6g} of {node_id!r}")
    i = n.layer
    src_top = max(f[s].layer for s in n.inputs)
    delta = i - src_top
    shift = max(0, g.l_max - delta)
    taken = set(f._index)
    (g_out,) = g.output_ids
    mp = dict(zip(g.input_ids, n.inputs))
    mp[g_out] = node_id
    for gn in g.nodes:
        if not gn.is_input and gn.id != g_out:
            nid = _fresh_id(f"{node_id}/{gn.id}", taken)
            taken.add(nid)
            mp[gn.id] = nid
    block = []
    for gn in g.nodes:
        if gn.is_input:
            continue
        layer = max(i, src_top + g.l_max) if gn.id == g_out else src_top + gn.layer
        block.append(gn.with_(id=mp[gn.id], layer=layer, inputs=tuple(mp[s] for s in gn.inputs)))
    nodes = []
    for fn in f.nodes:
        if fn.id == node_id:
            nodes.extend(block)
        elif fn.layer >= i and shift:
            nodes.append(fn.with_(layer=fn.layer + shift))
        else:
            nodes.append(fn)
    return CompositionalFunction(tuple(nodes))


# ---------------------------------------------------------------------------
# composition


def _prune_dead(nodes: list, keep: set) -> list:
    """Drop non-input nodes that cannot reach any node in ``keep``."""
    by_id = {n.id: n for n in nodes}
    live = set()
    stack_ = list(keep)
    while stack_:
        nid = stack_.pop()
        if nid in live:
            continue
        live.add(nid)
        stack_.extend(by_id[nid].inputs)
    return [n for n in nodes if n.is_input or n.id in live]


def _check_fits(f: CompositionalFunction, radii: np.ndarray, samples: int, what: str):
    r = output_ranges(f, samples)
    bad = np.flatnonzero(r > radii * (1 + 1e-9) + 1e-12)
    if bad.size:
        k = int(bad[0])
        raise RangeError(f"output {k + 1} of the inner function reaches {r[k]:.6g}, outside {what} radius {radii[k]:.6g}")


def compose(
    g: CompositionalFunction,
    f: CompositionalFunction,
    check_range: bool = True,
    samples: int = RANGE_SAMPLES,
) -> CompositionalFunction:
    """Induced DAG of ``g o f``: ``g``'s graph stacked after ``f``'s output layer.

    Nodes of ``g`` keep their relative layers shifted by ``l_max(f)``.  If
    some input of ``g`` is unused, the ``f`` nodes that only fed it are
    dropped so that every output of the result lies in the last layer.
    """
    if f.q != g.d:
        raise ShapeError(f"cannot compose: inner function has {f.q} outputs, outer has {g.d} inputs")
    if check_range:
        _check_fits(f, g.input_radii, samples, "outer input")
    prefix = _unique_prefix(f"c{f.l_max}.", f._index)
    nodes = list(f.nodes) + _stage(g, f.output_ids, f.l_max, prefix)
    return CompositionalFunction(tuple(_prune_dead(nodes, set(_stage_outputs(g, prefix)))))


def _stage(g: CompositionalFunction, feed, offset: int, prefix: str) -> list:
    mp = dict(zip(g.input_ids, feed))
    for n in g.nodes:
        if not n.is_input:
            mp[n.id] = prefix + n.id
    return [n.with_(id=mp[n.id], layer=n.layer + offset, inputs=tuple(mp[s] for s in n.inputs)) for n in g.nodes if not n.is_input]


def _stage_outputs(g: CompositionalFunction, prefix: str) -> list:
    return [prefix + i for i in g.output_ids]


def compose_power(
    g: CompositionalFunction,
    K: int,
    first: CompositionalFunction | None = None,
    check_escape: bool = True,
    samples: int = 1024,
    seed: int = 0,
) -> CompositionalFunction:
    """The ``K``-fold self-composition ``g o ... o g``.

    ``first`` optionally replaces the innermost copy (typically ``g`` with a
    smaller input box).  The graph equals repeated :func:`compose` but is
    built in one pass.  With ``check_escape`` the iterates of sampled initial
    points are tracked and the first step whose input leaves ``g``'s domain
    raises :class:`DomainEscapeError` carrying that step index.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if g.d != g.q:
        raise ShapeError("self-composition needs a map from R^d to R^d")
    head = first if first is not None else g
    if check_escape:
        check_iterates(g, K, head, samples=samples, seed=seed)
    nodes = list(head.nodes)
    feed = head.output_ids
    offset = head.l_max
    taken = {n.id for n in nodes}
    for k in range(1, K):
        prefix = _unique_prefix(f"s{k}.", taken)
        block = _stage(g, feed, offset, prefix)
        nodes.extend(block)
        taken.update(n.id for n in block)
        feed = _stage_outputs(g, prefix)
        offset += g.l_max
    return CompositionalFunction(tuple(_prune_dead(nodes, set(feed))))


def check_iterates(g, K: int, head=None, samples: int = 1024, seed: int = 0) -> int:
    """Iterate ``g`` ``K`` times on samples of ``head``'s box, checking domains.

    Returns the number of sampled initial points.  Raises
    :class:`DomainEscapeError` naming the first iterate that leaves the domain
    (iterate ``k`` is the input to the ``(k + 1)``-th application).
    """
    head = head if head is not None else g
    X = box_points(head.input_radii, samples, seed=seed)
    for k in range(K):
        fn = head if k == 0 else g
        try:
            X = fn.evaluate(X, check_domains=True)
        except (DomainError, CompatibilityError) as exc:
            raise DomainEscapeError(f"iterate {k} leaves the domain: {exc}", index=k) from None
    return X.shape[0]


# ---------------------------------------------------------------------------
# truncation


@dataclass(frozen=True)
class TruncationInfo:
    """Dummy inputs of a truncation, in order, named by original node ids."""

    layer: int
    dummy_ids: tuple

    def index(self, node_id: str) -> int:
        return self.dummy_ids.index(node_id)


def _truncate(f: CompositionalFunction, layer_i: int):
    survivors = [n for n in f.nodes if n.layer <= layer_i and any(f[c].layer > layer_i for c in f.consumers(n.id))]
    survivors.sort(key=lambda n: 0 if n.layer == layer_i else 1)
    dummies = []
    for n in survivors:
        R = min(f[c].R for c in f.consumers(n.id) if f[c].layer > layer_i)
        dummies.append(Node(n.id, "input", None, (), 0, (), R, n.m))
    upper = [n.with_(layer=n.layer - layer_i) for n in f.nodes if n.layer > layer_i]
    fbar = CompositionalFunction(tuple(dummies + upper))
    return fbar, TruncationInfo(layer_i, tuple(n.id for n in dummies))


def truncate(f: CompositionalFunction, layer_i: int):
    """Cut ``f`` along layer ``layer_i``.

    Nodes in layers ``<= layer_i`` that feed higher layers become dummy
    inputs (layer-``layer_i`` nodes first); each dummy's domain is the
    intersection of its remaining consumers' domains.  Returns the truncated
    function and a :class:`TruncationInfo`.
    """
    if not 1 <= layer_i <= f.l_max - 1:
        raise UnsupportedError(f"truncation layer must be in [1, {f.l_max - 1}], got {layer_i}")
    return _truncate(f, layer_i)


# ---------------------------------------------------------------------------
# neural-network structure


def _is_linear(n: Node) -> bool:
    return n.kind in ("linear", "identity")


def merge_linear_nodes(f: CompositionalFunction) -> CompositionalFunction:
    """Absorb every hidden linear or identity node into its consumers.

    Hidden linear nodes are processed in increasing layer order.  A consumer
    with parameters ``(w, b)`` (neuron or affine) reading ``a . y + c`` in some
    slot becomes a node reading ``y`` with weights ``w a`` and bias
    ``b + w c``; repeated sources are summed.  The consumer's domain grows to
    cover the absorbed node's domain.
    """
    outs = set(f.output_ids)
    hidden_linear = [n for n in f.order() if _is_linear(n) and n.id not in outs]
    if not hidden_linear:
        return f
    cur = {n.id: n for n in f.nodes}
    consumers = {k: list(v) for k, v in ((n.id, f.consumers(n.id)) for n in f.nodes)}
    for lin in hidden_linear:
        lin = cur[lin.id]
        a, c = lin.params[:-1], lin.params[-1]
        for cid in consumers[lin.id]:
            con = cur[cid]
            if con.kind == "general":
                raise MergeBlockedError(f"linear node {lin.id!r} feeds the general node {cid!r}, which is not a neuron")
            weights: dict = {}
            bias = con.params[-1]
            for s, w in zip(con.inputs, con.params[:-1]):
                if s == lin.id:
                    for t, at in zip(lin.inputs, a):
                        weights[t] = weights.get(t, 0.0) + w * at
                    bias += w * c
                else:
                    weights[s] = weights.get(s, 0.0) + w
            srcs = tuple(weights)
            params = tuple(weights[s] for s in srcs) + (bias,)
            kind = "linear" if con.kind == "identity" else con.kind
            cur[cid] = con.with_(kind=kind, inputs=srcs, params=params, R=max(con.R, lin.R))
            for s in srcs:
                if cid not in consumers[s]:
                    consumers[s].append(cid)
        for s in lin.inputs:
            if lin.id in consumers[s]:
                consumers[s].remove(lin.id)
        del cur[lin.id]
    return CompositionalFunction(tuple(cur[n.id] for n in f.nodes if n.id in cur))


def is_neural_network(f: CompositionalFunction) -> bool:
    """Hidden nodes are neurons sharing one activation; outputs are linear."""
    if not all(_is_linear(n) for n in f.output_nodes):
        return False
    hidden = f.hidden_nodes()
    if not all(n.kind == "neuron" for n in hidden):
        return False
    return len({n.primitive for n in hidden}) <= 1

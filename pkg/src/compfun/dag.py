"""Layered-DAG data model for compositional functions.

A :class:`CompositionalFunction` is an ordered tuple of scalar
:class:`Node` objects.  Input nodes sit in layer 0, every other node lists the
ids of its inputs in slot order, and every edge goes strictly upward in layer.
Output nodes are the non-input nodes without consumers, taken in declared
order.  Objects are immutable; every transformation returns a new function.
"""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import primitives as prim
from .errors import CompatibilityError, DomainError, ShapeError, StructureError
from .sampling import box_points

__all__ = [
    "KINDS",
    "CompositionalFunction",
    "Node",
    "ValidationItem",
    "ValidationReport",
    "evaluate",
    "insert_identity_nodes",
    "validate",
]

KINDS = ("input", "linear", "general", "identity", "neuron")

#: relative slack when comparing a value against a closed domain boundary
DOMAIN_RTOL = 1e-9
DOMAIN_ATOL = 1e-12


def within(values: np.ndarray, radius: float) -> bool:
    return bool(np.all(np.abs(values) <= radius * (1 + DOMAIN_RTOL) + DOMAIN_ATOL))


@dataclass(frozen=True)
class Node:
    """One scalar node.

    ``R`` is the half-width of the node's domain hypercube and ``m`` its
    smoothness order.  For input nodes ``R`` is the half-width of that input
    coordinate's interval.
    """

    id: str
    kind: str
    primitive: str | None = None
    params: tuple = ()
    layer: int = 0
    inputs: tuple = ()
    R: float = 1.0
    m: int = 2

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        object.__setattr__(self, "inputs", tuple(str(s) for s in self.inputs))
        object.__setattr__(self, "R", float(self.R))
        object.__setattr__(self, "layer", int(self.layer))
        object.__setattr__(self, "m", int(self.m))
        if self.kind not in KINDS:
            raise StructureError(f"node {self.id!r}: unknown kind {self.kind!r}")
        if not self.R > 0:
            raise StructureError(f"node {self.id!r}: domain radius must be positive")
        if self.m < 1:
            raise StructureError(f"node {self.id!r}: smoothness order must be >= 1")
        if self.kind == "input":
            if self.inputs or self.primitive is not None:
                raise StructureError(f"input node {self.id!r} cannot have inputs or a primitive")
            return
        if not self.inputs:
            raise StructureError(f"node {self.id!r} of kind {self.kind} needs at least one input")
        try:
            if self.kind == "neuron":
                prim.activation(self.primitive)
                if len(self.params) != len(self.inputs) + 1:
                    raise ValueError("neuron params are (w_1, ..., w_k, b)")
            else:
                entry = prim.get(self.primitive)
                if self.kind in ("linear", "identity") and not entry.affine:
                    raise ValueError(f"{self.kind} nodes must use the affine primitive")
                if self.kind == "general" and entry.affine:
                    raise ValueError("an affine node is linear, not general")
                if self.kind == "identity" and self.params != (1.0, 0.0):
                    raise ValueError("identity nodes have params (1, 0)")
                prim.check_arity(self.primitive, self.params, len(self.inputs))
        except (ValueError, KeyError) as exc:
            raise StructureError(f"node {self.id!r}: {exc}") from None

    @property
    def d(self) -> int:
        return len(self.inputs)

    @property
    def is_input(self) -> bool:
        return self.kind == "input"

    def evaluate(self, Z: np.ndarray) -> np.ndarray:
        """Evaluate on a batch ``Z`` of shape ``(N, d)``."""
        if self.kind == "neuron":
            return prim.neuron_fn(self.primitive, self.params, Z)
        return prim.get(self.primitive).fn(self.params, Z)

    def partial(self, k: tuple, Z: np.ndarray) -> np.ndarray:
        """Exact mixed partial derivative for the multi-index ``k``."""
        if self.kind == "neuron":
            return prim.neuron_deriv(self.primitive, self.params, tuple(k), Z)
        return prim.get(self.primitive).deriv(self.params, tuple(k), Z)

    def with_(self, **changes) -> "Node":
        return replace(self, **changes)


def identity_node(node_id: str, src: str, layer: int, R: float) -> Node:
    return Node(node_id, "identity", "affine", (1.0, 0.0), layer, (src,), R, 1)


def _fresh_id(base: str, taken: set) -> str:
    if base not in taken:
        return base
    k = 1
    while f"{base}#{k}" in taken:
        k += 1
    return f"{base}#{k}"


@dataclass(frozen=True, eq=False)
class CompositionalFunction:
    """A layered DAG of scalar nodes computing a map ``R^d -> R^q``.

    The input dimension ``d`` is the number of input nodes, the output
    dimension ``q`` the number of output nodes, and ``R`` the largest input
    half-width.  Per-coordinate half-widths live on the input nodes.
    """

    nodes: tuple
    _index: dict = field(init=False, repr=False)
    _consumers: dict = field(init=False, repr=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        index = {}
        for pos, n in enumerate(nodes):
            if not isinstance(n, Node):
                raise StructureError(f"entry {pos} is not a Node")
            if n.id in index:
                raise StructureError(f"duplicate node id {n.id!r}")
            index[n.id] = pos
        consumers = {n.id: [] for n in nodes}
        for n in nodes:
            for src in n.inputs:
                if src not in index:
                    raise StructureError(f"node {n.id!r} references unknown node {src!r}")
                if n.id not in consumers[src]:
                    consumers[src].append(n.id)
        if not any(n.is_input for n in nodes):
            raise StructureError("a compositional function needs at least one input node")
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_consumers", {k: tuple(v) for k, v in consumers.items()})

    # -- structure ------------------------------------------------------------

    def __getitem__(self, node_id: str) -> Node:
        return self.nodes[self._index[node_id]]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    def consumers(self, node_id: str) -> tuple:
        return self._consumers[node_id]

    @property
    def input_nodes(self) -> tuple:
        return tuple(n for n in self.nodes if n.is_input)

    @property
    def output_nodes(self) -> tuple:
        return tuple(n for n in self.nodes if not n.is_input and not self._consumers[n.id])

    @property
    def input_ids(self) -> tuple:
        return tuple(n.id for n in self.input_nodes)

    @property
    def output_ids(self) -> tuple:
        return tuple(n.id for n in self.output_nodes)

    @property
    def d(self) -> int:
        return len(self.input_nodes)

    @property
    def q(self) -> int:
        return len(self.output_nodes)

    @property
    def input_radii(self) -> np.ndarray:
        return np.array([n.R for n in self.input_nodes])

    @property
    def R(self) -> float:
        return float(self.input_radii.max())

    @property
    def l_max(self) -> int:
        return max(n.layer for n in self.nodes)

    @property
    def general_nodes(self) -> tuple:
        return tuple(n for n in self.nodes if n.kind == "general")

    @property
    def neuron_count(self) -> int:
        return sum(1 for n in self.nodes if n.kind == "neuron")

    @property
    def edges(self) -> list:
        """All edges as ``(source, target, slot)`` triples."""
        return [(s, n.id, k) for n in self.nodes for k, s in enumerate(n.inputs)]

    def layer_map(self) -> dict:
        return {n.id: n.layer for n in self.nodes}

    def hidden_nodes(self) -> tuple:
        outs = set(self.output_ids)
        return tuple(n for n in self.nodes if not n.is_input and n.id not in outs)

    def order(self) -> list:
        """Nodes in nondecreasing layer order, ties broken by declaration."""
        return [self.nodes[i] for i in sorted(range(len(self.nodes)), key=lambda i: (self.nodes[i].layer, i))]

    def replace_nodes(self, nodes: Iterable[Node]) -> "CompositionalFunction":
        return CompositionalFunction(tuple(nodes))

    # -- evaluation -------------------------------------------------------------

    def node_values(
        self,
        X,
        check_domains: bool = True,
        overrides: Mapping[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] | None = None,
    ) -> dict:
        """Values of every node on a batch ``X`` of shape ``(N, d)``.

        ``overrides`` maps a node id to ``g(value, Z)`` whose result replaces
        the node's value; ``Z`` is the node's input matrix.  This is the hook
        used for perturbation experiments.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ShapeError(f"expected points of dimension {self.d}, got array of shape {X.shape}")
        values: dict = {}
        for col, n in enumerate(self.input_nodes):
            v = X[:, col]
            if check_domains and not within(v, n.R):
                raise DomainError(f"input {n.id!r} outside [-{n.R}, {n.R}]")
            values[n.id] = v
        overrides = overrides or {}
        for n in self.order():
            if n.is_input:
                continue
            try:
                cols = [values[s] for s in n.inputs]
            except KeyError:
                raise StructureError(f"node {n.id!r} consumes a node that is not in a lower layer") from None
            Z = np.column_stack(cols)
            if check_domains and not within(Z, n.R):
                bad = n.inputs[int(np.argmax(np.max(np.abs(Z), axis=0)))]
                raise CompatibilityError(
                    f"node {n.id!r} received a value from {bad!r} outside its domain [-{n.R}, {n.R}]",
                    node=n.id,
                    source=bad,
                )
            v = n.evaluate(Z)
            if n.id in overrides:
                v = np.asarray(overrides[n.id](v, Z), dtype=float)
            values[n.id] = v
        return values

    def evaluate(self, x, check_domains: bool = True, overrides=None) -> np.ndarray:
        """Evaluate at one point of shape ``(d,)`` or a batch of shape ``(N, d)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        values = self.node_values(X, check_domains=check_domains, overrides=overrides)
        out = np.column_stack([values[i] for i in self.output_ids])
        return out[0] if single else out

    def __call__(self, x, **kwargs) -> np.ndarray:
        return self.evaluate(x, **kwargs)

    def summary(self) -> dict:
        kinds = {k: 0 for k in KINDS}
        for n in self.nodes:
            kinds[n.kind] += 1
        return {"d": self.d, "q": self.q, "R": self.R, "l_max": self.l_max, "nodes": len(self.nodes), "edges": len(self.edges), **kinds}


def evaluate(f, x, **kwargs) -> np.ndarray:
    """Evaluate ``f`` (a compositional function or a lazy flow) at ``x``."""
    return f.evaluate(x, **kwargs)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationItem:
    check: str
    passed: bool
    message: str = ""
    edge: tuple | None = None


@dataclass
class ValidationReport:
    items: list

    @property
    def passed(self) -> bool:
        return all(it.passed for it in self.items)

    def failures(self) -> list:
        return [it for it in self.items if not it.passed]

    def __bool__(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "items": [
                {"check": it.check, "passed": it.passed, "message": it.message, "edge": list(it.edge) if it.edge else None}
                for it in self.items
            ],
        }


def _structure_items(f: CompositionalFunction) -> list:
    items = []
    sorter = graphlib.TopologicalSorter({n.id: set(n.inputs) for n in f.nodes})
    try:
        tuple(sorter.static_order())
        items.append(ValidationItem("acyclic", True))
    except graphlib.CycleError as exc:
        items.append(ValidationItem("acyclic", False, f"cycle through {exc.args[1]}"))

    layer_ok = True
    for n in f.nodes:
        if n.is_input and n.layer != 0:
            layer_ok = False
            items.append(ValidationItem("layering", False, f"input node {n.id!r} is in layer {n.layer}, not 0"))
        if not n.is_input and n.layer < 1:
            layer_ok = False
            items.append(ValidationItem("layering", False, f"non-input node {n.id!r} is in layer {n.layer}"))
    for src, dst, _ in f.edges:
        if f[src].layer >= f[dst].layer:
            layer_ok = False
            items.append(
                ValidationItem(
                    "layering",
                    False,
                    f"edge {src!r} (layer {f[src].layer}) -> {dst!r} (layer {f[dst].layer}) does not go up",
                    (src, dst),
                )
            )
    if layer_ok:
        items.append(ValidationItem("layering", True))

    slot_ok = True
    for n in f.nodes:
        if n.is_input:
            continue
        try:
            if n.kind == "neuron":
                assert len(n.params) == n.d + 1
            else:
                prim.check_arity(n.primitive, n.params, n.d)
        except (ValueError, AssertionError) as exc:
            slot_ok = False
            items.append(ValidationItem("slots", False, f"node {n.id!r}: {exc}"))
    if slot_ok:
        items.append(ValidationItem("slots", True))

    outs = f.output_nodes
    if not outs:
        items.append(ValidationItem("outputs", False, "no output nodes"))
    else:
        top = f.l_max
        stray = [n.id for n in outs if n.layer != top]
        if stray:
            items.append(ValidationItem("outputs", False, f"output nodes {stray} are not in the last layer {top}"))
        else:
            items.append(ValidationItem("outputs", True))
    return items


def validate(f: CompositionalFunction, samples_per_edge: int = 4096, seed: int = 0) -> ValidationReport:
    """Check structure and sampled range-in-domain compatibility of ``f``.

    Structural problems are reported as failed items and never raised.  The
    range check evaluates ``f`` on the corners of the input box plus
    ``samples_per_edge`` Sobol points and compares every edge's source range
    with the target's domain.  Domains are treated as closed: a range that
    touches the boundary passes.
    """
    items = _structure_items(f)
    if not all(it.passed for it in items):
        items.append(ValidationItem("ranges", False, "skipped because the structure is invalid"))
        return ValidationReport(items)
    X = box_points(f.input_radii, samples_per_edge, seed=seed)
    values = f.node_values(X, check_domains=False)
    ok = True
    for src, dst, _ in f.edges:
        v = values[src]
        R = f[dst].R
        if not np.all(np.isfinite(v)):
            ok = False
            items.append(ValidationItem("ranges", False, f"node {src!r} produced non-finite values", (src, dst)))
        elif not within(v, R):
            ok = False
            items.append(
                ValidationItem(
                    "ranges",
                    False,
                    f"range of {src!r} reaches {float(np.max(np.abs(v))):.6g}, outside the domain [-{R}, {R}] of {dst!r}",
                    (src, dst),
                )
            )
    if ok:
        items.append(ValidationItem("ranges", True, f"{X.shape[0]} sampled points"))
    return ValidationReport(items)


# ---------------------------------------------------------------------------
# identity insertion


def insert_identity_nodes(f: CompositionalFunction) -> CompositionalFunction:
    """Break every layer-skipping edge with a chain of identity nodes.

    One chain is shared by all consumers of the same source, so an edge
    skipping ``k - 1`` layers gets ``k - 1`` identity nodes.  The domain of
    each identity node is the largest domain among the consumers it serves.
    """
    taken = set(f._index)
    chains: dict = {}  # source id -> {layer: identity node id}
    reach: dict = {}  # source id -> (highest consumer layer - 1, max consumer R)
    for src, dst, _ in f.edges:
        gap = f[dst].layer - f[src].layer
        if gap > 1:
            top, R = reach.get(src, (0, 0.0))
            reach[src] = (max(top, f[dst].layer - 1), max(R, f[dst].R))
    if not reach:
        return f
    extra: dict = {}
    for src, (top, R) in reach.items():
        chain = {}
        prev = src
        built = []
        for layer in range(f[src].layer + 1, top + 1):
            nid = _fresh_id(f"{src}~id{layer}", taken)
            taken.add(nid)
            built.append(identity_node(nid, prev, layer, R))
            chain[layer] = nid
            prev = nid
        chains[src] = chain
        extra[src] = built
    nodes = []
    for n in f.nodes:
        if not n.is_input:
            new_inputs = tuple(
                chains[s][n.layer - 1] if (s in chains and n.layer - f[s].layer > 1) else s for s in n.inputs
            )
            n = n.with_(inputs=new_inputs)
        nodes.append(n)
        nodes.extend(extra.get(n.id, ()))
    return CompositionalFunction(tuple(nodes))


def make_function(nodes: Sequence[Node]) -> CompositionalFunction:
    return CompositionalFunction(tuple(nodes))

"""Reading and writing DAG files.

Format::

    {"d": 2, "q": 1, "R": 1.0,
     "nodes": [{"id": "x1", "kind": "input", "primitive": null, "params": [],
                "layer": 0, "inputs": [], "R_ij": 1.0, "m_ij": 1}, ...]}

``inputs`` entries are ``{"src": id, "slot": k}`` with slots ``0..d_ij-1``.
Unknown fields are rejected; errors carry the field path and line number.
"""

from __future__ import annotations

import json
import json.decoder
import json.scanner
from pathlib import Path

import numpy as np

from .dag import CompositionalFunction, Node, validate
from .errors import CompFunError, SchemaError

__all__ = ["bundled_path", "load_bundled", "dag_from_dict", "dag_to_dict", "dumps_dag", "load_dag", "load_shallow_net", "loads_dag", "save_dag", "save_shallow_net"]

TOP_FIELDS = ("d", "q", "R", "nodes")
NODE_FIELDS = ("id", "kind", "primitive", "params", "layer", "inputs", "R_ij", "m_ij")
INPUT_FIELDS = ("src", "slot")


class _LocDict(dict):
    """A dict remembering the line where its opening brace sits."""

    line: int = 0


class _LocDecoder(json.JSONDecoder):
    def __init__(self, text: str):
        super().__init__()
        base = self.parse_object

        def parse_object(s_and_end, *args):
            s, end = s_and_end
            obj, new_end = base(s_and_end, *args)
            loc = _LocDict(obj)
            loc.line = s.count("\n", 0, end) + 1
            return loc, new_end

        self.parse_object = parse_object
        self.scan_once = json.scanner.py_make_scanner(self)


def _parse(text: str, source: str):
    try:
        return _LocDecoder(text).decode(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _fail(source, path, obj, msg):
    line = getattr(obj, "line", None)
    where = f" (line {line})" if line else ""
    raise SchemaError(f"{source}: {path}: {msg}{where}")


def _fields(source, path, obj, allowed):
    if not isinstance(obj, dict):
        _fail(source, path, obj, "expected an object")
    extra = [k for k in obj if k not in allowed]
    if extra:
        _fail(source, path, obj, f"unknown field(s) {', '.join(map(repr, extra))}")
    missing = [k for k in allowed if k not in obj]
    if missing:
        _fail(source, path, obj, f"missing field(s) {', '.join(map(repr, missing))}")


def _number(source, path, obj, value, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or (integer and not isinstance(value, int)):
        _fail(source, path, obj, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    return value


def dag_from_dict(data, source: str = "<dict>", check: bool = True) -> CompositionalFunction:
    """Build and (optionally) validate a function from parsed JSON."""
    _fields(source, "$", data, TOP_FIELDS)
    nodes_raw = data["nodes"]
    if not isinstance(nodes_raw, list) or not nodes_raw:
        _fail(source, "$.nodes", data, "expected a nonempty array")
    nodes = []
    for i, nd in enumerate(nodes_raw):
        path = f"$.nodes[{i}]"
        _fields(source, path, nd, NODE_FIELDS)
        if not isinstance(nd["id"], str) or not nd["id"]:
            _fail(source, path + ".id", nd, "expected a nonempty string")
        if not isinstance(nd["params"], list):
            _fail(source, path + ".params", nd, "expected an array")
        params = [_number(source, f"{path}.params[{k}]", nd, v) for k, v in enumerate(nd["params"])]
        if nd["primitive"] is not None and not isinstance(nd["primitive"], str):
            _fail(source, path + ".primitive", nd, "expected a string or null")
        layer = _number(source, path + ".layer", nd, nd["layer"], integer=True)
        R = _number(source, path + ".R_ij", nd, nd["R_ij"])
        m = _number(source, path + ".m_ij", nd, nd["m_ij"], integer=True)
        if not isinstance(nd["inputs"], list):
            _fail(source, path + ".inputs", nd, "expected an array")
        slots = {}
        for k, e in enumerate(nd["inputs"]):
            ep = f"{path}.inputs[{k}]"
            _fields(source, ep, e, INPUT_FIELDS)
            if not isinstance(e["src"], str):
                _fail(source, ep + ".src", e, "expected a string")
            s = _number(source, ep + ".slot", e, e["slot"], integer=True)
            if s in slots:
                _fail(source, ep + ".slot", e, f"duplicate slot {s}")
            slots[s] = e["src"]
        if sorted(slots) != list(range(len(slots))):
            _fail(source, path + ".inputs", nd, "slots must be 0..k-1")
        try:
            nodes.append(Node(nd["id"], nd["kind"], nd["primitive"], tuple(params), layer, tuple(slots[s] for s in range(len(slots))), R, m))
        except CompFunError as exc:
            _fail(source, path, nd, str(exc))
    try:
        f = CompositionalFunction(tuple(nodes))
    except CompFunError as exc:
        _fail(source, "$.nodes", data, str(exc))
    d = _number(source, "$.d", data, data["d"], integer=True)
    q = _number(source, "$.q", data, data["q"], integer=True)
    R = _number(source, "$.R", data, data["R"])
    if d != f.d:
        _fail(source, "$.d", data, f"declares {d} inputs but the graph has {f.d}")
    if q != f.q:
        _fail(source, "$.q", data, f"declares {q} outputs but the graph has {f.q}")
    if not np.isclose(R, f.R, rtol=1e-12, atol=0.0):
        _fail(source, "$.R", data, f"declares R={R} but the largest input radius is {f.R}")
    if check:
        report = validate(f)
        if not report.passed:
            msgs = "; ".join(item.message for item in report.failures())
            _fail(source, "$", data, f"graph fails validation: {msgs}")
    return f


def dag_to_dict(f: CompositionalFunction) -> dict:
    nodes = []
    for n in f.nodes:
        nodes.append(
            {
                "id": n.id,
                "kind": n.kind,
                "primitive": n.primitive,
                "params": list(n.params),
                "layer": n.layer,
                "inputs": [{"src": s, "slot": k} for k, s in enumerate(n.inputs)],
                "R_ij": n.R,
                "m_ij": n.m,
            }
        )
    return {"d": f.d, "q": f.q, "R": f.R, "nodes": nodes}


def loads_dag(text: str, source: str = "<string>", check: bool = True) -> CompositionalFunction:
    return dag_from_dict(_parse(text, source), source, check)


def dumps_dag(f: CompositionalFunction) -> str:
    return json.dumps(dag_to_dict(f), indent=1)


def load_dag(path, check: bool = True) -> CompositionalFunction:
    """Load and validate a DAG file; schema problems raise :class:`SchemaError`."""
    path = Path(path)
    return loads_dag(path.read_text(), str(path), check)


def save_dag(f: CompositionalFunction, path) -> Path:
    path = Path(path)
    path.write_text(dumps_dag(f) + "\n")
    return path


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name.removesuffix(".json") + ".meta.json")


def save_shallow_net(net, path) -> Path:
    """Write a fitted net as a DAG file plus a ``.meta.json`` sidecar."""
    path = save_dag(net.to_dag(), path)
    meta = {"width": net.width, "activation": net.activation, **{k: _plain(v) for k, v in net.meta.items()}}
    _meta_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def load_shallow_net(path):
    """``(function, metadata)``; metadata is empty when there is no sidecar."""
    path = Path(path)
    f = load_dag(path)
    mp = _meta_path(path)
    return f, (json.loads(mp.read_text()) if mp.exists() else {})


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    return v


def bundled_path(name: str) -> Path:
    """Path of a DAG file shipped with the package, e.g. ``"lorenz96_d4"``."""
    from importlib.resources import files

    p = Path(str(files("compfun") / "data" / (name if name.endswith(".json") else name + ".json")))
    if not p.exists():
        raise FileNotFoundError(f"no bundled DAG named {name!r}")
    return p


def load_bundled(name: str) -> CompositionalFunction:
    return load_dag(bundled_path(name))

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compfun.errors import SchemaError
from compfun.experiments import random_dag
from compfun.fileio import (
    bundled_path,
    dag_to_dict,
    dumps_dag,
    load_bundled,
    load_dag,
    load_shallow_net,
    loads_dag,
    save_dag,
    save_shallow_net,
)
from compfun.nn import fit_shallow
from compfun.dag import Node
from compfun.ode import make_lorenz96
from compfun.sampling import box_points
from compfun.systems import make_power_system, power_system_direct


def _by_id(f):
    return {n.id: n for n in f.nodes}


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 10_000))
def test_round_trip_preserves_every_node(seed):
    f = random_dag(seed)
    g = loads_dag(dumps_dag(f))
    assert _by_id(g) == _by_id(f)
    X = box_points(f.input_radii, 64, seed=seed)
    assert np.array_equal(g(X), f(X))


def test_file_round_trip(tmp_path, f_trig):
    path = save_dag(f_trig, tmp_path / "trig.json")
    assert _by_id(load_dag(path)) == _by_id(f_trig)


def test_bundled_lorenz_matches_the_builder():
    assert _by_id(load_bundled("lorenz96_d4")) == _by_id(make_lorenz96(4, 8.0, 1.0))


def test_bundled_power_system_matches_the_formula():
    f = load_bundled("power_system")
    assert _by_id(f) == _by_id(make_power_system())
    X = box_points(f.input_radii, 1000, seed=0)
    assert np.allclose(f(X), power_system_direct(X), rtol=1e-12, atol=1e-12)
    # input layer plus three computing layers
    assert f.l_max == 3


def test_unknown_bundled_name():
    with pytest.raises(FileNotFoundError):
        bundled_path("nope")


def _lorenz_text():
    return bundled_path("lorenz96_d4").read_text()


def test_empty_node_array_is_rejected():
    with pytest.raises(SchemaError, match=r"\$\.nodes: expected a nonempty array"):
        loads_dag('{"d": 0, "q": 0, "R": 1.0, "nodes": []}')


def test_unknown_field_reports_path_and_line():
    data = json.loads(_lorenz_text())
    data["nodes"][2]["colour"] = "red"
    text = json.dumps(data, indent=1)
    opens = [i + 1 for i, s in enumerate(text.splitlines()) if s == "  {"]
    with pytest.raises(SchemaError) as exc:
        loads_dag(text, "bad.json")
    msg = str(exc.value)
    assert msg.startswith("bad.json: $.nodes[2]: unknown field(s) 'colour'")
    assert msg.endswith(f"(line {opens[2]})")


def test_missing_field_is_named():
    data = json.loads(_lorenz_text())
    del data["nodes"][0]["m_ij"]
    with pytest.raises(SchemaError, match=r"\$\.nodes\[0\]: missing field\(s\) 'm_ij'"):
        loads_dag(json.dumps(data, indent=1))


def test_invalid_json_reports_line():
    with pytest.raises(SchemaError, match=r"invalid JSON at line 2"):
        loads_dag('{"d": 1,\n "q": }')


@pytest.mark.parametrize(
    "path, value, pattern",
    [
        (("d",), 5, r"\$\.d: declares 5 inputs"),
        (("R",), 2.0, r"\$\.R: declares R=2\.0"),
        (("nodes", 4, "layer"), 1.5, r"layer: expected an integer"),
        (("nodes", 4, "inputs", 0, "slot"), 1, r"inputs\[1\]\.slot: duplicate slot 1|slots must be"),
        (("nodes", 4, "primitive"), "gamma", r"\$\.nodes\[4\]"),
    ],
)
def test_field_errors(path, value, pattern):
    data = json.loads(_lorenz_text())
    obj = data
    for key in path[:-1]:
        obj = obj[key]
    obj[path[-1]] = value
    with pytest.raises(SchemaError, match=pattern):
        loads_dag(json.dumps(data, indent=1))


def test_validation_failures_surface_as_schema_errors():
    data = dag_to_dict(make_lorenz96(4))
    out = next(n for n in data["nodes"] if n["id"] == "f1")
    out["layer"] = 1
    with pytest.raises(SchemaError):
        loads_dag(json.dumps(data))


def test_shallow_net_sidecar(tmp_path):
    node = Node("p", "general", "product", (), 1, ("x", "z"), 1.0, 2)
    net, err = fit_shallow(node, 8)
    path = save_shallow_net(net, tmp_path / "p.json")
    g, meta = load_shallow_net(path)
    assert (tmp_path / "p.meta.json").exists()
    assert meta["width"] == 8 and meta["activation"] == net.activation
    assert meta["sup_error"] == pytest.approx(err)
    X = box_points(np.ones(2), 100, seed=0)
    assert np.allclose(g(X)[:, 0], net(X), rtol=1e-12, atol=1e-14)


def test_missing_sidecar_gives_empty_metadata(tmp_path, f_trig):
    path = save_dag(f_trig, tmp_path / "f.json")
    assert load_shallow_net(path)[1] == {}

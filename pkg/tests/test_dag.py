import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compfun.dag import CompositionalFunction, Node, insert_identity_nodes, validate
from compfun.errors import CompatibilityError, DomainError, ShapeError, StructureError
from compfun.experiments import random_dag
from compfun.ode import lorenz96_rhs, make_lorenz96

from conftest import chain, trig_product_direct, trig_product_f


def test_lorenz_graph_validates_with_general_domains_of_width_two():
    f = make_lorenz96(4, 8.0, 1.0)
    assert validate(f).passed
    for n in f.general_nodes:
        assert n.d == 2 and n.R == 2.0


def test_edge_within_one_layer_fails_layering():
    f = CompositionalFunction(
        (
            Node("x", "input"),
            Node("a", "general", "sin", (), 2, ("x",), 1.0),
            Node("b", "general", "cos", (), 2, ("a",), 1.0),
        )
    )
    rep = validate(f)
    assert not rep.passed
    assert any(it.check == "layering" and it.edge == ("a", "b") for it in rep.failures())


def test_sin_node_with_small_domain_fed_by_3z_fails_compatibility():
    f = CompositionalFunction(
        (
            Node("z", "input", R=1.0),
            Node("t", "linear", "affine", (3.0, 0.0), 1, ("z",), 1.0, 1),
            Node("s", "general", "sin", (), 2, ("t",), 0.5),
        )
    )
    rep = validate(f)
    bad = [it for it in rep.failures() if it.check == "ranges"]
    assert bad and bad[0].edge == ("t", "s")
    with pytest.raises(CompatibilityError) as exc:
        f(np.array([1.0]))
    assert exc.value.node == "s" and exc.value.source == "t"


def test_output_below_last_layer_is_reported():
    f = CompositionalFunction(
        (
            Node("x", "input"),
            Node("a", "general", "sin", (), 1, ("x",), 1.0),
            Node("b", "general", "cos", (), 2, ("x",), 1.0),
        )
    )
    assert any(it.check == "outputs" for it in validate(f).failures())


def test_structural_errors_raise_at_construction():
    with pytest.raises(StructureError):
        Node("a", "general", "affine", (1.0, 0.0), 1, ("x",))
    with pytest.raises(StructureError):
        Node("a", "linear", "sin", (), 1, ("x",))
    with pytest.raises(StructureError):
        Node("a", "general", "product", (), 1, ("x",))
    with pytest.raises(StructureError):
        CompositionalFunction((Node("x", "input"), Node("a", "general", "sin", (), 1, ("ghost",))))
    with pytest.raises(StructureError):
        CompositionalFunction((Node("x", "input"), Node("x", "input")))


@pytest.mark.parametrize("x,want", [((1, 1, 1, 1), 7.0), ((0, 0, 0, 0), 8.0)])
def test_lorenz_symmetric_inputs(x, want):
    assert np.array_equal(make_lorenz96(4, 8.0, 1.0)(np.array(x, float)), np.full(4, want))


@settings(deadline=None, max_examples=25)
@given(st.sampled_from([4, 5, 8]), st.integers(0, 2**31 - 1))
def test_lorenz_graph_matches_direct_formula(d, seed):
    X = np.random.default_rng(seed).uniform(-1, 1, (32, d))
    assert np.allclose(make_lorenz96(d)(X), lorenz96_rhs(X), atol=1e-13)


def test_trig_product_at_origin(f_trig):
    assert np.array_equal(f_trig(np.zeros(3)), [0.0, 1.0, 0.0])


def test_evaluation_rejects_bad_points(f_trig):
    with pytest.raises(DomainError):
        f_trig(np.array([1.5, 0.0, 0.0]))
    with pytest.raises(ShapeError):
        f_trig(np.zeros((4, 2)))


def test_single_point_and_batch_agree(f_trig):
    X = np.random.default_rng(3).uniform(-1, 1, (5, 3))
    assert np.array_equal(np.vstack([f_trig(x) for x in X]), f_trig(X))
    assert np.allclose(f_trig(X), trig_product_direct(X))


def test_identity_insertion_fixed_point_without_skips():
    f = chain(1)
    assert insert_identity_nodes(f) is f


@pytest.mark.parametrize("layers,expected", [(2, 1), (3, 2), (4, 3)])
def test_identity_chain_length_is_gap_minus_one(layers, expected):
    f = chain(layers)
    g = insert_identity_nodes(f)
    ids = [n for n in g.nodes if n.kind == "identity"]
    assert len(ids) == expected
    assert len(g) == len(f) + expected
    for src, dst, _ in g.edges:
        assert g[dst].layer - g[src].layer == 1
    X = np.linspace(-1, 1, 101)[:, None]
    assert np.array_equal(g(X), f(X))


def test_lorenz_identity_insertion_adds_one_node_per_skipping_source():
    f = make_lorenz96(4)
    g = insert_identity_nodes(f)
    # x_i feeds its own output in layer 3 (gap 3) and a product in layer 2 (gap 2)
    assert sum(n.kind == "identity" for n in g.nodes) == 2 * 4
    X = np.random.default_rng(0).uniform(-1, 1, (200, 4))
    assert np.array_equal(g(X), f(X))


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 10_000))
def test_random_graphs_validate_and_survive_identity_insertion(seed):
    f = random_dag(seed)
    assert validate(f, samples_per_edge=512).passed
    g = insert_identity_nodes(f)
    X = np.random.default_rng(seed).uniform(-1, 1, (64, f.d)) * f.input_radii
    assert np.allclose(g(X, check_domains=False), f(X, check_domains=False), rtol=1e-12, atol=1e-12)
    assert all(g[d].layer - g[s].layer == 1 for s, d, _ in g.edges)


def test_summary_counts():
    s = make_lorenz96(4).summary()
    assert (s["d"], s["q"], s["l_max"], s["general"], s["linear"]) == (4, 4, 3, 4, 8)

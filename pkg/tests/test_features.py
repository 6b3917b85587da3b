import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compfun.dag import CompositionalFunction, Node
from compfun.errors import UnsupportedError
from compfun.experiments import perturbation_check, random_dag
from compfun.features import (
    FeatureConfig,
    SobolevConfig,
    associated_lipschitz,
    extract_features,
    lipschitz_sup,
    node_lipschitz,
    propagate_errors,
    sobolev_norm,
)
from compfun.algebra import truncate
from compfun.ode import make_lorenz96

from conftest import trig_product_f


def test_lorenz_features():
    feats = extract_features(make_lorenz96(4, 8.0, 1.0, m=2))
    assert feats.quadruple() == (1.0, 28.0, 1.0, 4)
    assert not feats.empty


def test_lorenz_node_constants_carry_the_margin():
    f = make_lorenz96(4)
    F, info = truncate(f, 2)
    for n in f.general_nodes:
        assert lipschitz_sup(F, info.index(n.id)) == 1.0
        assert node_lipschitz(f, n.id) == pytest.approx(1.05, abs=1e-15)


def test_output_nodes_have_unit_constant_and_no_truncation():
    f = make_lorenz96(4)
    assert associated_lipschitz(f, "f1") == 1.0
    with pytest.raises(UnsupportedError):
        node_lipschitz(f, "f1")


def test_inner_product_psi_nodes_have_unit_constant():
    nodes = [Node(f"u{k}", "input", R=1.0) for k in (1, 2)] + [Node(f"v{k}", "input", R=1.0) for k in (1, 2)]
    nodes += [Node(f"p{k}", "general", "product", (), 1, (f"u{k}", f"v{k}"), 1.0) for k in (1, 2)]
    nodes.append(Node("s", "linear", "affine", (1.0, 1.0, 0.0), 2, ("p1", "p2"), 1.0, 1))
    psi = CompositionalFunction(tuple(nodes))
    for p in (1, 2, np.inf):
        assert associated_lipschitz(psi, "p1", p, margin=False) == 1.0


@pytest.mark.parametrize("c", [1.0, -3.0, 0.25])
def test_scaling_the_outward_path_scales_the_constant(c):
    f = CompositionalFunction(
        (
            Node("x", "input"),
            Node("a", "general", "sin", (), 1, ("x",)),
            Node("y", "linear", "affine", (c, 0.0), 2, ("a",), 1.0, 1),
        )
    )
    assert associated_lipschitz(f, "a", margin=False) == pytest.approx(abs(c), rel=1e-12)


def test_product_sobolev_conventions():
    node = Node("p", "general", "product", (), 1, ("x", "z"), 2.0, 2)
    assert sobolev_norm(node) == pytest.approx(7.0, rel=1e-12)
    assert sobolev_norm(node, cfg=SobolevConfig(convention="full")) == pytest.approx(9.0, rel=1e-12)
    assert sobolev_norm(node, cfg=SobolevConfig(method="fd")) == pytest.approx(7.0, rel=1e-6)


def test_zero_node_has_zero_norm():
    assert sobolev_norm(Node("z", "linear", "affine", (0.0, 0.0), 1, ("x",), 1.0, 1), m=3) == 0.0


def test_sin_first_order_norm():
    node = Node("s", "general", "sin", (), 1, ("x",), 1.0, 1)
    assert sobolev_norm(node) == pytest.approx(math.sin(1.0) + 1.0, rel=1e-12)


def test_linear_graph_has_empty_features():
    f = CompositionalFunction((Node("x", "input"), Node("y", "linear", "affine", (2.0, 1.0), 1, ("x",), 1.0, 1)))
    feats = extract_features(f)
    assert feats.empty and feats.quadruple() == (0.0, 0.0, 0.0, 0)
    assert feats.to_dict()["empty"] is True


def test_trig_product_counts_five_general_nodes():
    feats = extract_features(trig_product_f())
    assert feats.n_general == 5
    assert feats.r_max == 1.0


def test_feature_report_serializes():
    feats = extract_features(make_lorenz96(4))
    assert '"n_general": 4' in feats.to_json()
    assert feats.to_csv().splitlines()[0] == "id,d,m,R,L,sobolev,scaled_sobolev"
    assert len(feats.to_csv().splitlines()) == 5


def test_threads_do_not_change_results():
    f = make_lorenz96(5)
    assert extract_features(f, cfg=FeatureConfig(threads=3)) == extract_features(f)


@settings(deadline=None, max_examples=15)
@given(st.integers(0, 10_000))
def test_feature_quadruple_dominates_every_node(seed):
    f = random_dag(seed)
    feats = extract_features(f)
    assert feats.n_general == len(f.general_nodes)
    for nf in feats.per_node:
        assert feats.r_max >= nf.d / nf.m
        assert feats.Lambda >= nf.scaled_sobolev
        assert feats.L_max >= nf.L
        assert nf.L >= 0 and nf.sobolev > 0


def test_propagation_arithmetic():
    f = make_lorenz96(4)
    assert propagate_errors(f, {"p1": 0.1, "p2": 0.05}, lipschitz={"p1": 1.0, "p2": 2.0}) == pytest.approx(0.2)
    assert propagate_errors(f, {"p1": 0.0, "p2": 0.0}) == 0.0


def test_propagation_rejects_inputs_and_unknown_ids():
    f = make_lorenz96(4)
    with pytest.raises(ValueError):
        propagate_errors(f, {"x1": 0.1})
    with pytest.raises(KeyError):
        propagate_errors(f, {"nope": 0.1})


@settings(deadline=None, max_examples=10)
@given(st.integers(0, 10_000))
def test_perturbed_graphs_stay_within_the_propagated_bound(seed):
    out = perturbation_check(seed, grid_points=2000)
    assert out["measured"] <= out["bound"]
    assert out["chain_total"] <= out["chain_stages"] * (1 + 1e-12)

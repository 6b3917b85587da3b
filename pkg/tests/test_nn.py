import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compfun.algebra import identity_dag, is_neural_network, merge_linear_nodes
from compfun.bounds import calibrate_C1, thm5_product_bound, thm5_quotient_bound
from compfun.dag import CompositionalFunction, Node
from compfun.errors import ConfigError, DivisionSafetyError, MissingNetError, RangeError
from compfun.features import propagate_errors
from compfun.nn import FitConfig, ShallowNet, assemble_deep, build_product_net, build_quotient_net, fit_nodes, fit_shallow
from compfun.ode import make_lorenz96
from compfun.sampling import box_points

PRODUCT = Node("p", "general", "product", (), 1, ("x", "z"), 2.0, 2)


@settings(deadline=None, max_examples=20)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 1000))
def test_shallow_net_formula_and_graph_agree(n, d, seed):
    rng = np.random.default_rng(seed)
    W, b, a = rng.normal(size=(n, d)), rng.normal(size=n), rng.normal(size=n)
    net = ShallowNet(W, b, a, "tanh", 1.0)
    X = rng.uniform(-1, 1, (20, d))
    assert np.allclose(net(X), np.tanh(X @ W.T + b) @ a, rtol=1e-14)
    g = net.to_dag()
    assert g.l_max == 2 and g.neuron_count == n and len(g.output_nodes) == 1
    assert is_neural_network(g)
    assert np.allclose(g(X)[:, 0], net(X), rtol=1e-12, atol=1e-14)


def test_identity_fit_is_nearly_exact():
    node = Node("i", "identity", "affine", (1.0, 0.0), 1, ("z",), 1.0, 1)
    net, err = fit_shallow(node, 8)
    assert err <= 1e-6
    assert net.meta["sup_error"] == err and net.width == 8


def test_product_errors_fall_under_the_calibrated_curve():
    widths = (8, 16, 32, 64)
    errs = [fit_shallow(PRODUCT, n)[1] for n in widths]
    scales = [n ** (-PRODUCT.m / PRODUCT.d) for n in widths]
    C = calibrate_C1(errs, scales)
    assert errs[2] <= C * 32 ** (-1.0)
    assert errs[-1] <= errs[0]


REGISTRY_NODES = [
    Node("a", "general", "sin", (), 1, ("x",), 1.0),
    Node("a", "general", "cos", (), 1, ("x",), 1.0),
    Node("a", "general", "exp", (), 1, ("x",), 1.0),
    Node("a", "general", "tanh", (), 1, ("x",), 1.0),
    Node("a", "general", "sigmoid", (), 1, ("x",), 1.0),
    Node("a", "general", "power", (3.0,), 1, ("x",), 1.0),
    Node("a", "general", "reciprocal", (2.0,), 1, ("x",), 1.0),
    PRODUCT,
    Node("a", "general", "quotient", (1.0, 3.0), 2, ("x", "z"), 1.0),
    Node("a", "general", "dot", (), 1, ("x", "y", "z", "w"), 1.0),
]


@pytest.mark.parametrize("node", REGISTRY_NODES, ids=lambda n: n.primitive)
def test_wider_fits_are_not_worse(node):
    cfg = FitConfig(restarts=3)
    assert fit_shallow(node, 64, cfg)[1] <= fit_shallow(node, 8, cfg)[1]


def test_fit_configuration_is_validated():
    with pytest.raises(ConfigError):
        FitConfig(activation="relu")
    with pytest.raises(ConfigError):
        FitConfig(scale_range=(0.0, 1.0))
    with pytest.raises(ConfigError):
        fit_shallow(PRODUCT, 0)


def test_fits_are_reproducible_and_thread_independent():
    f = make_lorenz96(4)
    nets1, errs1 = fit_nodes(f, 16)
    nets2, errs2 = fit_nodes(f, 16, threads=4)
    assert errs1 == errs2
    assert all(np.array_equal(nets1[k].coeffs, nets2[k].coeffs) for k in nets1)


def test_lorenz_assembly_neuron_count_and_dominance():
    f = make_lorenz96(4)
    nets, errs = fit_nodes(f, 16)
    fNN = assemble_deep(f, nets, merge=True)
    assert fNN.neuron_count == 64
    assert is_neural_network(fNN)
    X = box_points(f.input_radii, 10_000, seed=1)
    measured = float(np.max(np.abs(fNN(X) - f(X))))
    assert measured <= propagate_errors(f, errs) + 1e-9


def test_exact_networks_reproduce_f():
    f = CompositionalFunction(
        (
            Node("x", "input"),
            Node("t", "general", "tanh", (), 1, ("x",), 1.0),
            Node("y", "linear", "affine", (2.0, 1.0), 2, ("t",), 1.0, 1),
        )
    )
    exact = ShallowNet(np.array([[1.0]]), np.array([0.0]), np.array([1.0]), "tanh", 1.0)
    fNN = assemble_deep(f, {"t": exact}, merge=True)
    X = np.linspace(-1, 1, 101)[:, None]
    assert np.allclose(fNN(X), f(X), rtol=1e-15)
    assert is_neural_network(fNN)


def test_assembly_checks_the_supplied_networks():
    f = make_lorenz96(4)
    nets, _ = fit_nodes(f, 4)
    with pytest.raises(MissingNetError):
        assemble_deep(f, {k: v for k, v in nets.items() if k != "p2"})
    wrong = dict(nets, p1=fit_shallow(Node("p1", "general", "product", (), 2, ("a", "b"), 1.0), 4)[0])
    with pytest.raises(RangeError):
        assemble_deep(f, wrong)


def _const(c):
    return CompositionalFunction((Node("x", "input"), Node("y", "linear", "affine", (0.0, c), 1, ("x",), 1.0, 1)))


def test_product_of_constants():
    op = build_product_net(_const(0.7), _const(-1.3), 16)
    X = np.linspace(-1, 1, 11)[:, None]
    assert np.all(np.abs(op.net(X, check_domains=False)[:, 0] - 0.7 * -1.3) <= op.psi_sup_error)


def test_square_through_the_product_network():
    x = identity_dag(1, 1.0)
    X = np.linspace(-1, 1, 2001)[:, None]
    widths = (8, 16, 32)
    ops = [build_product_net(x, x, n) for n in widths]
    measured = [float(np.max(np.abs(op.net(X, check_domains=False)[:, 0] - X[:, 0] ** 2))) for op in ops]
    unit = [thm5_product_bound(op.A, op.B, op.R, 0.0, 0.0, n, 2, C=1.0) for op, n in zip(ops, widths)]
    C = calibrate_C1(measured, unit)
    for op, n, e in zip(ops, widths, measured):
        assert e <= thm5_product_bound(op.A, op.B, op.R, 0.0, 0.0, n, 2, C=C) + 1e-15
        assert op.neuron_count == n
    assert is_neural_network(merge_linear_nodes(ops[0].net))


def test_quotient_network_with_denominator_bounded_below():
    x = identity_dag(1, 1.0)
    den = CompositionalFunction((Node("x", "input"), Node("y", "linear", "affine", (0.5, 1.5), 1, ("x",), 1.0, 1)))
    X = np.linspace(-1, 1, 2001)[:, None]
    op = build_quotient_net(x, den, 32)
    assert op.B[0] == pytest.approx(1.0)
    measured = float(np.max(np.abs(op.net(X, check_domains=False)[:, 0] - X[:, 0] / (1.5 + 0.5 * X[:, 0]))))
    # exact operands leave only the error of the fitted quotient node
    assert measured <= op.psi_sup_error
    C = op.psi_sup_error / (op.Lambda * 32 ** (-1.0))
    assert measured <= thm5_quotient_bound(op.A[0], op.B[0], op.R[0], 0.0, 0.0, 32, 2, C=C) * (1 + 1e-12)


def test_quotient_network_rejects_vanishing_denominators():
    with pytest.raises(DivisionSafetyError):
        build_quotient_net(identity_dag(1, 1.0), identity_dag(1, 1.0), 8)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compfun import primitives as prim

# (name, params, arity, half-width of a safe sampling box)
CASES = [
    ("affine", (0.7, -1.2, 0.3), 2, 1.0),
    ("product", (), 2, 1.0),
    ("product", (1.5,), 2, 1.0),
    ("power", (3.0,), 1, 1.0),
    ("power", (4.0, -0.5), 1, 1.0),
    ("sin", (), 1, 1.0),
    ("cos", (), 1, 1.0),
    ("exp", (), 1, 1.0),
    ("tanh", (), 1, 1.0),
    ("sigmoid", (), 1, 1.0),
    ("reciprocal", (2.0,), 1, 0.5),
    ("quotient", (1.5, 3.0), 2, 0.5),
    ("dot", (), 4, 1.0),
]


@pytest.mark.parametrize("name,params,arity,R", CASES)
def test_arity_accepts_declared_and_rejects_other_counts(name, params, arity, R):
    prim.check_arity(name, params, arity)
    with pytest.raises(ValueError):
        prim.check_arity(name, params, arity + 1)


@pytest.mark.parametrize("name,params,arity,R", CASES)
def test_partials_match_central_differences(name, params, arity, R):
    entry = prim.get(name)
    Z = np.random.default_rng(7).uniform(-R, R, (64, arity))
    h = np.full(arity, 1e-3)
    for order in (1, 2):
        for k in prim.multi_indices(arity, order):
            exact = entry.deriv(params, k, Z)
            approx = prim.central_difference(lambda W: entry.fn(params, W), k, Z, h)
            assert np.allclose(exact, approx, rtol=1e-4, atol=1e-5), (name, k)


@settings(deadline=None, max_examples=40)
@given(st.floats(-2, 2), st.integers(0, 5))
def test_sin_derivatives_cycle(t, order):
    Z = np.array([[t]])
    want = [np.sin, np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v)][order % 4](t)
    assert prim.get("sin").deriv((), (order,), Z)[0] == pytest.approx(want, abs=1e-14)


@settings(deadline=None, max_examples=40)
@given(st.floats(-3, 3), st.integers(1, 6))
def test_tanh_and_sigmoid_derivatives_agree_with_difference_quotients(t, order):
    Z = np.array([[t]])
    for name in ("tanh", "sigmoid"):
        entry = prim.get(name)
        lower = lambda W: entry.deriv((), (order - 1,), W)  # noqa: E731
        fd = (lower(Z + 1e-5) - lower(Z - 1e-5)) / 2e-5
        assert entry.deriv((), (order,), Z)[0] == pytest.approx(fd[0], rel=1e-4, abs=1e-6)


# values computed symbolically and frozen
def test_frozen_symbolic_derivatives():
    assert prim.get("tanh").deriv((), (3,), np.array([[0.2]]))[0] == pytest.approx(-1.6974497587860025, rel=1e-13)
    assert prim.get("sigmoid").deriv((), (2,), np.array([[0.3]]))[0] == pytest.approx(-0.036396183955576214, rel=1e-12)
    assert prim.get("sigmoid").deriv((), (4,), np.array([[-0.7]]))[0] == pytest.approx(-0.12384214122158368, rel=1e-12)
    Zq = np.array([[0.5, 0.25]])
    assert prim.get("quotient").deriv((2.0, 3.0), (0, 1), Zq)[0] == pytest.approx(-0.094674556213017749, rel=1e-13)
    assert prim.get("quotient").deriv((2.0, 3.0), (1, 2), Zq)[0] == pytest.approx(0.11652253072371416, rel=1e-13)
    assert prim.get("reciprocal").deriv((1.5,), (3,), np.array([[-0.4]]))[0] == pytest.approx(-4.0980807321904233, rel=1e-13)
    assert prim.get("power").deriv((5.0, 0.7), (3,), np.array([[0.9]]))[0] == pytest.approx(34.02, rel=1e-13)


def test_dot_pairs_first_half_with_second_half():
    Z = np.array([[1.0, 2.0, 3.0, 4.0]])
    assert prim.get("dot").fn((), Z)[0] == 1 * 3 + 2 * 4
    assert prim.get("dot").deriv((), (1, 0, 1, 0), Z)[0] == 1.0
    assert prim.get("dot").deriv((), (1, 1, 0, 0), Z)[0] == 0.0


def test_affine_second_derivatives_vanish():
    Z = np.ones((3, 2))
    assert np.all(prim.get("affine").deriv((2.0, 3.0, 1.0), (1, 1), Z) == 0)


def test_unknown_primitive_and_activation_are_rejected():
    with pytest.raises(prim.UnknownPrimitiveError):
        prim.get("relu6")
    with pytest.raises(KeyError):
        prim.activation("nope")


@settings(deadline=None, max_examples=30)
@given(st.integers(1, 4), st.integers(0, 4))
def test_multi_indices_count_is_binomial(d, order):
    from math import comb

    idx = prim.multi_indices(d, order)
    assert len(idx) == comb(order + d - 1, d - 1)
    assert all(sum(k) == order and len(k) == d for k in idx)
    assert len(set(idx)) == len(idx)


def test_neuron_partials_scale_with_weights():
    params = (0.5, -2.0, 0.1)
    Z = np.random.default_rng(0).uniform(-1, 1, (16, 2))
    d11 = prim.neuron_deriv("tanh", params, (1, 1), Z)
    t = Z @ np.array([0.5, -2.0]) + 0.1
    assert np.allclose(d11, 0.5 * -2.0 * prim.activation_derivative("tanh", 2, t))

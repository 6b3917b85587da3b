"""Shared graphs for the test suite."""

import numpy as np
import pytest

from compfun.dag import CompositionalFunction, Node


def trig_product_f() -> CompositionalFunction:
    """``x -> (sin(x1 x2), cos(x2 x3), x1 x3)`` on ``[-1, 1]^3``."""
    return CompositionalFunction(
        (
            Node("x1", "input", R=1.0),
            Node("x2", "input", R=1.0),
            Node("x3", "input", R=1.0),
            Node("p12", "general", "product", (), 1, ("x1", "x2"), 1.0, 2),
            Node("p23", "general", "product", (), 1, ("x2", "x3"), 1.0, 2),
            Node("s", "general", "sin", (), 2, ("p12",), 1.0, 2),
            Node("c", "general", "cos", (), 2, ("p23",), 1.0, 2),
            Node("p13", "general", "product", (), 2, ("x1", "x3"), 1.0, 2),
        )
    )


def trig_product_direct(X):
    X = np.atleast_2d(X)
    return np.column_stack([np.sin(X[:, 0] * X[:, 1]), np.cos(X[:, 1] * X[:, 2]), X[:, 0] * X[:, 2]])


def gauss_g() -> CompositionalFunction:
    """``x -> (x1^2 + x2^2, exp(-x1^2), exp(-x3^2))`` on ``[-1, 1]^3``."""
    return CompositionalFunction(
        (
            Node("x1", "input", R=1.0),
            Node("x2", "input", R=1.0),
            Node("x3", "input", R=1.0),
            Node("a1", "general", "power", (2.0,), 1, ("x1",), 1.0, 2),
            Node("a2", "general", "power", (2.0,), 1, ("x2",), 1.0, 2),
            Node("n1", "general", "power", (2.0, -1.0), 1, ("x1",), 1.0, 2),
            Node("n3", "general", "power", (2.0, -1.0), 1, ("x3",), 1.0, 2),
            Node("sq", "linear", "affine", (1.0, 1.0, 0.0), 2, ("a1", "a2"), 1.0, 1),
            Node("e1", "general", "exp", (), 2, ("n1",), 1.0, 2),
            Node("e3", "general", "exp", (), 2, ("n3",), 1.0, 2),
        )
    )


def gauss_direct(X):
    X = np.atleast_2d(X)
    return np.column_stack([X[:, 0] ** 2 + X[:, 1] ** 2, np.exp(-X[:, 0] ** 2), np.exp(-X[:, 2] ** 2)])


def scalar_linear(a: float, b: float = 0.0, R: float = 1.0, out_R: float | None = None) -> CompositionalFunction:
    """``x -> a x + b`` as a one-node graph."""
    return CompositionalFunction(
        (Node("x", "input", R=R), Node("y", "linear", "affine", (a, b), 1, ("x",), R if out_R is None else out_R, 1))
    )


def chain(layers: int, R: float = 1.0) -> CompositionalFunction:
    """Scalar input feeding ``layers`` stacked ``0.5 sin`` blocks, plus a skip edge to the top."""
    nodes = [Node("x", "input", R=R)]
    prev = "x"
    for k in range(1, layers):
        nodes.append(Node(f"s{k}", "general", "sin", (), k, (prev,), R, 2))
        prev = f"s{k}"
    nodes.append(Node("y", "linear", "affine", (1.0, 1.0, 0.0), layers, (prev, "x"), R, 1))
    return CompositionalFunction(tuple(nodes))


@pytest.fixture
def f_trig():
    return trig_product_f()


@pytest.fixture
def g_gauss():
    return gauss_g()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

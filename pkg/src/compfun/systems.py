"""Example systems encoded as compositional functions."""

from __future__ import annotations

import numpy as np

from .dag import CompositionalFunction, Node

__all__ = ["POWER_SYSTEM_PARAMS", "make_power_system", "power_system_direct"]

# three-generator example: internal voltages, conductances and susceptances
POWER_SYSTEM_PARAMS = {
    "E": [1.05, 1.00, 0.98],
    "G": [[0.80, 0.12, 0.09], [0.12, 0.75, 0.11], [0.09, 0.11, 0.70]],
    "B": [[-4.10, 1.90, 1.60], [1.90, -3.80, 1.75], [1.60, 1.75, -3.60]],
}


def make_power_system(E=None, G=None, B=None, delta_radius: float = 0.5, m: int = 2) -> CompositionalFunction:
    """Electric torque ``P_i = E_i^2 G_ii + sum_{j != i} E_i E_j (G_ij cos(d_i - d_j) + B_ij sin(d_i - d_j))``.

    Four layers: rotor angles, pairwise differences (``i < j``), the sine
    and cosine nodes, and one linear output per generator.  The sine of a
    reversed pair enters with a negative sign.
    """
    p = POWER_SYSTEM_PARAMS
    E = np.asarray(p["E"] if E is None else E, dtype=float)
    G = np.asarray(p["G"] if G is None else G, dtype=float)
    B = np.asarray(p["B"] if B is None else B, dtype=float)
    k = E.size
    nodes = [Node(f"delta{i + 1}", "input", R=delta_radius) for i in range(k)]
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    dr = 2 * delta_radius
    for i, j in pairs:
        nodes.append(Node(f"dd{i + 1}{j + 1}", "linear", "affine", (1.0, -1.0, 0.0), 1, (f"delta{i + 1}", f"delta{j + 1}"), delta_radius, 1))
    for i, j in pairs:
        src = (f"dd{i + 1}{j + 1}",)
        nodes.append(Node(f"sin{i + 1}{j + 1}", "general", "sin", (), 2, src, dr, m))
        nodes.append(Node(f"cos{i + 1}{j + 1}", "general", "cos", (), 2, src, dr, m))
    for i in range(k):
        ins, w = [], []
        for j in range(k):
            if j == i:
                continue
            a, b = min(i, j), max(i, j)
            sign = 1.0 if i < j else -1.0
            ins += [f"cos{a + 1}{b + 1}", f"sin{a + 1}{b + 1}"]
            w += [E[i] * E[j] * G[i, j], sign * E[i] * E[j] * B[i, j]]
        nodes.append(Node(f"P{i + 1}", "linear", "affine", tuple(w) + (E[i] ** 2 * G[i, i],), 3, tuple(ins), 1.0, 1))
    return CompositionalFunction(tuple(nodes))


def power_system_direct(delta: np.ndarray, E=None, G=None, B=None) -> np.ndarray:
    """Vectorized formula evaluation of the same torque."""
    p = POWER_SYSTEM_PARAMS
    E = np.asarray(p["E"] if E is None else E, dtype=float)
    G = np.asarray(p["G"] if G is None else G, dtype=float)
    B = np.asarray(p["B"] if B is None else B, dtype=float)
    D = np.atleast_2d(delta)
    diff = D[:, :, None] - D[:, None, :]
    EE = E[:, None] * E[None, :]
    off = ~np.eye(E.size, dtype=bool)
    terms = EE * (G * np.cos(diff) + B * np.sin(diff)) * off
    return E**2 * np.diag(G) + terms.sum(axis=2)

"""Point sets on centered hypercubes used for validation and measurement."""

from __future__ import annotations

import itertools
import warnings

import numpy as np
from scipy.stats import qmc

DYADIC_BITS = 20


def _as_radii(radii, d=None):
    r = np.atleast_1d(np.asarray(radii, dtype=float))
    if d is not None and r.size == 1 and d != 1:
        r = np.full(d, float(r[0]))
    return r


def sobol(d: int, n: int, seed: int = 0) -> np.ndarray:
    """``n`` scrambled Sobol points in ``[-1, 1]^d``."""
    if d == 0:
        return np.zeros((n, 0))
    m = max(int(np.ceil(np.log2(max(n, 1)))), 0)
    eng = qmc.Sobol(d, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pts = eng.random_base2(m)[:n]
    return 2.0 * pts - 1.0


def corners(radii) -> np.ndarray:
    r = _as_radii(radii)
    if r.size == 0:
        return np.zeros((1, 0))
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=r.size)))
    return signs * r


def box_points(radii, n: int, seed: int = 0, with_corners: bool = True, max_corners: int = 4096) -> np.ndarray:
    """Sobol points in ``prod [-r_i, r_i]`` plus all corners when affordable."""
    r = _as_radii(radii)
    pts = sobol(r.size, n, seed) * r
    if with_corners and 2 ** r.size <= max_corners:
        pts = np.vstack([corners(r), pts])
    return pts


def tensor_grid(radii, per_axis: int) -> np.ndarray:
    r = _as_radii(radii)
    axes = [np.linspace(-ri, ri, per_axis) for ri in r]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def dense_points(radii, budget: int = 10_000, seed: int = 0) -> np.ndarray:
    """About ``budget`` points: a tensor grid in low dimension, Sobol otherwise."""
    r = _as_radii(radii)
    d = r.size
    per_axis = int(np.ceil(budget ** (1.0 / d))) if d else 1
    if d <= 3:
        return tensor_grid(r, per_axis)
    return box_points(r, budget, seed=seed)


def dyadic(x, bits: int = DYADIC_BITS) -> np.ndarray:
    """Round to a dyadic grid so that affine differences are exact."""
    s = float(2**bits)
    return np.round(np.asarray(x, dtype=float) * s) / s


def random_box(rng: np.random.Generator, radii, n: int) -> np.ndarray:
    r = _as_radii(radii)
    return rng.uniform(-1.0, 1.0, size=(n, r.size)) * r

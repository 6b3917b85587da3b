"""Closed-form error and complexity bounds.

These are plain formula evaluators.  Unknown approximation constants are
explicit arguments defaulting to 1; :func:`calibrate_C1` fits one from
measured errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import BoundInvalidError, UnsupportedError
from .features import Features

__all__ = [
    "ComplexityEstimate",
    "calibrate_C1",
    "complexity_for_tolerance",
    "geometric_sum",
    "iterate_error_bound",
    "thm2_bound",
    "thm2_refined_bound",
    "thm5_product_bound",
    "thm5_product_lambda",
    "thm5_quotient_bound",
    "thm5_quotient_lambda",
]


def geometric_sum(L: float, K: int) -> float:
    """``(L^K - 1) / (L - 1)``, continuous at ``L = 1`` where it equals ``K``."""
    if abs(L - 1.0) < 1e-12:
        return float(K)
    return (L**K - 1.0) / (L - 1.0)


def iterate_error_bound(L_f: float, K: int, e1: float, e2: float, L_h: float | None = None, e3: float | None = None) -> float:
    """Error of ``f~^K o g~`` against ``f^K o g``.

    ``e1`` bounds ``|f - f~|``, ``e2`` bounds ``|g - g~|`` and ``L_f`` is a
    Lipschitz constant of ``f``.  When ``L_h`` is given the bound is for
    ``h~ o f~^K`` against ``h o f^K`` with ``e3`` bounding ``|h - h~|``.
    """
    if L_f <= 0 or K < 1:
        raise ValueError("need L_f > 0 and K >= 1")
    S = geometric_sum(L_f, K)
    if L_h is not None:
        return L_h * S * e1 + (e3 or 0.0)
    return S * e1 + L_f**K * e2


def _need(features: Features):
    if features.empty:
        raise UnsupportedError("features are empty: the function has no general nodes")


def thm2_bound(features: Features, n_width: int, C1: float = 1.0) -> float:
    """``C1 L_max Lambda |V_G| n^(-1/r_max)``."""
    _need(features)
    if n_width < 1 or C1 <= 0:
        raise ValueError("need n_width >= 1 and C1 > 0")
    return C1 * features.L_max * features.Lambda * features.n_general * n_width ** (-1.0 / features.r_max)


def thm2_refined_bound(features: Features, n_width: int, C: float | Mapping[str, float] = 1.0) -> float:
    """Per-node sum ``sum L_ij C_ij max(R^m, 1) |f_ij| n^(-m/d)``."""
    _need(features)
    total = 0.0
    for nf in features.per_node:
        c = C[nf.id] if isinstance(C, Mapping) else C
        total += nf.L * c * nf.scaled_sobolev * n_width ** (-nf.m / nf.d)
    return total


@dataclass(frozen=True)
class ComplexityEstimate:
    neurons: int
    n_width: int
    raw: float


def _ceil(x: float) -> int:
    # guard against 4480.000000001 style rounding of exact products
    r = round(x)
    return int(r) if abs(x - r) <= 1e-9 * max(1.0, abs(x)) else int(math.ceil(x))


def complexity_for_tolerance(features: Features, eps: float, C: float = 1.0) -> ComplexityEstimate:
    """Neuron bound ``C (L Lambda)^r |V_G|^(r+1) eps^(-r)`` rounded up.

    Also returns the smallest width with ``C L Lambda |V_G| n^(-1/r) <= eps``.
    """
    _need(features)
    if eps <= 0:
        raise ValueError("eps must be positive")
    r = features.r_max
    LL = features.L_max * features.Lambda
    raw = C * LL**r * features.n_general ** (r + 1) * eps ** (-r)
    width = _ceil((C * LL * features.n_general / eps) ** r)
    return ComplexityEstimate(neurons=_ceil(raw), n_width=max(width, 1), raw=raw)


def calibrate_C1(errors: Sequence[float], scales: Sequence[float]) -> float:
    """Smallest ``C`` with ``errors[i] <= C * scales[i]`` for every sample."""
    e = np.asarray(errors, dtype=float)
    s = np.asarray(scales, dtype=float)
    if e.shape != s.shape or e.size == 0:
        raise ValueError("need matching, nonempty error and scale sequences")
    return float(np.max(e / s))


# ---------------------------------------------------------------------------
# products and quotients of approximations


def thm5_product_lambda(A: Sequence[float], B: Sequence[float], R: Sequence[float], m: int) -> float:
    A, B, R = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (A, B, R))
    return float(np.max(np.maximum(R**m, 1.0) * (A * B + A + B + 2.0)))


def thm5_product_bound(
    A: Sequence[float],
    B: Sequence[float],
    R: Sequence[float],
    e1: float,
    e2: float,
    n_width: int,
    m: int,
    C: float = 1.0,
    f_norm: float | None = None,
    g_norm: float | None = None,
) -> float:
    """Error of an approximate inner product of approximate operands.

    ``A``/``B`` are per-component sup bounds of the operands; ``f_norm`` and
    ``g_norm`` default to the 2-norm of those vectors.
    """
    A_ = np.atleast_1d(np.asarray(A, dtype=float))
    B_ = np.atleast_1d(np.asarray(B, dtype=float))
    fn = float(np.linalg.norm(A_)) if f_norm is None else f_norm
    gn = float(np.linalg.norm(B_)) if g_norm is None else g_norm
    q = A_.size
    lam = thm5_product_lambda(A_, B_, R, m)
    return fn * e2 + gn * e1 + e1 * e2 + C * lam * q * n_width ** (-m / 2.0)


def thm5_quotient_lambda(A: float, B: float, R1: float, m: int) -> float:
    if B <= 0:
        raise BoundInvalidError("B must be a positive lower bound of |g|")
    if abs(B - 1.0) < 1e-12:
        series = float(m + 1)
    else:
        series = (1.0 - (1.0 / B) ** (m + 1)) / (B - 1.0)
    return max(R1**m, 1.0) * math.factorial(m) * (A + B) * series


def thm5_quotient_bound(A: float, B: float, R1: float, e1: float, e2: float, n_width: int, m: int, C: float = 1.0) -> float:
    """Error of an approximate quotient; requires ``e2 <= B / 2``."""
    if e2 > 0.5 * B:
        raise BoundInvalidError(f"denominator error {e2} exceeds half of min|g| = {B}")
    lam = thm5_quotient_lambda(A, B, R1, m)
    return 2.0 * A / B**2 * e2 + 2.0 / B * e1 + C * lam * n_width ** (-m / 2.0)

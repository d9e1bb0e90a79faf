"""Knots, piecewise-constant test functions and the overlapping-spline basis.

The order-``p`` basis on knots ``s_1 < ... < s_k`` (with the process origin
``s_0`` at the left end of the region) is built by integrating the indicator
test function of each knot cell ``p`` times.  Basis function ``i`` therefore
vanishes on ``[s_0, s_{i-1}]``, equals ``(x - s_{i-1})^p / p!`` inside its own
cell, and continues to the right as the degree-``(p-1)`` polynomial

    sum_{j=1..p} d_i^j (x - s_i)^{p-j} / (j! (p-j)!),   d_i = s_i - s_{i-1}.

Differentiating the order-``p`` basis ``q`` times lands exactly on the
order-``(p-q)`` basis over the same knots, so joint inference for a function
and its derivatives only ever requires re-evaluating design matrices at a
lower order with unchanged weights.

Knot cells are right-closed, ``(s_{i-1}, s_i]``, which fixes evaluation
exactly at knot locations.  All types are immutable and all operations are
pure functions, safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

# Practical process orders are small; a fixed factorial table avoids any
# overflow policy for huge p.
MAX_ORDER = 20
_FACT = np.array([math.factorial(i) for i in range(MAX_ORDER + 2)], dtype=float)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InvalidArgumentError(message)


@dataclass(frozen=True)
class KnotSet:
    """Ordered knot locations over a closed region.

    The process origin ``s_0`` equals ``region_start`` and is not a stored
    knot.  ``spacings[i-1] = s_i - s_{i-1}``.
    """

    region_start: float
    region_end: float
    knots: np.ndarray

    def __post_init__(self):
        knots = np.atleast_1d(np.asarray(self.knots, dtype=float))
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "region_start", float(self.region_start))
        object.__setattr__(self, "region_end", float(self.region_end))
        _require(
            math.isfinite(self.region_start) and math.isfinite(self.region_end),
            "region bounds must be finite",
        )
        _require(self.region_end > self.region_start, "region must have positive length")
        _require(knots.ndim == 1 and knots.size >= 1, "need at least one knot")
        _require(bool(np.all(np.isfinite(knots))), "knots must be finite")
        _require(knots[0] > self.region_start, "first knot must lie strictly right of region_start")
        _require(bool(np.all(np.diff(knots) > 0)), "knots must be strictly increasing")
        _require(knots[-1] <= self.region_end, "knots must not exceed region_end")

    @property
    def size(self) -> int:
        return int(self.knots.size)

    @property
    def spacings(self) -> np.ndarray:
        """Cell widths d_i = s_i - s_{i-1}, with s_0 = region_start."""
        return np.diff(self.knots, prepend=self.region_start)

    @property
    def lower_knots(self) -> np.ndarray:
        """Left cell boundaries s_0 .. s_{k-1}."""
        return np.concatenate(([self.region_start], self.knots[:-1]))


def build_equal_knots(region_start: float, region_end: float, k: int) -> KnotSet:
    """Place ``k`` equally spaced knots, s_i = start + i * (end - start) / k.

    ``s_0 = region_start`` is the process origin, not a stored knot;
    ``s_k = region_end``.
    """
    _require(isinstance(k, (int, np.integer)) and not isinstance(k, bool), "k must be an integer")
    _require(k >= 1, "k must be positive")
    _require(
        math.isfinite(region_start) and math.isfinite(region_end),
        "region bounds must be finite",
    )
    _require(region_end > region_start, "region must have positive length")
    knots = np.linspace(region_start, region_end, int(k) + 1)[1:]
    return KnotSet(region_start, region_end, knots)


def test_function_eval(knot_set: KnotSet, i: int, x: float) -> float:
    """Indicator of the right-closed knot cell (s_{i-1}, s_i]; ``i`` is 1-based."""
    _require(1 <= i <= knot_set.size, f"basis index {i} outside 1..{knot_set.size}")
    lo = knot_set.lower_knots[i - 1]
    hi = knot_set.knots[i - 1]
    return 1.0 if (x > lo) and (x <= hi) else 0.0


@dataclass(frozen=True)
class OSplineBasis:
    """Overlapping-spline basis of a given order over a knot set."""

    order: int
    knot_set: KnotSet

    def __post_init__(self):
        _require(
            isinstance(self.order, (int, np.integer)) and not isinstance(self.order, bool),
            "order must be an integer",
        )
        _require(1 <= self.order <= MAX_ORDER, f"order must be in 1..{MAX_ORDER}")
        object.__setattr__(self, "order", int(self.order))

    @property
    def size(self) -> int:
        return self.knot_set.size

    @property
    def region_start(self) -> float:
        return self.knot_set.region_start

    @property
    def region_end(self) -> float:
        return self.knot_set.region_end


@dataclass(frozen=True)
class DesignBlock:
    """Dense design matrix of basis-function derivatives.

    ``values[i, j]`` is the ``derivative_order``-th derivative of basis
    function ``j+1`` (of order ``source_order``) at the i-th location.  Rows
    for locations left of a basis function's support are zero, giving the
    upper-trapezoidal structure; the matrix is stored dense.
    """

    values: np.ndarray
    derivative_order: int
    source_order: int

    @property
    def shape(self):
        return self.values.shape


def _basis_columns(basis: OSplineBasis, xs: np.ndarray, q: int) -> np.ndarray:
    """(n, k) array of q-th basis derivatives at ``xs``; no range validation."""
    p_eff = basis.order - q
    x = np.asarray(xs, dtype=float)
    ks = basis.knot_set
    lows = ks.lower_knots
    highs = ks.knots
    spac = ks.spacings
    cols = np.zeros((x.size, ks.size))
    for j in range(ks.size):
        lo, hi, d = lows[j], highs[j], spac[j]
        mid = (x > lo) & (x <= hi)
        if p_eff == 0:
            cols[mid, j] = 1.0
            continue
        cols[mid, j] = (x[mid] - lo) ** p_eff / _FACT[p_eff]
        right = x > hi
        if right.any():
            z = x[right] - hi
            acc = np.zeros_like(z)
            for m in range(1, p_eff + 1):
                acc += d**m * z ** (p_eff - m) / (_FACT[m] * _FACT[p_eff - m])
            cols[right, j] = acc
    return cols


def basis_eval(basis: OSplineBasis, i: int, x: float, q: int = 0) -> float:
    """q-th derivative of basis function ``i`` (1-based) at ``x``.

    For ``q = p`` this is the underlying test function (right-closed at
    knot points).  ``x`` must not lie left of the region start.
    """
    p = basis.order
    ks = basis.knot_set
    _require(1 <= i <= ks.size, f"basis index {i} outside 1..{ks.size}")
    _require(0 <= q <= p, f"derivative order {q} exceeds basis order {p}")
    _require(x >= ks.region_start, f"location {x} left of region start {ks.region_start}")
    lo = ks.lower_knots[i - 1]
    hi = ks.knots[i - 1]
    d = hi - lo
    r = p - q
    if x <= lo:
        return 0.0
    if r == 0:
        return 1.0 if x <= hi else 0.0
    if x <= hi:
        return float((x - lo) ** r / _FACT[r])
    z = x - hi
    return float(sum(d**m * z ** (r - m) / (_FACT[m] * _FACT[r - m]) for m in range(1, r + 1)))


def design_matrix(basis: OSplineBasis, xs, q: int = 0) -> DesignBlock:
    """Design matrix with entry (i, j) = q-th derivative of basis j at xs[i].

    Locations must lie inside the region; extrapolation is not supported.
    Locations exactly at the region start produce zero rows.
    """
    p = basis.order
    _require(0 <= q <= p, f"derivative order {q} exceeds basis order {p}")
    x = np.atleast_1d(np.asarray(xs, dtype=float))
    _require(bool(np.all(np.isfinite(x))), "locations must be finite")
    bad = (x < basis.region_start) | (x > basis.region_end)
    if bad.any():
        raise InvalidArgumentError(
            f"location {x[bad][0]} outside region "
            f"[{basis.region_start}, {basis.region_end}]"
        )
    return DesignBlock(values=_basis_columns(basis, x, q), derivative_order=q, source_order=p)


def polynomial_design(xs, p: int, q: int = 0) -> np.ndarray:
    """n x p matrix of q-th derivatives of the monomials x^l, l = 0..p-1.

    Columns with l < q are zero; at x = 0 the surviving column l = q holds q!.
    """
    _require(isinstance(p, (int, np.integer)) and p >= 1, "polynomial order must be a positive integer")
    _require(p <= MAX_ORDER, f"order must be at most {MAX_ORDER}")
    _require(0 <= q <= p, f"derivative order {q} exceeds polynomial block order {p}")
    x = np.atleast_1d(np.asarray(xs, dtype=float))
    out = np.zeros((x.size, p))
    for l in range(q, p):
        out[:, l] = (_FACT[l] / _FACT[l - q]) * x ** (l - q)
    return out


def weight_precision(knot_set: KnotSet) -> np.ndarray:
    """Diagonal of the k x k weight precision: entry i is d_i.

    The weight variances are therefore 1/d_i (so k equal knots on a unit
    interval give weight variance k).
    """
    return knot_set.spacings.copy()

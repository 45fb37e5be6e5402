"""B-spline basis systems: knots, evaluation, derivatives, and Gram matrices.

A :class:`BasisSystem` fixes a clamped B-spline basis on a closed interval
and caches the two Gram matrices every downstream component needs: the
inner-product matrix ``gram0`` and the curvature matrix ``gram2``. Both are
computed by composite Gauss-Legendre quadrature that is exact for the
piecewise-polynomial integrands, so quadrature error never enters any
tolerance budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["BasisSystem", "make_basis", "eval_basis", "eval_basis_matrix"]


@dataclass(frozen=True, eq=False)
class BasisSystem:
    """Clamped B-spline basis on ``[a, b]``, immutable after construction.

    Attributes
    ----------
    domain : (float, float)
        Closed interval ``[a, b]``.
    order : int
        Spline order (polynomial degree + 1). Order 1 gives piecewise
        constants; ``num_basis == order == 1`` is the constant basis used
        when a model direction carries a single intercept-like function.
    num_basis : int
        Number of basis functions ``m``.
    knots : ndarray, shape (num_basis + order,)
        Nondecreasing knots with order-fold boundary replication and
        equispaced interior knots.
    gram0 : ndarray, shape (m, m)
        Inner products of the basis functions.
    gram2 : ndarray, shape (m, m)
        Inner products of the second derivatives (zero matrix for
        order <= 2, whose splines have no curvature almost everywhere).
    """

    domain: tuple[float, float]
    order: int
    num_basis: int
    knots: np.ndarray
    gram0: np.ndarray
    gram2: np.ndarray

    @property
    def degree(self) -> int:
        return self.order - 1


def make_basis(domain, num_basis: int, order: int = 4) -> BasisSystem:
    """Build a clamped B-spline basis with equispaced interior knots.

    Parameters
    ----------
    domain : (float, float)
        Nondegenerate interval ``(a, b)`` with ``a < b``.
    num_basis : int
        Number of basis functions, at least ``order``.
    order : int
        Spline order, at least 1 (cubic splines have order 4).
    """
    a, b = float(domain[0]), float(domain[1])
    if not np.isfinite(a) or not np.isfinite(b) or not a < b:
        raise ValueError(f"domain must be a finite interval with a < b, got ({a}, {b})")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if num_basis < order:
        raise ValueError(f"num_basis ({num_basis}) must be >= order ({order})")

    n_interior = num_basis - order
    interior = np.linspace(a, b, n_interior + 2)[1:-1]
    knots = np.concatenate([np.full(order, a), interior, np.full(order, b)])

    basis = BasisSystem(
        domain=(a, b),
        order=order,
        num_basis=num_basis,
        knots=knots,
        gram0=np.empty((0, 0)),
        gram2=np.empty((0, 0)),
    )
    gram0 = _quadrature_gram(basis, deriv=0)
    if order <= 2:
        gram2 = np.zeros((num_basis, num_basis))
    else:
        gram2 = _quadrature_gram(basis, deriv=2)
    object.__setattr__(basis, "gram0", gram0)
    object.__setattr__(basis, "gram2", gram2)
    return basis


def _find_span(knots: np.ndarray, order: int, num_basis: int, s: float) -> int:
    """Knot span index i with knots[i] <= s < knots[i+1].

    The right endpoint maps to the last nonempty span so evaluation there
    is the left-hand limit.
    """
    lo, hi = order - 1, num_basis
    if s >= knots[num_basis]:
        i = num_basis - 1
        while knots[i] == knots[i + 1]:
            i -= 1
        return i
    return int(np.searchsorted(knots[lo : hi + 1], s, side="right")) + lo - 1


def _nonzero_basis_ders(knots, degree, span, s, nders):
    """Derivatives 0..nders of the degree+1 B-splines alive on the span.

    Standard triangular de Boor table followed by the derivative
    recurrence; returns an array of shape (nders + 1, degree + 1) whose
    row d holds the d-th derivatives of N_{span-degree}, ..., N_{span}.
    """
    ndu = np.empty((degree + 1, degree + 1))
    ndu[0, 0] = 1.0
    left = np.empty(degree + 1)
    right = np.empty(degree + 1)
    for j in range(1, degree + 1):
        left[j] = s - knots[span + 1 - j]
        right[j] = knots[span + j] - s
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((nders + 1, degree + 1))
    ders[0, :] = ndu[:, degree]

    work = np.empty((2, degree + 1))
    for r in range(degree + 1):
        s1, s2 = 0, 1
        work[0, 0] = 1.0
        for k in range(1, nders + 1):
            d = 0.0
            rk = r - k
            pk = degree - k
            if r >= k:
                work[s2, 0] = work[s1, 0] / ndu[pk + 1, rk]
                d = work[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else degree - r
            for j in range(j1, j2 + 1):
                work[s2, j] = (work[s1, j] - work[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += work[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                work[s2, k] = -work[s1, k - 1] / ndu[pk + 1, r]
                d += work[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1

    factor = float(degree)
    for k in range(1, nders + 1):
        ders[k, :] *= factor
        factor *= degree - k
    return ders


def eval_basis(basis: BasisSystem, s: float, deriv: int = 0) -> np.ndarray:
    """Evaluate all basis functions (or a derivative) at a single point.

    Raises if ``s`` lies outside the domain (no extrapolation) or if
    ``deriv`` is not in ``[0, order)``.
    """
    a, b = basis.domain
    s = float(s)
    if not a <= s <= b:
        raise ValueError(f"point {s} outside basis domain [{a}, {b}]")
    if deriv < 0 or deriv >= basis.order:
        raise ValueError(f"deriv must be in [0, {basis.order}), got {deriv}")
    span = _find_span(basis.knots, basis.order, basis.num_basis, s)
    ders = _nonzero_basis_ders(basis.knots, basis.degree, span, s, deriv)
    out = np.zeros(basis.num_basis)
    out[span - basis.degree : span + 1] = ders[deriv, :]
    return out


def eval_basis_matrix(basis: BasisSystem, s_values, deriv: int = 0) -> np.ndarray:
    """Evaluation matrix with one row per point in ``s_values``."""
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    out = np.empty((s_values.size, basis.num_basis))
    for i, s in enumerate(s_values):
        out[i, :] = eval_basis(basis, s, deriv)
    return out


def _quadrature_gram(basis: BasisSystem, deriv: int) -> np.ndarray:
    # Gauss-Legendre with `order` nodes per knot interval is exact for the
    # degree <= 2*(order-1) piecewise-polynomial integrand.
    nodes, weights = np.polynomial.legendre.leggauss(basis.order)
    gram = np.zeros((basis.num_basis, basis.num_basis))
    breaks = np.unique(basis.knots)
    for u0, u1 in zip(breaks[:-1], breaks[1:]):
        mid = 0.5 * (u0 + u1)
        half = 0.5 * (u1 - u0)
        for x, w in zip(nodes, weights):
            v = eval_basis(basis, mid + half * x, deriv)
            gram += (w * half) * np.outer(v, v)
    return gram

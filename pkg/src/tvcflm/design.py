"""Vectorized regression representation of the varying-coefficient model.

The model ``y = integral of x(s) * beta(s, t) ds + noise`` becomes an
ordinary linear model once the predictor and the coefficient surface are
both basis-expanded: each subject contributes one row
``kron(psi(t), gram0' w)`` and the unknown is the column-major
vectorization of the coefficient matrix. Column-major ordering is frozen
here; the penalty group indexing in the solver depends on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .basis import BasisSystem, eval_basis, eval_basis_matrix
from .smoothing import FunctionalSample

if TYPE_CHECKING:
    from .ngb_solver import FitResult

__all__ = [
    "CoefficientSurface",
    "DesignMatrix",
    "vec",
    "unvec",
    "build_design_row",
    "build_design",
    "eval_surface",
    "eval_surface_grid",
    "predict",
]


@dataclass(frozen=True, eq=False)
class CoefficientSurface:
    """Bivariate coefficient surface ``beta(s, t) = phi(s)' B psi(t)``."""

    B: np.ndarray
    s_basis: BasisSystem
    t_basis: BasisSystem

    def __post_init__(self):
        expected = (self.s_basis.num_basis, self.t_basis.num_basis)
        if self.B.shape != expected:
            raise ValueError(f"coefficient matrix shape {self.B.shape} != {expected}")


@dataclass(eq=False)
class DesignMatrix:
    """Stacked design rows and centered responses for one dataset."""

    Z: np.ndarray
    y: np.ndarray
    s_basis: BasisSystem
    t_basis: BasisSystem
    sigma2: float | None = None

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]


def vec(mat: np.ndarray) -> np.ndarray:
    """Column-major vectorization: entry (k, l) lands at l*m1 + k."""
    return np.ravel(mat, order="F")


def unvec(v: np.ndarray, m1: int, m2: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    return np.reshape(v, (m1, m2), order="F")


def build_design_row(w: np.ndarray, t: float, phi_gram: np.ndarray, t_basis: BasisSystem) -> np.ndarray:
    """One design row ``kron(psi(t), phi_gram' w)``.

    ``phi_gram`` is the s-basis inner-product matrix; ``t`` outside the
    t-domain raises.
    """
    psi = eval_basis(t_basis, t)
    return np.kron(psi, phi_gram.T @ w)


def build_design(samples, s_basis: BasisSystem, t_basis: BasisSystem) -> DesignMatrix:
    """Assemble the design matrix from centered functional samples."""
    samples = list(samples)
    n = len(samples)
    Z = np.empty((n, s_basis.num_basis * t_basis.num_basis))
    y = np.empty(n)
    for i, sample in enumerate(samples):
        Z[i, :] = build_design_row(sample.w, sample.t, s_basis.gram0, t_basis)
        y[i] = sample.y
    if not np.all(np.isfinite(y)):
        raise ValueError("responses contain non-finite values")
    return DesignMatrix(Z=Z, y=y, s_basis=s_basis, t_basis=t_basis)


def eval_surface(surface: CoefficientSurface, s: float, t: float) -> float:
    """Point evaluation ``phi(s)' B psi(t)``; out-of-domain raises."""
    phi = eval_basis(surface.s_basis, s)
    psi = eval_basis(surface.t_basis, t)
    return float(phi @ surface.B @ psi)


def eval_surface_grid(surface: CoefficientSurface, s_values, t_values) -> np.ndarray:
    """Surface values on a grid, shape (len(s_values), len(t_values))."""
    phi = eval_basis_matrix(surface.s_basis, s_values)
    psi = eval_basis_matrix(surface.t_basis, t_values)
    return phi @ surface.B @ psi.T


def predict(fit: "FitResult", sample: FunctionalSample) -> float:
    """Predicted response for one sample, de-centered via stored offsets."""
    surface = fit.surface
    if sample.w.shape != (surface.s_basis.num_basis,):
        raise ValueError(
            f"sample has {sample.w.shape[0]} coefficients, fit expects "
            f"{surface.s_basis.num_basis}"
        )
    w_offset = fit.w_offset if fit.w_offset is not None else 0.0
    z = build_design_row(sample.w - w_offset, sample.t, surface.s_basis.gram0, surface.t_basis)
    return float(z @ fit.b + fit.y_offset)

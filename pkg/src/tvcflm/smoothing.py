"""Turn raw longitudinal observations into basis-coefficient vectors.

Each subject's discrete measurements are smoothed by penalized least
squares against a shared B-spline basis, with the roughness weight chosen
once per dataset by generalized cross-validation. Centering removes the
dataset mean from both the coefficient vectors and the responses so the
regression model needs no intercept.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .basis import BasisSystem, eval_basis_matrix

__all__ = [
    "LongitudinalRecord",
    "FunctionalSample",
    "smooth_curve",
    "smooth_dataset",
    "select_roughness_gcv",
    "center_dataset",
]

GCV_GRID = tuple(10.0 ** k for k in range(-8, 3))


@dataclass(frozen=True)
class LongitudinalRecord:
    """One subject's raw data: observation pairs plus scalars.

    ``signal`` optionally stores the latent noise-free values at the
    observation points (filled by simulation generators, absent for real
    data).
    """

    subject_id: object
    s_obs: np.ndarray
    x_obs: np.ndarray
    t: float
    y: float = float("nan")
    signal: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "s_obs", np.asarray(self.s_obs, dtype=float))
        object.__setattr__(self, "x_obs", np.asarray(self.x_obs, dtype=float))
        if self.s_obs.shape != self.x_obs.shape:
            raise ValueError("s_obs and x_obs must have matching shapes")
        if self.s_obs.size < 2:
            raise ValueError("need at least 2 observations per subject")


@dataclass(frozen=True)
class FunctionalSample:
    """Smoothed predictor coefficients with the subject's scalars."""

    w: np.ndarray
    t: float
    y: float


def _penalized_projector(basis_matrix: np.ndarray, penalty: np.ndarray, roughness: float):
    """Solve matrix of the penalized normal equations, jittered if singular."""
    normal = basis_matrix.T @ basis_matrix + roughness * penalty
    try:
        np.linalg.cholesky(normal)
    except np.linalg.LinAlgError:
        normal = normal + 1e-10 * np.eye(normal.shape[0])
    return np.linalg.solve(normal, basis_matrix.T)


def smooth_curve(record: LongitudinalRecord, basis: BasisSystem, roughness: float) -> np.ndarray:
    """Penalized least-squares coefficients for one subject's curve.

    Minimizes ``||x - B w||^2 + roughness * w' gram2 w`` over w. A ridge
    jitter of 1e-10 is added only when the normal matrix is singular
    (e.g. roughness 0 with fewer observations than basis functions).
    """
    if roughness < 0:
        raise ValueError("roughness must be nonnegative")
    if not np.all(np.isfinite(record.x_obs)) or not np.all(np.isfinite(record.s_obs)):
        raise ValueError(f"non-finite observations for subject {record.subject_id!r}")
    if np.unique(record.s_obs).size < 2:
        raise ValueError(f"all observation points identical for subject {record.subject_id!r}")
    bmat = eval_basis_matrix(basis, record.s_obs)
    return _penalized_projector(bmat, basis.gram2, roughness) @ record.x_obs


def select_roughness_gcv(records, basis: BasisSystem, grid=GCV_GRID) -> float:
    """Pick one roughness weight for the whole dataset by GCV.

    The score pools residuals across subjects; subjects sharing an
    observation grid share the smoother matrix.
    """
    records = list(records)
    if not records:
        raise ValueError("empty dataset")
    best_rho, best_score = None, np.inf
    for rho in grid:
        score = 0.0
        cache: dict[bytes, tuple[np.ndarray, float]] = {}
        for rec in records:
            key = rec.s_obs.tobytes()
            if key not in cache:
                bmat = eval_basis_matrix(basis, rec.s_obs)
                hat = bmat @ _penalized_projector(bmat, basis.gram2, rho)
                cache[key] = (hat, float(np.trace(hat)))
            hat, tr = cache[key]
            n_obs = rec.s_obs.size
            denom = 1.0 - tr / n_obs
            if denom <= 1e-10:
                score = np.inf
                break
            resid = rec.x_obs - hat @ rec.x_obs
            score += (resid @ resid) / n_obs / denom**2
        if score < best_score:
            best_rho, best_score = rho, score
    if best_rho is None:
        raise ValueError("GCV failed for every candidate roughness")
    return float(best_rho)


def smooth_dataset(records, basis: BasisSystem, roughness: float | None = None):
    """Smooth every record; roughness None triggers GCV selection.

    Returns (samples, roughness_used).
    """
    records = list(records)
    if roughness is None:
        roughness = select_roughness_gcv(records, basis)
    samples = [
        FunctionalSample(w=smooth_curve(rec, basis, roughness), t=rec.t, y=rec.y)
        for rec in records
    ]
    return samples, roughness


def center_dataset(samples):
    """Subtract the mean coefficient vector and mean response.

    Returns (centered_samples, w_mean, y_mean); the means are the offsets
    needed to de-center predictions. Applying the function twice is the
    identity on the already-centered data.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty dataset")
    w_mean = np.mean([s.w for s in samples], axis=0)
    y_mean = float(np.mean([s.y for s in samples]))
    centered = [replace(s, w=s.w - w_mean, y=s.y - y_mean) for s in samples]
    return centered, w_mean, y_mean

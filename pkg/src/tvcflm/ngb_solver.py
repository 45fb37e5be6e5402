"""Nested group bridge solver for the vectorized varying-coefficient model.

The estimator maximizes a Gaussian log-likelihood penalized by (i) a
roughness term on the s-direction curvature of the coefficient surface and
(ii) a nested group bridge penalty over suffix groups of each coefficient
column, which shrinks trailing coefficients to exact zero and thereby
truncates the fitted surface in s. The nonconvex bridge penalty is handled
through an exact reformulation: profiling auxiliary multipliers turns each
inner step into a weighted lasso, solved by cyclic coordinate descent, with
the multipliers updated in closed form between steps.

Suffix group k of column l collects coefficients k..m1 of that column; the
per-coefficient lasso weight is the prefix sum of group terms, so a dead
group pins every deeper coefficient in its column at zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .design import CoefficientSurface, DesignMatrix, unvec, vec

__all__ = [
    "PenaltyConfig",
    "SolverState",
    "FitResult",
    "ridge_init",
    "adaptive_weights",
    "update_eta",
    "update_g",
    "lambda_from_tau",
    "tau_from_lambda",
    "group_bridge_value",
    "penalty_root",
    "build_augmented",
    "lasso_cd",
    "update_sigma",
    "fit_ngb",
]

# Dead groups (zero group norm) contribute 1/ETA_CLAMP to the lasso weight
# prefix sums, which pins their coefficients at zero without bookkeeping.
ETA_CLAMP = 1e-10
SIGMA2_FLOOR = 1e-12
SIGMA2_DIVERGED = 1e12
WEIGHT_CLAMP = 1e-10


@dataclass(frozen=True, eq=False)
class PenaltyConfig:
    """Tuning parameters and adaptive weights for one fit.

    ``tau`` is the sparsity weight of the reformulated problem; ``tau = 0``
    selects the pure ridge-roughness path (no truncation). ``weights`` is
    the (m1, m2) matrix of adaptive group weights.
    """

    kappa: float
    tau: float
    gamma: float
    weights: np.ndarray

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be a matrix of positive finite values")
        object.__setattr__(self, "weights", w)

    @property
    def m1(self) -> int:
        return self.weights.shape[0]

    @property
    def m2(self) -> int:
        return self.weights.shape[1]

    @property
    def lam(self) -> float:
        """Bridge-penalty weight implied by ``tau`` (0 when tau is 0)."""
        if self.tau == 0.0:
            return 0.0
        return lambda_from_tau(self.tau, self.gamma)


@dataclass
class SolverState:
    """Mutable state carried across outer iterations of one fit."""

    b: np.ndarray
    sigma2: float
    eta: np.ndarray
    g: np.ndarray
    iteration: int = 0
    objective_history: list[float] = field(default_factory=list)


@dataclass(eq=False)
class FitResult:
    """Fitted coefficients with sparsity pattern and selection metadata."""

    surface: CoefficientSurface
    b: np.ndarray
    sigma2: float
    active: np.ndarray
    truncation: np.ndarray
    iterations: int
    converged: bool
    monotone: bool
    objective_history: np.ndarray
    config: PenaltyConfig
    loglik: float = float("nan")
    edf: float = float("nan")
    bic: float = float("nan")
    w_offset: np.ndarray | None = None
    y_offset: float = 0.0


def lambda_from_tau(tau: float, gamma: float) -> float:
    """Bridge weight equivalent to the reformulation weight ``tau``."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    return tau ** (1.0 - gamma) * gamma ** (-gamma) * (1.0 - gamma) ** (gamma - 1.0)


def tau_from_lambda(lam: float, gamma: float) -> float:
    """Closed-form inverse of :func:`lambda_from_tau`."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    if lam <= 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    return (lam * gamma**gamma * (1.0 - gamma) ** (1.0 - gamma)) ** (1.0 / (1.0 - gamma))


def suffix_group_norms(coef_matrix: np.ndarray) -> np.ndarray:
    """l1 norm of each suffix group: entry (k, l) is sum_{j>=k} |b_jl|."""
    return np.abs(coef_matrix)[::-1].cumsum(axis=0)[::-1]


def ridge_init(design: DesignMatrix, kappa: float, ridge: float) -> np.ndarray:
    """Generalized ridge pilot estimate used to seed the solver and weights."""
    if ridge <= 0:
        raise ValueError(f"ridge must be > 0, got {ridge}")
    Z, y = design.Z, design.y
    n, p = Z.shape
    pen = np.kron(np.eye(design.t_basis.num_basis), design.s_basis.gram2)
    lhs = Z.T @ Z + n * kappa * pen + n * ridge * np.eye(p)
    return np.linalg.solve(lhs, Z.T @ y)


def relative_ridge(design: DesignMatrix, factor: float = 1e-8) -> float:
    """Pilot ridge proportional to the mean squared column scale of Z.

    Keeps the pilot (and everything derived from it) invariant under a
    rescaling of the predictor curves.
    """
    Z = design.Z
    scale = float(np.mean(Z * Z))
    return factor * max(scale, 1e-300)


def adaptive_weights(b_pilot: np.ndarray, gamma: float, m1: int, m2: int) -> np.ndarray:
    """Adaptive group weights ``|A_k|^(1-gamma) / ||pilot suffix||_1^gamma``.

    Suffix norms below 1e-10 are clamped so dead pilot groups get a large
    but finite weight.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    norms = suffix_group_norms(unvec(np.asarray(b_pilot, dtype=float), m1, m2))
    norms = np.maximum(norms, WEIGHT_CLAMP)
    sizes = np.arange(m1, 0, -1, dtype=float)[:, None]
    return sizes ** (1.0 - gamma) / norms**gamma


def update_eta(b: np.ndarray, config: PenaltyConfig) -> np.ndarray:
    """Closed-form multiplier update; zero exactly on zero groups."""
    if config.tau <= 0:
        raise ValueError("eta update requires tau > 0")
    if not 0.0 < config.gamma < 1.0:
        raise ValueError("eta update requires gamma in (0, 1)")
    gamma = config.gamma
    norms = suffix_group_norms(unvec(np.asarray(b, dtype=float), config.m1, config.m2))
    scale = ((1.0 - gamma) / (config.tau * gamma)) ** gamma
    return config.weights * scale * norms**gamma


def update_g(eta: np.ndarray, config: PenaltyConfig) -> np.ndarray:
    """Per-coefficient lasso weights as prefix sums of group terms.

    A group with ``eta <= ETA_CLAMP`` contributes the clamped sentinel
    ``1/ETA_CLAMP``, so every coefficient at or below a dead group keeps a
    weight of at least ``1/ETA_CLAMP``.
    """
    gamma = config.gamma
    eta = np.asarray(eta, dtype=float)
    terms = np.full_like(eta, 1.0 / ETA_CLAMP)
    alive = eta > ETA_CLAMP
    terms[alive] = config.weights[alive] ** (1.0 / gamma) * eta[alive] ** (1.0 - 1.0 / gamma)
    return np.cumsum(terms, axis=0)


def group_bridge_value(b: np.ndarray, config: PenaltyConfig, n: int = 1) -> float:
    """Nested group bridge penalty ``n * lam * sum c * ||suffix||_1^gamma``."""
    lam = config.lam
    if lam == 0.0:
        return 0.0
    norms = suffix_group_norms(unvec(np.asarray(b, dtype=float), config.m1, config.m2))
    return float(n * lam * np.sum(config.weights * norms**config.gamma))


def penalty_root(curvature: np.ndarray, m2: int) -> np.ndarray:
    """Symmetric square root W of ``kron(I_m2, curvature)``.

    Eigenvalues below 1e-12 are dropped (set to zero), which leaves the
    product ``W W'`` exact because they are only roundoff away from the
    curvature matrix's true nullspace.
    """
    evals, evecs = np.linalg.eigh(np.asarray(curvature, dtype=float))
    evals = np.where(evals < 1e-12, 0.0, evals)
    root = (evecs * np.sqrt(evals)) @ evecs.T
    return np.kron(np.eye(m2), root)


def build_augmented(design: DesignMatrix, kappa: float, sigma2: float):
    """Augmented system absorbing the roughness penalty into least squares.

    Returns ``(y_aug, U)`` with ``||y_aug - U b||^2`` equal to
    ``||y - Z b||^2 + n * sigma2 * kappa * b' kron(I, V) b``.
    """
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    Z, y = design.Z, design.y
    n, p = Z.shape
    root = penalty_root(design.s_basis.gram2, design.t_basis.num_basis)
    U = np.vstack([Z, np.sqrt(n * sigma2 * kappa) * root.T])
    y_aug = np.concatenate([y, np.zeros(p)])
    return y_aug, U


@numba.njit(cache=True)
def _cd_kernel(gram, corr, weights, sigma2, b, gram_b, tol, max_sweeps):
    """Cyclic soft-threshold sweeps on the quadratic form of the lasso.

    Minimizes (1/sigma2) * (b' gram b - 2 corr' b) + sum weights_j |b_j|,
    maintaining gram_b = gram @ b incrementally. Returns the sweep count,
    or -1 if the coefficient changes never drop below tol.
    """
    p = b.shape[0]
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            rho = corr[j] - gram_b[j] + gjj * b[j]
            thr = 0.5 * weights[j] * sigma2
            if rho > thr:
                new = (rho - thr) / gjj
            elif rho < -thr:
                new = (rho + thr) / gjj
            else:
                new = 0.0
            delta = new - b[j]
            if delta != 0.0:
                for k in range(p):
                    gram_b[k] += delta * gram[j, k]
                b[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if max_delta < tol:
            return sweep + 1
    return -1


def lasso_cd(
    U: np.ndarray,
    y: np.ndarray,
    sigma2: float,
    g: np.ndarray,
    n_samples: int,
    warm_start: np.ndarray | None = None,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
) -> np.ndarray:
    """Weighted lasso solve in the original coefficient scale.

    Minimizes ``(1/sigma2) ||y - U b||^2 + n_samples * sum g_j |b_j|``,
    equivalent to the unit-weight lasso in the rescaled variable
    ``b / (n_samples * g)``; coordinate updates and the convergence
    tolerance act on the original-scale coefficients.
    """
    U = np.ascontiguousarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    weights = float(n_samples) * np.ravel(np.asarray(g, dtype=float), order="F")
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise ValueError("lasso weights must be positive and finite")
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    gram = U.T @ U
    corr = U.T @ y
    b = np.zeros(U.shape[1]) if warm_start is None else np.array(warm_start, dtype=float)
    gram_b = gram @ b
    sweeps = _cd_kernel(gram, corr, weights, float(sigma2), b, gram_b, float(tol), max_sweeps)
    if sweeps < 0:
        raise RuntimeError(
            f"coordinate descent did not converge in {max_sweeps} sweeps "
            f"(p={b.size}, sigma2={sigma2:.3e}, max weight={weights.max():.3e})"
        )
    return b


def update_sigma(y_aug: np.ndarray, U: np.ndarray, b: np.ndarray, n: int) -> float:
    """Noise variance from the augmented residual, floored at 1e-12."""
    if n < 1:
        raise ValueError("n must be >= 1")
    resid = y_aug - U @ b
    return max(float(resid @ resid) / n, SIGMA2_FLOOR)


def _solve_psd(lhs: np.ndarray, rhs: np.ndarray, n: int) -> np.ndarray:
    try:
        np.linalg.cholesky(lhs)
        return np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        jitter = lhs + n * 1e-10 * np.eye(lhs.shape[0])
        return np.linalg.solve(jitter, rhs)


def _truncation_points(coef_matrix: np.ndarray) -> np.ndarray:
    """Largest 1-based row index with a nonzero entry, per column."""
    m1, m2 = coef_matrix.shape
    points = np.zeros(m2, dtype=int)
    for l in range(m2):
        nz = np.flatnonzero(coef_matrix[:, l] != 0.0)
        points[l] = int(nz[-1]) + 1 if nz.size else 0
    return points


def fit_ngb(
    design: DesignMatrix,
    config: PenaltyConfig,
    b_init: np.ndarray | None = None,
    *,
    outer_tol: float = 1e-6,
    max_outer: int = 500,
    cd_tol: float = 1e-7,
    max_sweeps: int = 10_000,
    init_ridge: float = 1e-8,
) -> FitResult:
    """Run the alternating estimator to convergence.

    Each outer iteration refreshes the multipliers and lasso weights from
    the current coefficients, solves the weighted lasso at the current
    noise variance (exact penalized least squares when ``tau = 0``), and
    updates the noise variance from the augmented residual. Stops when the
    relative sup-norm change of the coefficients falls below ``outer_tol``.
    """
    Z, y = design.Z, design.y
    n, p = Z.shape
    m1, m2 = design.s_basis.num_basis, design.t_basis.num_basis
    if config.weights.shape != (m1, m2):
        raise ValueError(
            f"weights shape {config.weights.shape} does not match bases ({m1}, {m2})"
        )
    if config.tau > 0 and config.gamma >= 1.0:
        raise ValueError("the lasso reformulation requires gamma < 1 when tau > 0")

    pen = np.kron(np.eye(m2), design.s_basis.gram2)
    ZtZ = Z.T @ Z
    Zty = Z.T @ y
    yty = float(y @ y)

    if b_init is None:
        b = ridge_init(design, config.kappa, relative_ridge(design, init_ridge))
    else:
        b = np.array(b_init, dtype=float)
    rss0 = max(yty - 2.0 * (Zty @ b) + b @ (ZtZ @ b), 0.0)
    state = SolverState(
        b=b,
        sigma2=max(rss0 / n, SIGMA2_FLOOR),
        eta=np.zeros((m1, m2)),
        g=np.zeros((m1, m2)),
    )

    converged = False
    monotone = True
    negll = np.nan
    while state.iteration < max_outer:
        state.iteration += 1
        quad = ZtZ + (n * state.sigma2 * config.kappa) * pen
        if config.tau == 0.0:
            b_new = _solve_psd(quad, Zty, n)
        else:
            state.eta = update_eta(state.b, config)
            state.g = update_g(state.eta, config)
            weights = n * vec(state.g)
            b_new = state.b.copy()
            gram_b = quad @ b_new
            sweeps = _cd_kernel(
                np.ascontiguousarray(quad), Zty, weights, state.sigma2, b_new, gram_b, cd_tol, max_sweeps
            )
            if sweeps < 0:
                raise RuntimeError(
                    f"inner lasso did not converge in {max_sweeps} sweeps at outer "
                    f"iteration {state.iteration} (kappa={config.kappa:.3e}, "
                    f"tau={config.tau:.3e}, sigma2={state.sigma2:.3e})"
                )

        # Augmented residual reuses quad, which carries the old sigma2 as the
        # algorithm prescribes; the roughness weight refreshes once per outer
        # iteration.
        aug_rss = max(yty - 2.0 * (Zty @ b_new) + b_new @ (quad @ b_new), 0.0)
        sigma2_new = max(aug_rss / n, SIGMA2_FLOOR)
        if sigma2_new > SIGMA2_DIVERGED:
            raise RuntimeError(
                f"noise variance diverged ({sigma2_new:.3e}) at outer iteration {state.iteration}"
            )

        rss = max(yty - 2.0 * (Zty @ b_new) + b_new @ (ZtZ @ b_new), 0.0)
        negll = 0.5 * n * np.log(2.0 * np.pi * sigma2_new) + 0.5 * rss / sigma2_new
        objective = (
            negll
            + n * config.kappa * float(b_new @ (pen @ b_new))
            + group_bridge_value(b_new, config, n)
        )
        if state.objective_history and objective > state.objective_history[-1] + 1e-8:
            monotone = False
        state.objective_history.append(objective)

        delta = np.max(np.abs(b_new - state.b)) / max(np.max(np.abs(state.b)), 1e-10)
        state.b = b_new
        state.sigma2 = sigma2_new
        if delta < outer_tol:
            converged = True
            break

    if not monotone:
        warnings.warn(
            "penalized objective increased between outer iterations; "
            "descent is monitored, not guaranteed",
            RuntimeWarning,
            stacklevel=2,
        )

    coef_matrix = unvec(state.b, m1, m2)
    return FitResult(
        surface=CoefficientSurface(coef_matrix, design.s_basis, design.t_basis),
        b=state.b,
        sigma2=state.sigma2,
        active=np.flatnonzero(state.b != 0.0),
        truncation=_truncation_points(coef_matrix),
        iterations=state.iteration,
        converged=converged,
        monotone=monotone,
        objective_history=np.asarray(state.objective_history),
        config=config,
        loglik=-negll,
    )

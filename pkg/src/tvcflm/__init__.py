"""Truncated estimation for varying-coefficient functional linear models."""

from .basis import BasisSystem, eval_basis, eval_basis_matrix, make_basis
from .design import (
    CoefficientSurface,
    DesignMatrix,
    build_design,
    build_design_row,
    eval_surface,
    eval_surface_grid,
    predict,
    unvec,
    vec,
)
from .ngb_solver import (
    FitResult,
    PenaltyConfig,
    adaptive_weights,
    build_augmented,
    fit_ngb,
    group_bridge_value,
    lambda_from_tau,
    lasso_cd,
    ridge_init,
    tau_from_lambda,
    update_eta,
    update_g,
    update_sigma,
)
from .pipeline import FitSettings, PipelineFit, fit_vcflm
from .selection import TuningGrid, bic, effective_df, grid_search, ridge_search
from .simulate import (
    SimConfig,
    SimResult,
    generate_predictor,
    generate_responses,
    generate_true_surface,
    rmse_beta,
    rmse_y,
    run_study,
    save_study,
)
from .smoothing import (
    FunctionalSample,
    LongitudinalRecord,
    center_dataset,
    select_roughness_gcv,
    smooth_curve,
    smooth_dataset,
)

__version__ = "0.1.0"

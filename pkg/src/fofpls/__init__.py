"""Function-on-function interaction regression via metric-space PLS."""

from .basis import (
    BasisSystem,
    Grid,
    TensorMetric,
    make_bspline_basis,
    project_curve,
    symmetric_sqrt,
    tensor_metric,
)
from .design import (
    FunctionalSample,
    StackedDesign,
    TermSet,
    build_design,
    center_sample,
    design_columns_for_new,
)
from .metrics import CurveNorm, mape, mse, mspe, r2, r2_pred, rmspe
from .pls import (
    CoefficientSurfaces,
    ConvergenceError,
    FittedModel,
    PLSFit,
    fit_model,
    nipals_fit,
    predict,
    prediction_path,
    reconstruct_surfaces,
)
from .selection import (
    SelectionTrace,
    forward_select_interactions,
    forward_select_main,
    select_basis_counts,
    select_components,
)
from .sim import (
    BenchmarkReport,
    SimConfig,
    SimData,
    generate_response,
    make_predictors,
    run_benchmark,
    sample_gp,
    simulate_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "BasisSystem",
    "BenchmarkReport",
    "CoefficientSurfaces",
    "ConvergenceError",
    "CurveNorm",
    "FittedModel",
    "FunctionalSample",
    "Grid",
    "PLSFit",
    "SelectionTrace",
    "SimConfig",
    "SimData",
    "StackedDesign",
    "TensorMetric",
    "TermSet",
    "build_design",
    "center_sample",
    "design_columns_for_new",
    "fit_model",
    "forward_select_interactions",
    "forward_select_main",
    "generate_response",
    "make_bspline_basis",
    "make_predictors",
    "mape",
    "mse",
    "mspe",
    "nipals_fit",
    "predict",
    "prediction_path",
    "project_curve",
    "r2",
    "r2_pred",
    "reconstruct_surfaces",
    "rmspe",
    "run_benchmark",
    "sample_gp",
    "select_basis_counts",
    "select_components",
    "simulate_dataset",
    "symmetric_sqrt",
    "tensor_metric",
]

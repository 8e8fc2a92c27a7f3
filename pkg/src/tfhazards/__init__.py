"""Smooth low-rank two-way hazard estimation for right-censored waiting times."""

from .admm import (
    BootstrapBands,
    FitConfig,
    HazardFit,
    adapt_rho,
    bootstrap,
    dual_update,
    fit,
    h_update,
    residuals,
    uv_update,
)
from .grid import (
    CellStats,
    DomainError,
    EventRecord,
    FilterConfig,
    TimeGrid,
    accumulate,
    apply_filters,
    arrival_index,
    decompose_wait,
)
from .mle import HazardMatrix, log_likelihood, mle, scree
from .smoothing import (
    FactorModel,
    RoughnessMatrix,
    build_omega,
    fit_rank_one,
    fit_rank_r,
    gcv_select,
    identify,
    penalty,
)

__version__ = "0.1.0"

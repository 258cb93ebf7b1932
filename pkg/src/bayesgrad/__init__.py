"""Bayesian and unbiased linear gradient estimators for parametrised quantum circuits."""

from .allocators import (
    ErrorBudget,
    GeneratorDecomposition,
    InfeasibleBudget,
    MeasurementPlan,
    blge_allocate,
    effective_spectral_width,
    error_budget,
    psr_allocate,
    slge_allocate,
    ulge_allocate,
)
from .priors import PriorModel, SpectrumWithMultiplicities, two_design_prior
from .trigcore import FourierModel, FrequencySpectrum, SineSeries

__version__ = "0.1.0"

__all__ = [
    "ErrorBudget",
    "FourierModel",
    "FrequencySpectrum",
    "GeneratorDecomposition",
    "InfeasibleBudget",
    "MeasurementPlan",
    "PriorModel",
    "SineSeries",
    "SpectrumWithMultiplicities",
    "blge_allocate",
    "effective_spectral_width",
    "error_budget",
    "psr_allocate",
    "slge_allocate",
    "two_design_prior",
    "ulge_allocate",
]

"""Distributional balancing weights from characteristic function distances.

Weights minimize the squared characteristic-function distance (a kernel
discrepancy) between each treatment group and the full sample, and feed
weighting estimators of the ATE and, with a binary instrument, the LATE.
Inference uses subsampling; the bootstrap is provided for comparison.
"""

from __future__ import annotations

__version__ = "0.1.0"

from ._backend import BACKEND
from .balance import BalanceConfig, BalanceWeights, assemble_qp, balance_from_gram, balance_weights
from .cfd import CfdReport, GroupSpec, cfd2_two_sample, cfd_report
from .estimators import Dataset, Estimate, ate_weighted, fit_logistic, ipw_hajek_weights, late_weighted
from .inference import (
    CiResult,
    WeightingPipeline,
    bootstrap_ci,
    select_subsample_size,
    subsample_ci,
)
from .kernels import (
    FrequencySample,
    GramMatrix,
    SpectralDensity,
    gram,
    kernel_eval,
    median_heuristic,
    parse_density,
    rf_gram,
    sample_frequencies,
)
from .qp import QpProblem, QpSettings, QpSolution, solve_qp

__all__ = [
    "BACKEND",
    "BalanceConfig",
    "BalanceWeights",
    "CfdReport",
    "CiResult",
    "Dataset",
    "Estimate",
    "FrequencySample",
    "GramMatrix",
    "GroupSpec",
    "QpProblem",
    "QpSettings",
    "QpSolution",
    "SpectralDensity",
    "WeightingPipeline",
    "assemble_qp",
    "ate_weighted",
    "balance_from_gram",
    "balance_weights",
    "bootstrap_ci",
    "cfd2_two_sample",
    "cfd_report",
    "fit_logistic",
    "gram",
    "ipw_hajek_weights",
    "kernel_eval",
    "late_weighted",
    "median_heuristic",
    "parse_density",
    "rf_gram",
    "sample_frequencies",
    "select_subsample_size",
    "solve_qp",
    "subsample_ci",
]

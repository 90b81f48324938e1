"""Nonparametric outcome regressions feeding the shared ATE pipeline."""

from .ate import bnp_ate
from .dp import (
    ClusterParams,
    ColumnModel,
    DPConfig,
    DPFit,
    DPState,
    dp_fit,
    dp_predict,
    dp_regression,
    dp_weights,
    draw_base_params,
)
from .gp import GPConfig, GPFit, gp_fit_predict, gp_kernel
from .trees import BARTConfig, BARTFit, TreeEnsemble, bart_fit_predict

__all__ = [
    "BARTConfig",
    "BARTFit",
    "ClusterParams",
    "ColumnModel",
    "DPConfig",
    "DPFit",
    "DPState",
    "GPConfig",
    "GPFit",
    "TreeEnsemble",
    "bart_fit_predict",
    "bnp_ate",
    "dp_fit",
    "dp_predict",
    "dp_regression",
    "dp_weights",
    "draw_base_params",
    "gp_fit_predict",
    "gp_kernel",
]

"""Multiplicative multitask feature learning.

Task weights factor as ``alpha_t = diag(c) beta_t`` with a shared,
nonnegative gate ``c`` and task-specific ``beta_t``.
"""

from .core import (
    Decomposition,
    FitResult,
    MultitaskDataset,
    RegularizerSpec,
    TaskData,
    joint_objective,
    map_joint_to_multiplicative,
    map_multiplicative_to_joint,
    multiplicative_objective,
    row_operator_norm,
    variational_objective,
)
from .optimizer import FitOptions, fit, fit_single_task, predict

__all__ = [
    "Decomposition",
    "FitOptions",
    "FitResult",
    "MultitaskDataset",
    "RegularizerSpec",
    "TaskData",
    "fit",
    "fit_single_task",
    "joint_objective",
    "map_joint_to_multiplicative",
    "map_multiplicative_to_joint",
    "multiplicative_objective",
    "predict",
    "row_operator_norm",
    "variational_objective",
]
__version__ = "0.1.0"

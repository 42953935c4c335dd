"""Optimal sparse survival trees under the integrated Brier score."""

from .bounds import BoundConfig
from .dataset import BinaryDataset, Binarizer, RawDataset, apply_binarizer, binarize, load_csv, veterans_recipe
from .metrics import EvaluationReport, cumulative_dynamic_auc, evaluate, harrell_c, ibs_ratio, uno_c
from .reference import ReferenceModel, export_losses, fit_reference, import_losses, reference_losses
from .solver import SolveResult, greedy_tree, solve
from .survival import StepFunction, km_estimator, sample_loss, tree_loss
from .tree import Leaf, Split, SurvivalTree

__version__ = "0.1.0"

__all__ = [
    "BinaryDataset",
    "Binarizer",
    "BoundConfig",
    "EvaluationReport",
    "Leaf",
    "RawDataset",
    "ReferenceModel",
    "SolveResult",
    "Split",
    "StepFunction",
    "SurvivalTree",
    "apply_binarizer",
    "binarize",
    "cumulative_dynamic_auc",
    "evaluate",
    "export_losses",
    "fit_reference",
    "greedy_tree",
    "harrell_c",
    "ibs_ratio",
    "import_losses",
    "km_estimator",
    "load_csv",
    "reference_losses",
    "sample_loss",
    "solve",
    "tree_loss",
    "uno_c",
    "veterans_recipe",
]

"""Deterministic tabular baseline trainers for sandboxed analysis scripts.

A script hands over a JSON request (label, features, formulation, derived
feature recipes, split seed, test fraction), the toolkit trains a
regularized linear or logistic baseline on a seeded deterministic split,
writes ``predictions.csv`` into the working directory and prints the
sentinel result block expected by the calling engine.
"""

from .request import TrainerRequest, load_request
from .recipes import RecipeContext, RecipeError, UnknownColumnError, derive_feature
from .trainers import run_request, run_request_file, train_and_report

__version__ = "0.1.0"

__all__ = [
    "TrainerRequest",
    "load_request",
    "RecipeContext",
    "RecipeError",
    "UnknownColumnError",
    "derive_feature",
    "run_request",
    "run_request_file",
    "train_and_report",
]

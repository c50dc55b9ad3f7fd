from .adaboost import ADA_GRID, AdaModel, AdaParams, train_adaboost
from .ensembles import (ALL_CONSTRAINTS, HistoryBank, HistoryConstraint, StackedForest, WeightedPrEnsemble,
                        fit_specialists, stacked_rf, weighted_pr_ensemble)
from .forest import RF_GRID, RandomForestModel, RfParams, TrainingError, gini_importance, train_random_forest
from .grid import (FAMILIES, GridResult, expand_grid, grid_search, load_model, make_params, model_from_dict,
                   save_model)
from .logreg import LOGREG_GRID, LogRegModel, LogRegParams, train_logreg

__all__ = [
    "ADA_GRID", "AdaModel", "AdaParams", "train_adaboost",
    "ALL_CONSTRAINTS", "HistoryBank", "HistoryConstraint", "StackedForest", "WeightedPrEnsemble",
    "fit_specialists", "stacked_rf", "weighted_pr_ensemble",
    "RF_GRID", "RandomForestModel", "RfParams", "TrainingError", "gini_importance", "train_random_forest",
    "FAMILIES", "GridResult", "expand_grid", "grid_search", "make_params", "model_from_dict", "load_model", "save_model",
    "LOGREG_GRID", "LogRegModel", "LogRegParams", "train_logreg",
]

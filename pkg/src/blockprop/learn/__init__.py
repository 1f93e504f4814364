from .metrics import MetricError, mae, pearson, r2_score, roc_auc
from .trees import (
    BoostParams,
    ColumnMismatchError,
    ForestParams,
    TrainingError,
    Tree,
    TreeEnsemble,
    fit_boosted,
    fit_boosted_regressor,
    fit_forest,
    predict,
    train_classifier,
    train_regressor,
)

__all__ = [
    "BoostParams",
    "ColumnMismatchError",
    "ForestParams",
    "MetricError",
    "TrainingError",
    "Tree",
    "TreeEnsemble",
    "fit_boosted",
    "fit_boosted_regressor",
    "fit_forest",
    "mae",
    "pearson",
    "predict",
    "r2_score",
    "roc_auc",
    "train_classifier",
    "train_regressor",
]

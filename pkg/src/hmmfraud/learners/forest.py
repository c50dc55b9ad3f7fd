from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .tree import DEFAULT_MAX_BINS, Tree, bin_features, grow


class TrainingError(ValueError):
    pass


def check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int8)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise TrainingError(f"X {X.shape} and y {y.shape} do not align")
    if not np.all(np.isfinite(X)):
        raise TrainingError("X contains non-finite values")
    if not np.isin(y, (0, 1)).all():
        raise TrainingError("labels must be 0/1")
    if y.min() == y.max():
        raise TrainingError("training labels contain a single class")
    return X, y


@dataclass
class RfParams:
    n_trees: int = 300
    n_features_per_split: int = 7
    min_samples_leaf: int = 1
    max_depth: Optional[int] = None  # None = unlimited
    seed: int = 0
    max_bins: Optional[int] = DEFAULT_MAX_BINS  # None = every distinct value is a candidate

    def __post_init__(self):
        if self.n_trees < 1 or self.n_features_per_split < 1 or self.min_samples_leaf < 1:
            raise ValueError("RF counts must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive or None")


# default search grid; "None" depth means unlimited
RF_GRID = {
    "n_trees": [300],
    "n_features_per_split": [1, 7, 13],
    "min_samples_leaf": [1, 20, 40],
    "max_depth": [4, None],
}


@dataclass
class RandomForestModel:
    params: RfParams
    trees: list
    n_features: int

    def predict_proba(self, X) -> np.ndarray:
        """Mean over trees of the leaf fraction of positives."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.zeros(X.shape[0])
        for t in self.trees:
            out += t.predict(X)
        return out / len(self.trees)

    @property
    def feature_importances_(self) -> np.ndarray:
        return gini_importance(self)

    def to_dict(self) -> dict:
        return {"kind": "random_forest", "params": asdict(self.params), "n_features": self.n_features,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForestModel":
        return cls(RfParams(**d["params"]), [Tree.from_dict(t) for t in d["trees"]], d["n_features"])


def train_random_forest(X, y, p: RfParams) -> RandomForestModel:
    X, y = check_xy(X, y)
    n, d = X.shape
    if p.n_features_per_split > d:
        raise TrainingError(f"n_features_per_split={p.n_features_per_split} exceeds {d} features")
    binning = bin_features(X, p.max_bins)
    trees = []
    for i in range(p.n_trees):
        # per-tree stream: identical forests whatever the training order
        rng = np.random.default_rng([p.seed, i])
        count = np.bincount(rng.integers(0, n, n), minlength=n)
        tree_seed = int(rng.integers(1, 2 ** 62))
        trees.append(grow(binning, y, count, count, p.n_features_per_split, p.min_samples_leaf,
                          p.max_depth, tree_seed))
    return RandomForestModel(p, trees, d)


def gini_importance(model: RandomForestModel) -> np.ndarray:
    """Mean decrease in gini impurity, each tree normalised to sum 1."""
    total = np.zeros(model.n_features)
    for t in model.trees:
        s = t.importance.sum()
        if s > 0:
            total += t.importance / s
    s = total.sum()
    return total / s if s > 0 else total

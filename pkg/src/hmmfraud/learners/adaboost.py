"""Discrete two-class SAMME boosting of shallow gini trees."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .forest import check_xy
from .tree import Tree, bin_features, grow

EPS = np.finfo(np.float64).eps


@dataclass
class AdaParams:
    n_trees: int = 100
    learning_rate: float = 1.0
    # early stop when a round's weighted error <= stop_tolerance * machine epsilon
    stop_tolerance: float = 10.0
    max_tree_depth: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_tree_depth < 1 or self.learning_rate <= 0 or self.stop_tolerance < 0:
            raise ValueError("invalid AdaBoost parameters")


ADA_GRID = {"n_trees": [100, 400], "learning_rate": [0.1, 1, 100], "stop_tolerance": [10, 100],
            "max_tree_depth": [1, 4]}


@dataclass
class AdaModel:
    params: AdaParams
    trees: list
    alphas: np.ndarray
    errors: np.ndarray

    def decision_function(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        margin = np.zeros(X.shape[0])
        for t, a in zip(self.trees, self.alphas):
            margin += a * np.where(t.predict(X) > 0.5, 1.0, -1.0)
        return margin

    def predict_proba(self, X) -> np.ndarray:
        """Vote margin rescaled from [-sum(alpha), sum(alpha)] to [0, 1]."""
        return 0.5 * (self.decision_function(X) / self.alphas.sum() + 1.0)

    def to_dict(self) -> dict:
        return {"kind": "adaboost", "params": asdict(self.params), "trees": [t.to_dict() for t in self.trees],
                "alphas": self.alphas.tolist(), "errors": self.errors.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AdaModel":
        return cls(AdaParams(**d["params"]), [Tree.from_dict(t) for t in d["trees"]],
                   np.asarray(d["alphas"]), np.asarray(d["errors"]))


def train_adaboost(X, y, p: AdaParams) -> AdaModel:
    X, y = check_xy(X, y)
    n, d = X.shape
    binning = bin_features(X)
    ones = np.ones(n, dtype=np.int64)
    log_w = np.full(n, -np.log(n))
    trees, alphas, errors = [], [], []
    rng = np.random.default_rng(p.seed)
    for m in range(p.n_trees):
        w = np.exp(log_w - log_w.max())
        w /= w.sum()
        tree = grow(binning, y, w * n, ones, d, 1, p.max_tree_depth, int(rng.integers(1, 2 ** 62)))
        miss = (tree.predict(X) > 0.5) != (y == 1)
        err = float(w[miss].sum())
        if err >= 0.5:
            if not trees:
                # nothing better than chance: keep the round with a token weight
                trees.append(tree)
                alphas.append(EPS)
                errors.append(err)
            break
        perfect = err <= p.stop_tolerance * EPS
        alpha = p.learning_rate * np.log((1.0 - err) / max(err, EPS))
        trees.append(tree)
        alphas.append(alpha)
        errors.append(err)
        if perfect:
            break
        # log-domain update keeps large learning rates finite
        log_w = log_w + alpha * miss
    return AdaModel(p, trees, np.asarray(alphas), np.asarray(errors))

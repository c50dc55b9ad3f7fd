from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from ..evalkit import pr_auc
from .adaboost import ADA_GRID, AdaModel, AdaParams, train_adaboost
from .forest import RF_GRID, RandomForestModel, RfParams, train_random_forest
from .logreg import LOGREG_GRID, LogRegModel, LogRegParams, train_logreg

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Family:
    name: str
    params_cls: type
    train: Callable
    model_cls: type
    grid: dict


FAMILIES = {
    "rf": Family("rf", RfParams, train_random_forest, RandomForestModel, RF_GRID),
    "logreg": Family("logreg", LogRegParams, train_logreg, LogRegModel, LOGREG_GRID),
    "adaboost": Family("adaboost", AdaParams, train_adaboost, AdaModel, ADA_GRID),
}


def model_from_dict(d: dict):
    kind = {"random_forest": "rf", "logreg": "logreg", "adaboost": "adaboost"}[d["kind"]]
    return FAMILIES[kind].model_cls.from_dict(d)


def save_model(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def expand_grid(grid: dict) -> list[dict]:
    """Cells in row-major order of the grid's keys."""
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def make_params(family: str, cell: dict, **fixed):
    fam = FAMILIES[family]
    allowed = {f.name for f in fields(fam.params_cls)}
    kwargs = {k: v for k, v in {**fixed, **cell}.items() if k in allowed}
    return fam.params_cls(**kwargs)


@dataclass
class GridResult:
    best_params: object
    best_model: object
    best_score: float
    report: list  # one dict per cell: params + validation score

    def to_csv(self, path) -> None:
        keys = [k for k in self.report[0] if k != "validation_pr_auc"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys + ["validation_pr_auc"])
            for row in self.report:
                w.writerow([row[k] for k in keys] + [f"{row['validation_pr_auc']:.6f}"])


def grid_search(family: str, grid: dict, train: tuple, validation: tuple, metric=pr_auc,
                fit: Callable | None = None, **fixed) -> GridResult:
    """Exhaustive search maximising ``metric(y_val, scores)``; ties keep the first cell.

    ``fixed`` supplies parameters outside the grid (e.g. seed).
    """
    cells = expand_grid(grid)
    if not cells:
        raise ValueError("empty grid")
    fit = fit or FAMILIES[family].train
    X, y = train
    Xv, yv = validation
    n_feat = np.asarray(X).shape[1]
    best = None
    report = []
    for cell in cells:
        if family == "rf" and cell.get("n_features_per_split", 1) > n_feat:
            # cell not realisable on this feature set; clip like the usual max_features semantics
            cell = {**cell, "n_features_per_split": n_feat}
        params = make_params(family, cell, **fixed)
        model = fit(X, y, params)
        score = float(metric(yv, model.predict_proba(Xv)))
        report.append({**cell, "validation_pr_auc": score})
        log.debug("%s %s -> %.4f", family, cell, score)
        if best is None or score > best[2]:
            best = (params, model, score)
    return GridResult(best[0], best[1], best[2], report)

"""Forests specialised on history constraints, combined by weighting or stacking.

A history constraint [tm_min, ch_min] selects the transactions whose
terminal has at least ``tm_min`` and whose card-holder has at least
``ch_min`` transactions up to and including the current one. Its forest
sees the base features plus the terminal HMM features computed with
window ``tm_min`` and the card-holder HMM features computed with window
``ch_min`` (none when the minimum is 0).
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, replace

import numpy as np

from ..evalkit import pr_auc
from .forest import RfParams, train_random_forest

HISTORY_LEVELS = (0, 3, 5, 7)
# hmm1..hmm8 column positions by actor, in seqcorpus.PERSPECTIVES order
CH_COLUMNS = (0, 1, 4, 5)
TM_COLUMNS = (2, 3, 6, 7)


@dataclass(frozen=True)
class HistoryConstraint:
    tm_min: int
    ch_min: int

    def __post_init__(self):
        if self.tm_min not in HISTORY_LEVELS or self.ch_min not in HISTORY_LEVELS:
            raise ValueError(f"history minimums must be in {HISTORY_LEVELS}")

    def __str__(self) -> str:
        return f"[{self.tm_min},{self.ch_min}]"


ALL_CONSTRAINTS = tuple(HistoryConstraint(tm, ch) for tm, ch in itertools.product(HISTORY_LEVELS, repeat=2))


@dataclass
class HistoryBank:
    """Rows of one period with everything the specialised forests need.

    ``hmm[w]`` is an (n, 8) array of HMM features for window w, NaN where
    missing.
    """

    base: np.ndarray
    hmm: dict
    ch_history: np.ndarray
    tm_history: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.base.shape[0]

    def mask(self, c: HistoryConstraint) -> np.ndarray:
        return (self.tm_history >= c.tm_min) & (self.ch_history >= c.ch_min)

    def matrix(self, c: HistoryConstraint, rows: np.ndarray | None = None) -> np.ndarray:
        rows = np.flatnonzero(self.mask(c)) if rows is None else rows
        blocks = [self.base[rows]]
        if c.tm_min:
            blocks.append(self.hmm[c.tm_min][np.ix_(rows, TM_COLUMNS)])
        if c.ch_min:
            blocks.append(self.hmm[c.ch_min][np.ix_(rows, CH_COLUMNS)])
        X = np.hstack(blocks)
        if not np.all(np.isfinite(X)):
            raise ValueError(f"constraint {c} selects rows with missing HMM features")
        return X


def fit_specialists(train: HistoryBank, validation: HistoryBank, rf: RfParams, constraints=ALL_CONSTRAINTS):
    """One forest per constraint with a two-class training subset, and its validation PR-AUC."""
    forests, weights = {}, {}
    for c in constraints:
        m = train.mask(c)
        y = train.labels[m]
        if y.size == 0 or y.min() == y.max():
            if c == HistoryConstraint(0, 0):
                raise ValueError("the unconstrained [0,0] training subset has a single class")
            warnings.warn(f"dropping constraint {c}: training subset has a single class", RuntimeWarning)
            continue
        X = train.matrix(c)
        p = replace(rf, n_features_per_split=min(rf.n_features_per_split, X.shape[1]))
        forests[c] = train_random_forest(X, y, p)
        vm = validation.mask(c)
        yv = validation.labels[vm]
        if yv.sum() == 0:
            weights[c] = 0.0
        else:
            weights[c] = pr_auc(yv, forests[c].predict_proba(validation.matrix(c)))
    return forests, weights


def specialist_predictions(forests: dict, bank: HistoryBank, constraints) -> np.ndarray:
    """(n, len(constraints)) matrix of predictions, NaN where a constraint is not met."""
    out = np.full((len(bank), len(constraints)), np.nan)
    for j, c in enumerate(constraints):
        if c not in forests:
            continue
        rows = np.flatnonzero(bank.mask(c))
        if rows.size:
            out[rows, j] = forests[c].predict_proba(bank.matrix(c, rows))
    return out


@dataclass
class WeightedPrEnsemble:
    constraints: tuple
    forests: dict
    weights: dict

    def predict_proba(self, bank: HistoryBank) -> np.ndarray:
        preds = specialist_predictions(self.forests, bank, self.constraints)
        w = np.array([self.weights.get(c, 0.0) for c in self.constraints])
        avail = np.isfinite(preds)
        wm = np.where(avail, w[None, :], 0.0)
        num = np.where(avail, preds, 0.0) @ w
        den = wm.sum(axis=1)
        out = np.empty(len(bank))
        ok = den > 0
        out[ok] = num[ok] / den[ok]
        # no positively weighted specialist applies: fall back to [0,0]
        j00 = self.constraints.index(HistoryConstraint(0, 0))
        out[~ok] = preds[~ok, j00]
        return out


def weighted_pr_ensemble(train: HistoryBank, validation: HistoryBank, rf: RfParams,
                         constraints=ALL_CONSTRAINTS, specialists=None) -> WeightedPrEnsemble:
    """Each specialist is weighted by its validation PR-AUC on the rows it applies to.

    ``specialists`` reuses the output of :func:`fit_specialists`.
    """
    constraints = tuple(constraints)
    forests, weights = specialists or fit_specialists(train, validation, rf, constraints)
    return WeightedPrEnsemble(constraints, forests, weights)


@dataclass
class StackedForest:
    constraints: tuple
    forests: dict
    meta: object

    def meta_features(self, bank: HistoryBank) -> np.ndarray:
        # 0 stands for "constraint not satisfied"
        return np.nan_to_num(specialist_predictions(self.forests, bank, self.constraints), nan=0.0)

    def predict_proba(self, bank: HistoryBank) -> np.ndarray:
        return self.meta.predict_proba(self.meta_features(bank))


def stacked_rf(train: HistoryBank, validation: HistoryBank, rf: RfParams, meta_rf: RfParams | None = None,
               constraints=ALL_CONSTRAINTS, specialists=None) -> StackedForest:
    """Specialists fit on the training period; the meta forest on validation-period predictions."""
    constraints = tuple(constraints)
    forests, _ = specialists or fit_specialists(train, validation, rf, constraints)
    model = StackedForest(constraints, forests, None)
    Z = model.meta_features(validation)
    meta_rf = meta_rf or rf
    meta_rf = replace(meta_rf, n_features_per_split=min(meta_rf.n_features_per_split, Z.shape[1]))
    model.meta = train_random_forest(Z, validation.labels, meta_rf)
    return model

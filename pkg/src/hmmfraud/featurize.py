"""Per-transaction features: HMM log-likelihoods, 24h aggregates, raw columns.

Every feature of the transaction in row i of a (timestamp, tx_id)-sorted
frame depends only on rows 0..i, so one frame covering train, validation,
gap and test periods can be featurised in a single pass without lookahead.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numba import njit

from .ghmm import GaussianHmm, score_windows
from .seqcorpus import PERSPECTIVES, TRANSFORM_TAG, Actor, HistoryIndex

log = logging.getLogger(__name__)

WINDOW_S = 86400
RAW_COLUMNS = ["amount", "hour", "day_of_week", "country", "mcc", "channel"]
CATEGORICAL = ["country", "mcc", "channel"]
AGG_CH_COLUMNS = ["aggch1", "aggch2", "aggch3", "aggch4"]
AGG_TM_COLUMNS = ["aggtm1", "aggtm2", "aggtm3", "aggtm4"]
AGG_COLUMNS = AGG_CH_COLUMNS + AGG_TM_COLUMNS
HMM_COLUMNS = [f"hmm{i}" for i in range(1, 9)]

FEATURE_SETS = {
    "raw": RAW_COLUMNS,
    "raw+aggCH": RAW_COLUMNS + AGG_CH_COLUMNS,
    "raw+allagg": RAW_COLUMNS + AGG_COLUMNS,
    "raw+HMM": RAW_COLUMNS + HMM_COLUMNS,
    "raw+aggCH+HMM": RAW_COLUMNS + AGG_CH_COLUMNS + HMM_COLUMNS,
    "raw+allagg+HMM": RAW_COLUMNS + AGG_COLUMNS + HMM_COLUMNS,
}
MISSING_STRATEGIES = ("default0", "exclude")
# AGGTM3/4 filter on "card type"; the synthetic data has none, the channel stands in
CARD_TYPE_COLUMN = "channel"


class FeatureError(ValueError):
    pass


# ---------------------------------------------------------------- HMM features

@dataclass
class HmmFeatureSet:
    """hmm1..hmm8 with presence flags; missing entries hold NaN."""

    values: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.present = np.asarray(self.present, dtype=bool)
        if not np.array_equal(self.present, np.isfinite(self.values)):
            raise FeatureError("presence flags disagree with the values")


def _check_models(models) -> list[GaussianHmm]:
    if isinstance(models, dict):
        models = [models[p] for p in PERSPECTIVES]
    models = list(models)
    if len(models) != 8:
        raise FeatureError(f"expected 8 models, got {len(models)}")
    for p, m in zip(PERSPECTIVES, models):
        if m.transform_tag != TRANSFORM_TAG:
            raise FeatureError(f"model {p.name} uses transform {m.transform_tag!r}, index uses {TRANSFORM_TAG!r}")
    return models


def compute_hmm_features(index: HistoryIndex, models, w: int, rows=None) -> np.ndarray:
    """(n, 8) log-likelihoods of each row's trailing windows; NaN when the actor has < w transactions."""
    models = _check_models(models)
    rows = np.arange(index.n) if rows is None else np.asarray(rows, dtype=np.int64)
    pos = np.empty(index.n, dtype=np.int64)
    pos[rows] = np.arange(rows.size)
    out = np.full((rows.size, 8), np.nan)
    cache = {}
    for j, (p, m) in enumerate(zip(PERSPECTIVES, models)):
        key = (p.actor, p.signal)
        if key not in cache:
            cache[key] = index.windows(p.actor, p.signal, w, rows)
        ok, mat = cache[key]
        out[pos[ok], j] = score_windows(m, mat)
    return out


def hmm_features_at(index: HistoryIndex, models, w: int, card_id: str, terminal_id: str, t: int) -> HmmFeatureSet:
    """Single-transaction lookup: windows ending at each actor's last transaction at or before t."""
    models = _check_models(models)
    vals = np.full(8, np.nan)
    ids = {Actor.CARD_HOLDER: card_id, Actor.TERMINAL: terminal_id}
    for j, (p, m) in enumerate(zip(PERSPECTIVES, models)):
        win = index.trailing_window(ids[p.actor], t, w, p.actor, p.signal)
        if win is not None:
            vals[j] = score_windows(m, win[None, :])[0]
    return HmmFeatureSet(vals, np.isfinite(vals))


def apply_default0(fs) -> np.ndarray:
    """Missing entries become exactly 0.0."""
    v = fs.values if isinstance(fs, HmmFeatureSet) else np.asarray(fs, dtype=np.float64)
    return np.where(np.isfinite(v), v, 0.0)


# ---------------------------------------------------------------- aggregates

@njit(cache=True)
def _window_count_sum(group_start, order, ts, amount, out_count, out_sum):
    """Count and sum over (t - 24h, t] inside each group; rows of a group are time-ordered."""
    n_groups = group_start.size - 1
    for g in range(n_groups):
        lo = group_start[g]
        hi = group_start[g + 1]
        left = lo
        for k in range(lo, hi):
            i = order[k]
            t = ts[i]
            while ts[order[left]] <= t - 86400:
                left += 1
            s = 0.0
            for q in range(left, k + 1):
                s += amount[order[q]]
            out_count[i] = k - left + 1
            out_sum[i] = s


def _grouped(keys: list[np.ndarray], ts, amount):
    codes = np.zeros(ts.size, dtype=np.int64)
    for k in keys:
        c, u = pd.factorize(k)
        codes = codes * (len(u) + 1) + c
    order = np.argsort(codes, kind="stable")
    sc = codes[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sc)) + 1, sc.size].astype(np.int64)
    cnt = np.zeros(ts.size, dtype=np.int64)
    tot = np.zeros(ts.size, dtype=np.float64)
    _window_count_sum(starts, order.astype(np.int64), ts, amount, cnt, tot)
    return cnt, tot


def compute_aggregates(df: pd.DataFrame) -> np.ndarray:
    """(n, 8) matrix of aggch1..4, aggtm1..4 over a (timestamp, tx_id)-sorted frame.

    Each window holds the actor's rows up to and including the current row
    whose timestamp lies in (t - 86400, t]; sums run in row order.
    """
    ts = df["timestamp"].to_numpy(dtype=np.int64)
    if ts.size and np.any(np.diff(ts) < 0):
        raise FeatureError("frame must be sorted by timestamp")
    amt = df["amount"].to_numpy(dtype=np.float64)
    card = df["card_id"].to_numpy()
    term = df["terminal_id"].to_numpy()
    out = np.empty((ts.size, 8))
    if ts.size == 0:
        return out
    specs = [[card], [card, df["country"].to_numpy()], [term], [term, df[CARD_TYPE_COLUMN].to_numpy()]]
    for j, keys in enumerate(specs):
        cnt, tot = _grouped(keys, ts, amt)
        out[:, 2 * j] = cnt
        out[:, 2 * j + 1] = tot
    return out


# ---------------------------------------------------------------- raw block and assembly

@dataclass
class LabelEncoder:
    """Codes 1, 2, ... in order of first appearance; unseen values map to 0."""

    tables: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, df: pd.DataFrame, columns=CATEGORICAL) -> "LabelEncoder":
        tables = {}
        for c in columns:
            uniq = pd.unique(df[c].astype(str))
            tables[c] = {str(v): i + 1 for i, v in enumerate(uniq)}
        return cls(tables)

    def transform(self, df: pd.DataFrame, column: str) -> np.ndarray:
        table = self.tables[column]
        return df[column].astype(str).map(table).fillna(0).to_numpy(dtype=np.float64)

    def to_dict(self) -> dict:
        return {c: dict(t) for c, t in self.tables.items()}


def raw_block(df: pd.DataFrame, encoder: LabelEncoder) -> np.ndarray:
    ts = pd.to_datetime(df["timestamp"].to_numpy(), unit="s", utc=True)
    cols = [df["amount"].to_numpy(dtype=np.float64),
            ts.hour.to_numpy().astype(np.float64),
            ts.dayofweek.to_numpy().astype(np.float64)]
    cols += [encoder.transform(df, c) for c in CATEGORICAL]
    return np.column_stack(cols)


@dataclass
class FeatureMatrix:
    name: str
    columns: list
    X: np.ndarray
    y: np.ndarray
    rows: np.ndarray  # positions into the source frame

    def __len__(self) -> int:
        return self.y.size


def history_complete(hmm: np.ndarray) -> np.ndarray:
    """Rows whose eight HMM features are all present."""
    return np.isfinite(hmm).all(axis=1)


def assemble(feature_set: str, raw: np.ndarray, labels, agg: np.ndarray | None = None,
             hmm: np.ndarray | None = None, missing: str = "default0", rows=None) -> FeatureMatrix:
    """Select the blocks of ``feature_set`` for ``rows`` and resolve missing HMM values.

    ``exclude`` keeps only rows with all eight HMM features present, whatever
    the feature set, so that every set is scored on the same transactions.
    """
    if feature_set not in FEATURE_SETS:
        raise FeatureError(f"unknown feature set {feature_set!r}; choose from {sorted(FEATURE_SETS)}")
    if missing not in MISSING_STRATEGIES:
        raise FeatureError(f"unknown missing-value strategy {missing!r}")
    labels = np.asarray(labels)
    rows = np.arange(labels.size) if rows is None else np.asarray(rows, dtype=np.int64)
    cols = FEATURE_SETS[feature_set]
    if missing == "exclude":
        if hmm is None:
            raise FeatureError("the exclude strategy needs the HMM features to find complete rows")
        rows = rows[history_complete(hmm[rows])]
    blocks = [raw[rows]]
    if "aggch1" in cols:
        blocks.append(agg[rows][:, :4])
    if "aggtm1" in cols:
        blocks.append(agg[rows][:, 4:])
    if "hmm1" in cols:
        blocks.append(apply_default0(hmm[rows]))
    X = np.hstack(blocks)
    return FeatureMatrix(feature_set, list(cols), X, labels[rows].astype(np.int8), rows)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_features(path, fm: FeatureMatrix, tx_ids, metadata: dict) -> None:
    """CSV with tx_id, every feature column and the label; metadata goes to ``<path>.meta.json``."""
    path = Path(path)
    out = pd.DataFrame(fm.X, columns=fm.columns)
    out.insert(0, "tx_id", np.asarray(tx_ids)[fm.rows])
    out["label"] = fm.y.astype(int)
    out.to_csv(path, index=False, lineterminator="\n")
    meta = {"feature_set": fm.name, "columns": fm.columns, "n_rows": len(fm), "card_type_column": CARD_TYPE_COLUMN,
            **metadata}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def read_features(path) -> tuple[list, np.ndarray, np.ndarray, list]:
    df = pd.read_csv(path, dtype={"tx_id": str}, float_precision="round_trip")
    cols = [c for c in df.columns if c not in ("tx_id", "label")]
    return df["tx_id"].tolist(), df[cols].to_numpy(dtype=np.float64), df["label"].to_numpy(dtype=np.int8), cols

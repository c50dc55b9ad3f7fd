"""Transaction records, CSV ingestion and the temporal train/validation/gap/test split.

A dataset is held as a pandas DataFrame with the canonical columns below,
sorted by (timestamp, tx_id). :class:`Transaction` is the row-level view.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass
from datetime import date, datetime, timezone
from typing import Iterable, Iterator

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

COLUMNS = ["tx_id", "card_id", "terminal_id", "timestamp", "amount",
           "country", "mcc", "channel", "label"]
CHANNELS = ("EC", "F2F")
DAY = 86400

_STR_COLUMNS = ["tx_id", "card_id", "terminal_id", "country", "mcc", "channel"]


class SchemaError(ValueError):
    pass


class RowError(ValueError):
    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = problems
        head = "; ".join(f"line {ln}: {msg}" for ln, msg in problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        super().__init__(f"{len(problems)} malformed row(s): {head}{more}")


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    card_id: str
    terminal_id: str
    timestamp: int
    amount: float
    country: str
    mcc: str
    channel: str
    label: int  # 1 = fraud

    @property
    def is_fraud(self) -> bool:
        return self.label == 1


def to_frame(txs: Iterable[Transaction]) -> pd.DataFrame:
    df = pd.DataFrame([asdict(t) for t in txs], columns=COLUMNS)
    return _canonical(df)


def iter_transactions(df: pd.DataFrame) -> Iterator[Transaction]:
    for row in df[COLUMNS].itertuples(index=False):
        yield Transaction(row.tx_id, row.card_id, row.terminal_id, int(row.timestamp),
                          float(row.amount), row.country, row.mcc, row.channel, int(row.label))


def _canonical(df: pd.DataFrame) -> pd.DataFrame:
    df = df[COLUMNS].astype({"timestamp": np.int64, "amount": np.float64, "label": np.int8})
    for c in _STR_COLUMNS:
        df[c] = df[c].astype(str)
    df = df.sort_values(["timestamp", "tx_id"], kind="mergesort").reset_index(drop=True)
    return df


def validate(df: pd.DataFrame) -> None:
    """Check dataset invariants on an already-typed frame."""
    if not np.all(df["amount"].to_numpy() > 0):
        raise RowError([(int(i) + 2, "amount must be > 0") for i in np.flatnonzero(~(df["amount"] > 0))])
    if df["tx_id"].duplicated().any():
        dup = df.loc[df["tx_id"].duplicated(), "tx_id"].iloc[0]
        raise SchemaError(f"duplicate tx_id {dup!r}")
    for c in ("card_id", "terminal_id"):
        if (df[c].str.len() == 0).any():
            raise SchemaError(f"empty {c}")


def load_transactions(path) -> pd.DataFrame:
    """Read the transaction CSV; rows come back sorted by (timestamp, tx_id).

    Malformed rows raise :class:`RowError` listing every bad line number
    (the header is line 1).
    """
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in COLUMNS if c not in raw.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")
    problems: list[tuple[int, str]] = []
    line = np.arange(len(raw)) + 2

    ts = pd.to_numeric(raw["timestamp"], errors="coerce")
    bad = ts.isna() | (ts != np.floor(ts))
    problems += [(int(line[i]), f"unparseable timestamp {raw['timestamp'].iat[i]!r}") for i in np.flatnonzero(bad)]

    amount = pd.to_numeric(raw["amount"], errors="coerce")
    bad = amount.isna() | ~np.isfinite(amount)
    problems += [(int(line[i]), f"unparseable amount {raw['amount'].iat[i]!r}") for i in np.flatnonzero(bad)]
    bad = ~bad & (amount <= 0)
    problems += [(int(line[i]), f"non-positive amount {raw['amount'].iat[i]}") for i in np.flatnonzero(bad)]

    bad = ~raw["label"].isin(["0", "1"])
    problems += [(int(line[i]), f"label must be 0 or 1, got {raw['label'].iat[i]!r}") for i in np.flatnonzero(bad)]
    bad = ~raw["channel"].isin(CHANNELS)
    problems += [(int(line[i]), f"channel must be EC or F2F, got {raw['channel'].iat[i]!r}") for i in np.flatnonzero(bad)]
    for c in ("tx_id", "card_id", "terminal_id"):
        bad = raw[c].str.len() == 0
        problems += [(int(line[i]), f"empty {c}") for i in np.flatnonzero(bad)]
    if problems:
        raise RowError(sorted(problems))

    raw["timestamp"] = ts.astype(np.int64)
    raw["amount"] = amount
    raw["label"] = raw["label"].astype(np.int8)
    df = _canonical(raw)
    validate(df)
    return df


def save_transactions(df: pd.DataFrame, path) -> None:
    out = df[COLUMNS].copy()
    # repr-precision floats keep load(save(x)) == x
    out["amount"] = [repr(float(a)) for a in out["amount"].to_numpy()]
    out.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def day_start(d: date | str) -> int:
    if isinstance(d, str):
        d = date.fromisoformat(d)
    return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


def day_end(d: date | str) -> int:
    """Last second of the given UTC day, for date-inclusive closed ranges."""
    return day_start(d) + DAY - 1


SUBSETS = ("train", "validation", "gap", "test")


@dataclass(frozen=True)
class DatasetSplit:
    """Closed timestamp ranges; the gap is everything strictly between
    validation end and test start."""

    train_range: tuple[int, int]
    validation_range: tuple[int, int]
    test_range: tuple[int, int]
    gap_days: int = 7

    def __post_init__(self):
        (a, b), (c, d), (e, f) = self.train_range, self.validation_range, self.test_range
        if not (a <= b < c <= d < e <= f):
            raise ValueError("ranges must be ordered train < validation < test and non-empty")
        if e - d < self.gap_days * DAY:
            raise ValueError(f"test starts {(e - d) / DAY:.2f} days after validation; "
                             f"at least {self.gap_days} required")

    @property
    def train_end(self) -> int:
        return self.train_range[1]

    @property
    def gap_range(self) -> tuple[int, int]:
        return self.validation_range[1] + 1, self.test_range[0] - 1

    @classmethod
    def from_dates(cls, train: tuple[str, str], validation: tuple[str, str],
                   test: tuple[str, str], gap_days: int = 7) -> "DatasetSplit":
        return cls((day_start(train[0]), day_end(train[1])),
                   (day_start(validation[0]), day_end(validation[1])),
                   (day_start(test[0]), day_end(test[1])), gap_days)

    def to_dict(self) -> dict:
        return {"train_range": list(self.train_range), "validation_range": list(self.validation_range),
                "test_range": list(self.test_range), "gap_days": self.gap_days}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSplit":
        return cls(tuple(d["train_range"]), tuple(d["validation_range"]),
                   tuple(d["test_range"]), int(d["gap_days"]))


DEFAULT_SPLIT = DatasetSplit.from_dates(("2015-03-01", "2015-04-26"), ("2015-04-27", "2015-04-30"),
                                        ("2015-05-08", "2015-05-31"))


def assign_subsets(timestamps: np.ndarray, split: DatasetSplit) -> np.ndarray:
    """Subset name per timestamp ("" for transactions outside every range)."""
    ts = np.asarray(timestamps)
    out = np.full(ts.shape, "", dtype=object)
    bounds = {"train": split.train_range, "validation": split.validation_range,
              "gap": split.gap_range, "test": split.test_range}
    for name in SUBSETS:
        lo, hi = bounds[name]
        out[(ts >= lo) & (ts <= hi)] = name
    return out


def partition(df: pd.DataFrame, split: DatasetSplit) -> dict[str, pd.DataFrame]:
    """Split by timestamp; rows outside all ranges are dropped and counted.

    Gap rows are returned for feature history only and must not be used to
    fit classifiers.
    """
    subset = assign_subsets(df["timestamp"].to_numpy(), split)
    dropped = int((subset == "").sum())
    if dropped:
        log.info("dropped %d transaction(s) outside the split ranges", dropped)
    parts = {name: df[subset == name].reset_index(drop=True) for name in SUBSETS}
    for name, part in parts.items():
        if len(part) == 0:
            warnings.warn(f"{name} subset is empty", RuntimeWarning)
    return parts

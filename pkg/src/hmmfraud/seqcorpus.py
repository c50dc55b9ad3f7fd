"""Perspective corpora for HMM training and trailing-window lookup for scoring.

A perspective is one of the eight (status, actor, signal) combinations.
Observations are transformed with ln(1 + x): amounts in currency units,
time-deltas in seconds.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

TRANSFORM_TAG = "log1p"


class Status(str, Enum):
    GENUINE = "genuine"
    COMPROMISED = "compromised"


class Actor(str, Enum):
    CARD_HOLDER = "card_holder"
    TERMINAL = "terminal"


class Signal(str, Enum):
    AMOUNT = "amount"
    TIME_DELTA = "time_delta"


ACTOR_COLUMN = {Actor.CARD_HOLDER: "card_id", Actor.TERMINAL: "terminal_id"}
_SHORT = {Actor.CARD_HOLDER: "CH", Actor.TERMINAL: "TM", Signal.AMOUNT: "amount",
          Signal.TIME_DELTA: "tdelta", Status.GENUINE: "genuine", Status.COMPROMISED: "fraud"}


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Perspective:
    status: Status
    actor: Actor
    signal: Signal

    @property
    def name(self) -> str:
        return f"{_SHORT[self.actor]}-{_SHORT[self.signal]}-{_SHORT[self.status]}"

    @classmethod
    def from_name(cls, name: str) -> "Perspective":
        for p in PERSPECTIVES:
            if p.name == name:
                return p
        raise KeyError(name)


# feature order hmm1..hmm8
PERSPECTIVES = tuple(
    Perspective(status, actor, signal)
    for status in (Status.GENUINE, Status.COMPROMISED)
    for actor in (Actor.CARD_HOLDER, Actor.TERMINAL)
    for signal in (Signal.AMOUNT, Signal.TIME_DELTA)
)


def transform(x) -> np.ndarray:
    return np.log1p(np.asarray(x, dtype=np.float64))


@dataclass
class ActorSequence:
    actor_id: str
    timestamps: np.ndarray
    amounts: np.ndarray
    labels: np.ndarray

    @property
    def status(self) -> Status:
        return Status.COMPROMISED if self.labels.any() else Status.GENUINE

    def __len__(self) -> int:
        return self.timestamps.size


def group_by_actor(df: pd.DataFrame, actor: Actor) -> list[ActorSequence]:
    """One time-ordered sequence per actor id; ``df`` must be sorted by (timestamp, tx_id)."""
    codes, uniques = pd.factorize(df[ACTOR_COLUMN[Actor(actor)]], sort=True)
    order = np.argsort(codes, kind="stable")
    cuts = np.flatnonzero(np.diff(codes[order])) + 1
    ts = df["timestamp"].to_numpy()[order]
    amt = df["amount"].to_numpy()[order]
    lab = df["label"].to_numpy()[order].astype(bool)
    groups = np.split(np.arange(order.size), cuts)
    return [ActorSequence(str(uniques[codes[order[g[0]]]]), ts[g], amt[g], lab[g])
            for g in groups if g.size]


def extract_signal(seq: ActorSequence, signal: Signal) -> np.ndarray:
    if Signal(signal) is Signal.AMOUNT:
        return transform(seq.amounts)
    return transform(np.diff(seq.timestamps))


@dataclass
class PerspectiveCorpus:
    perspective: Perspective
    sequences: list

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_observations(self) -> int:
        return sum(s.size for s in self.sequences)

    def save_text(self, path) -> None:
        lines = [" ".join(repr(float(v)) for v in s) for s in self.sequences]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load_text(cls, perspective: Perspective, path) -> "PerspectiveCorpus":
        text = Path(path).read_text().splitlines()
        return cls(perspective, [np.array([float(v) for v in line.split()]) for line in text if line.strip()])


def build_corpora(card_sequences: Sequence[ActorSequence], terminal_sequences: Sequence[ActorSequence],
                  window: int, allow_empty: bool = False) -> dict[Perspective, PerspectiveCorpus]:
    """Whole-sequence training corpora for the eight perspectives.

    An actor contributes when it has at least ``window`` transactions, i.e.
    when a scoring window could be formed for it. Signal vectors shorter
    than 2 (time-deltas with window 2) carry no transition and are skipped.
    """
    if window < 2:
        raise CorpusError("window must be >= 2")
    by_actor = {Actor.CARD_HOLDER: card_sequences, Actor.TERMINAL: terminal_sequences}
    out = {}
    for p in PERSPECTIVES:
        seqs = []
        for s in by_actor[p.actor]:
            if len(s) >= window and s.status is p.status:
                v = extract_signal(s, p.signal)
                if v.size >= 2:
                    seqs.append(v)
        if not seqs and not allow_empty:
            raise CorpusError(f"corpus {p.name} is empty; the HMM cannot be trained")
        out[p] = PerspectiveCorpus(p, seqs)
    return out


class HistoryIndex:
    """Per-actor transaction history over a frozen, (timestamp, tx_id)-sorted frame.

    Row ``i`` of the frame is "the transaction at t"; its history is every
    transaction of the same actor at or before row ``i`` in that order.
    """

    def __init__(self, df: pd.DataFrame):
        self.n = len(df)
        self._ts = df["timestamp"].to_numpy()
        self._amt = df["amount"].to_numpy()
        self._actors = {}
        self._sizes = {}
        for actor in Actor:
            codes, uniques = pd.factorize(df[ACTOR_COLUMN[actor]])
            order = np.argsort(codes, kind="stable")
            sorted_codes = codes[order]
            starts = np.r_[0, np.flatnonzero(np.diff(sorted_codes)) + 1]
            first = np.empty(len(uniques), dtype=np.int64)
            first[sorted_codes[starts]] = starts
            pos = np.empty(self.n, dtype=np.int64)
            pos[order] = np.arange(self.n)
            count = pos - first[codes] + 1
            lookup = {str(u): i for i, u in enumerate(uniques)}
            self._actors[actor] = (codes, order, pos, count, first, lookup)
            self._sizes[actor] = np.bincount(codes, minlength=len(uniques))

    def history_count(self, actor: Actor) -> np.ndarray:
        """Number of the actor's transactions up to and including each row."""
        return self._actors[Actor(actor)][3]

    def windows(self, actor: Actor, signal: Signal, w: int, rows: np.ndarray | None = None):
        """Trailing windows for many rows at once.

        Returns ``(rows_with_window, matrix)`` where the matrix has w columns
        for amounts and w - 1 for time-deltas, oldest first.
        """
        codes, order, pos, count, _, _ = self._actors[Actor(actor)]
        rows = np.arange(self.n) if rows is None else np.asarray(rows, dtype=np.int64)
        ok = rows[count[rows] >= w]
        idx = order[pos[ok][:, None] + np.arange(-w + 1, 1)[None, :]]
        if Signal(signal) is Signal.AMOUNT:
            return ok, transform(self._amt[idx])
        return ok, transform(np.diff(self._ts[idx], axis=1))

    def trailing_window(self, actor_id: str, t: int, w: int, actor: Actor, signal: Signal):
        """Window ending at the actor's last transaction with timestamp <= t, or None if MISSING."""
        _, order, _, _, first, lookup = self._actors[Actor(actor)]
        code = lookup.get(str(actor_id))
        if code is None:
            return None
        seg = order[first[code]:first[code] + self._sizes[Actor(actor)][code]]
        k = int(np.searchsorted(self._ts[seg], t, side="right"))
        if k < w:
            return None
        idx = seg[k - w:k]
        if Signal(signal) is Signal.AMOUNT:
            return transform(self._amt[idx])
        return transform(np.diff(self._ts[idx]))

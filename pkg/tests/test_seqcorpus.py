import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmmfraud import txmodel
from hmmfraud.seqcorpus import (PERSPECTIVES, Actor, ActorSequence, CorpusError, HistoryIndex,
                                Perspective, PerspectiveCorpus, Signal, Status, build_corpora,
                                extract_signal, group_by_actor)
from hmmfraud.txmodel import Transaction


def tx(i, card, term, t, amount=10.0, label=0):
    return Transaction(f"t{i:05d}", card, term, t, amount, "BE", "5411", "EC", label)


def test_eight_perspectives_in_feature_order():
    assert len(set(PERSPECTIVES)) == 8
    assert [p.name for p in PERSPECTIVES] == [
        "CH-amount-genuine", "CH-tdelta-genuine", "TM-amount-genuine", "TM-tdelta-genuine",
        "CH-amount-fraud", "CH-tdelta-fraud", "TM-amount-fraud", "TM-tdelta-fraud"]
    assert Perspective.from_name("TM-tdelta-fraud") is PERSPECTIVES[7]


def test_compromised_status():
    df = txmodel.to_frame([tx(0, "c", "m", 0), tx(1, "c", "m", 1, label=1), tx(2, "c", "m", 2)])
    (seq,) = group_by_actor(df, Actor.CARD_HOLDER)
    assert seq.status is Status.COMPROMISED


def test_grouping_counts():
    df = txmodel.to_frame([tx(0, "c1", "m", 0), tx(1, "c2", "m", 5), tx(2, "c1", "m", 9)])
    cards = group_by_actor(df, Actor.CARD_HOLDER)
    assert [s.actor_id for s in cards] == ["c1", "c2"]
    np.testing.assert_array_equal(cards[0].timestamps, [0, 9])
    assert len(group_by_actor(df, Actor.TERMINAL)) == 1


def synthetic_frame(seed=0, n=400):
    rng = np.random.default_rng(seed)
    rows = [tx(i, f"c{rng.integers(30)}", f"m{rng.integers(12)}", int(rng.integers(0, 10 ** 6)),
               float(rng.uniform(1, 100)), int(rng.random() < 0.03)) for i in range(n)]
    return txmodel.to_frame(rows)


def test_compromised_card_count_matches_scan():
    df = synthetic_frame()
    fraud_cards = set()
    for row in txmodel.iter_transactions(df):
        if row.label:
            fraud_cards.add(row.card_id)
    got = [s for s in group_by_actor(df, Actor.CARD_HOLDER) if s.status is Status.COMPROMISED]
    assert len(got) == len(fraud_cards)


def test_extract_signal_examples():
    seq = ActorSequence("c", np.array([0, 3600, 7200]), np.array([10.0, 20.0, 5.0]), np.zeros(3, bool))
    np.testing.assert_allclose(extract_signal(seq, Signal.AMOUNT)[:2], [math.log(11), math.log(21)])
    np.testing.assert_allclose(extract_signal(seq, Signal.TIME_DELTA), [math.log(3601)] * 2)
    one = ActorSequence("c", np.array([5]), np.array([1.0]), np.zeros(1, bool))
    assert extract_signal(one, Signal.TIME_DELTA).size == 0


def test_build_corpora_all_genuine_fails():
    df = txmodel.to_frame([tx(i, "c", "m", i) for i in range(5)])
    with pytest.raises(CorpusError, match="CH-amount-fraud"):
        build_corpora(group_by_actor(df, Actor.CARD_HOLDER), group_by_actor(df, Actor.TERMINAL), 3)


def test_build_corpora_counting():
    rows = [tx(i, "good", f"m{i}", 10 * i) for i in range(3)]
    rows += [tx(10 + i, "bad", f"n{i}", 10 * i + 1, label=int(i == 1)) for i in range(3)]
    df = txmodel.to_frame(rows)
    corp = build_corpora(group_by_actor(df, Actor.CARD_HOLDER), group_by_actor(df, Actor.TERMINAL),
                         3, allow_empty=True)
    for p, c in corp.items():
        if p.actor is Actor.CARD_HOLDER:
            assert len(c) == 1
        else:
            assert len(c) == 0  # every terminal has a single transaction


def test_corpus_sizes_match_recount():
    df = synthetic_frame(1, 600)
    w = 5
    corp = build_corpora(group_by_actor(df, Actor.CARD_HOLDER), group_by_actor(df, Actor.TERMINAL), w)
    # brute-force recount straight from rows
    for actor, col in ((Actor.CARD_HOLDER, "card_id"), (Actor.TERMINAL, "terminal_id")):
        n, bad = defaultdict(int), defaultdict(bool)
        for row in txmodel.iter_transactions(df):
            key = getattr(row, col)
            n[key] += 1
            bad[key] |= bool(row.label)
        for status in Status:
            want = sum(1 for k in n if n[k] >= w and bad[k] == (status is Status.COMPROMISED))
            for signal in Signal:
                assert len(corp[Perspective(status, actor, signal)]) == want
    # union of genuine and compromised covers each eligible card exactly once
    eligible = sum(1 for s in group_by_actor(df, Actor.CARD_HOLDER) if len(s) >= w)
    assert (len(corp[Perspective(Status.GENUINE, Actor.CARD_HOLDER, Signal.AMOUNT)])
            + len(corp[Perspective(Status.COMPROMISED, Actor.CARD_HOLDER, Signal.AMOUNT)])) == eligible


def test_corpus_text_roundtrip(tmp_path):
    p = PERSPECTIVES[0]
    c = PerspectiveCorpus(p, [np.array([0.1, 2.0 / 3.0]), np.array([1e-17, 5.0, 6.5])])
    c.save_text(tmp_path / "c.txt")
    back = PerspectiveCorpus.load_text(p, tmp_path / "c.txt")
    for a, b in zip(back.sequences, c.sequences):
        np.testing.assert_array_equal(a, b)


def test_trailing_window_examples():
    h = 3600
    df = txmodel.to_frame([tx(0, "c", "m0", 0, 10.0), tx(1, "c", "m1", h, 20.0), tx(2, "c", "m2", 5 * h, 30.0)])
    idx = HistoryIndex(df)
    amt = idx.trailing_window("c", 5 * h, 3, Actor.CARD_HOLDER, Signal.AMOUNT)
    np.testing.assert_allclose(amt, np.log1p([10.0, 20.0, 30.0]))
    td = idx.trailing_window("c", 5 * h, 3, Actor.CARD_HOLDER, Signal.TIME_DELTA)
    np.testing.assert_allclose(td, [math.log(3601), math.log(14401)])
    assert idx.trailing_window("c", 0, 3, Actor.CARD_HOLDER, Signal.AMOUNT) is None
    assert idx.trailing_window("nobody", 5 * h, 1, Actor.CARD_HOLDER, Signal.AMOUNT) is None
    assert idx.trailing_window("m2", 5 * h, 2, Actor.TERMINAL, Signal.AMOUNT) is None


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 6), st.sampled_from(list(Signal)), st.sampled_from(list(Actor)))
def test_windows_are_suffixes_of_prefix_signal(seed, w, signal, actor):
    df = synthetic_frame(seed, 150)
    idx = HistoryIndex(df)
    rows, mat = idx.windows(actor, signal, w)
    col = "card_id" if actor is Actor.CARD_HOLDER else "terminal_id"
    ids = df[col].to_numpy()
    counts = idx.history_count(actor)
    assert set(rows) == set(np.flatnonzero(counts >= w))
    for r, vec in zip(rows, mat):
        prefix = df.iloc[: r + 1]
        prefix = prefix[prefix[col] == ids[r]]
        # no lookahead: the window is built only from rows up to r
        seq = ActorSequence(ids[r], prefix["timestamp"].to_numpy(), prefix["amount"].to_numpy(),
                            prefix["label"].to_numpy().astype(bool))
        k = w if signal is Signal.AMOUNT else w - 1
        np.testing.assert_allclose(vec, extract_signal(seq, signal)[-k:])
        assert counts[r] == len(prefix)

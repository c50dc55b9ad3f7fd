import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from hmmfraud import txmodel
from hmmfraud.txmodel import DAY, DatasetSplit, Transaction

HEADER = "tx_id,card_id,terminal_id,timestamp,amount,country,mcc,channel,label\n"


def write(tmp_path, rows, header=HEADER):
    p = tmp_path / "tx.csv"
    p.write_text(header + "".join(r + "\n" for r in rows))
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, ["t1,c1,m1,100,10.5,BE,5411,EC,0",
                         "t2,c1,m2,200,3,BE,5411,F2F,1",
                         "t3,c2,m1,300,7.25,FR,5812,EC,0"])
    df = txmodel.load_transactions(p)
    assert list(df["tx_id"]) == ["t1", "t2", "t3"]
    txs = list(txmodel.iter_transactions(df))
    assert txs[1] == Transaction("t2", "c1", "m2", 200, 3.0, "BE", "5411", "F2F", 1)
    assert txs[1].is_fraud


def test_negative_amount_names_line(tmp_path):
    p = write(tmp_path, ["t1,c1,m1,100,10.5,BE,5411,EC,0",
                         "t2,c1,m2,200,-5,BE,5411,F2F,1"])
    with pytest.raises(txmodel.RowError, match="line 3") as exc:
        txmodel.load_transactions(p)
    assert exc.value.problems == [(3, "non-positive amount -5")]


def test_bad_timestamp_and_missing_column(tmp_path):
    p = write(tmp_path, ["t1,c1,m1,yesterday,10.5,BE,5411,EC,0"])
    with pytest.raises(txmodel.RowError, match="line 2: unparseable timestamp"):
        txmodel.load_transactions(p)
    p = write(tmp_path, ["t1,c1,m1,1,BE,5411,EC,0"],
              header="tx_id,card_id,terminal_id,timestamp,country,mcc,channel,label\n")
    with pytest.raises(txmodel.SchemaError, match="amount"):
        txmodel.load_transactions(p)


def test_shuffled_rows_come_back_sorted(tmp_path):
    rng = np.random.default_rng(0)
    ts = rng.integers(0, 10 ** 6, 50)
    rows = [f"t{i:03d},c{i % 4},m{i % 3},{t},1.5,BE,1,EC,0" for i, t in enumerate(ts)]
    df = txmodel.load_transactions(write(tmp_path, rows))
    # sort oracle on the same rows
    want = sorted(zip(ts.tolist(), [f"t{i:03d}" for i in range(50)]))
    assert list(zip(df["timestamp"], df["tx_id"])) == want


def test_ties_broken_by_tx_id(tmp_path):
    df = txmodel.load_transactions(write(tmp_path, ["b,c,m,5,1,BE,1,EC,0", "a,c,m,5,1,BE,1,EC,0"]))
    assert list(df["tx_id"]) == ["a", "b"]


tx_rows = st.lists(
    st.tuples(st.integers(0, 10 ** 9), st.floats(1e-3, 1e7, allow_nan=False),
              st.sampled_from(["EC", "F2F"]), st.integers(0, 1),
              st.text("abc,\"é", min_size=1, max_size=4)),
    min_size=1, max_size=30)


@settings(max_examples=40, deadline=None)
@given(tx_rows)
def test_save_load_roundtrip(tmp_path_factory, rows):
    txs = [Transaction(f"tx{i}", f"card{cid}", "term", ts, amt, "BE", "5411", ch, lab)
           for i, (ts, amt, ch, lab, cid) in enumerate(rows)]
    df = txmodel.to_frame(txs)
    p = tmp_path_factory.mktemp("rt") / "a.csv"
    txmodel.save_transactions(df, p)
    back = txmodel.load_transactions(p)
    pd.testing.assert_frame_equal(back, df)


def test_default_split_dates():
    s = txmodel.DEFAULT_SPLIT
    assert s.train_range == (txmodel.day_start("2015-03-01"), txmodel.day_end("2015-04-26"))
    assert s.validation_range[0] == txmodel.day_start("2015-04-27")
    assert s.gap_range == (txmodel.day_start("2015-05-01"), txmodel.day_end("2015-05-07"))
    assert s.test_range == (txmodel.day_start("2015-05-08"), txmodel.day_end("2015-05-31"))


def test_split_rejects_short_gap():
    with pytest.raises(ValueError):
        DatasetSplit.from_dates(("2015-03-01", "2015-04-26"), ("2015-04-27", "2015-04-30"),
                                ("2015-05-06", "2015-05-31"))


def frame(timestamps):
    return txmodel.to_frame(Transaction(f"t{i}", "c", "m", int(t), 1.0, "BE", "1", "EC", 0)
                            for i, t in enumerate(timestamps))


def test_partition_one_per_range_and_boundary():
    s = txmodel.DEFAULT_SPLIT
    ts = [s.train_end, s.validation_range[0] + 5, s.gap_range[0] + DAY, s.test_range[1]]
    parts = txmodel.partition(frame(ts), s)
    assert {k: len(v) for k, v in parts.items()} == {"train": 1, "validation": 1, "gap": 1, "test": 1}
    assert parts["train"]["timestamp"].iat[0] == s.train_end


def test_partition_drops_out_of_range_and_warns_empty():
    s = txmodel.DEFAULT_SPLIT
    with pytest.warns(RuntimeWarning, match="empty"):
        parts = txmodel.partition(frame([s.train_range[0] - 1, s.train_range[0]]), s)
    assert len(parts["train"]) == 1 and sum(map(len, parts.values())) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10 ** 9), max_size=60))
def test_partition_exhaustive_and_disjoint(offsets):
    s = txmodel.DEFAULT_SPLIT
    lo, hi = s.train_range[0], s.test_range[1]
    ts = [lo + o % (hi - lo + 1) for o in offsets]
    df = frame(ts)
    if len(df) == 0:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        parts = txmodel.partition(df, s)
    ids = [set(p["tx_id"]) for p in parts.values()]
    assert sum(map(len, ids)) == len(df)
    assert set().union(*ids) == set(df["tx_id"])


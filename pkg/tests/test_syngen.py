import numpy as np
import pytest

from hmmfraud.seqcorpus import Actor, group_by_actor
from hmmfraud.syngen import (RISKY_COUNTRIES, RISKY_MCCS, ConfigError, EpisodeShape, GeneratorConfig, PRESETS,
                             ecommerce_preset, face_to_face_preset, generate)
from hmmfraud.txmodel import day_start, save_transactions


def small(**kw):
    return GeneratorConfig(**{"n_cards": 150, "n_terminals": 40, "days": 30, "fraud_rate": 20.0, **kw})


@pytest.fixture(scope="module")
def frame():
    return generate(small(seed=3))


def test_zero_fraud_rate_all_genuine():
    df = generate(small(fraud_rate=0.0))
    assert len(df) > 0
    assert df["label"].sum() == 0


def test_presets_match_published_prevalence():
    assert face_to_face_preset().fraud_rate == 0.2
    assert ecommerce_preset().fraud_rate == 3.7
    assert ecommerce_preset().channel_mix == 1.0
    assert face_to_face_preset().channel_mix == 0.0


def test_same_seed_gives_identical_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    save_transactions(generate(small(seed=9)), a)
    save_transactions(generate(small(seed=9)), b)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    save_transactions(generate(small(seed=10)), c)
    assert c.read_bytes() != a.read_bytes()


def test_sorted_positive_within_horizon(frame):
    cfg = small(seed=3)
    ts = frame["timestamp"].to_numpy()
    assert np.all(np.diff(ts) >= 0)
    t0 = day_start("2015-03-01")
    assert ts.min() >= t0 and ts.max() < t0 + cfg.days * 86400
    assert (frame["amount"] > 0).all()
    assert frame["tx_id"].is_unique


def test_every_fraud_in_an_episode(frame):
    """Frauds of a card come in runs of >= n_probe + 1 with the probe amounts first."""
    n_probe = small().episode.n_probe
    lo, hi = small().episode.probe_amount_range
    assert frame["label"].sum() > 0
    for seq in group_by_actor(frame, Actor.CARD_HOLDER):
        if not seq.labels.any():
            continue
        idx = np.flatnonzero(seq.labels)
        # split the fraud positions into episodes: gaps of more than a few hours separate them
        cuts = np.flatnonzero(np.diff(seq.timestamps[idx]) > 6 * 3600) + 1
        for ep in np.split(idx, cuts):
            assert ep.size >= n_probe + 1
            assert np.all((seq.amounts[ep[:n_probe]] >= lo - 0.005) & (seq.amounts[ep[:n_probe]] <= hi + 0.005))


def test_prevalence_within_twenty_percent_on_large_output():
    df = generate(GeneratorConfig(n_cards=12000, n_terminals=500, fraud_rate=3.7, seed=1))
    assert len(df) >= 100_000
    rate = 1000 * df["label"].mean()
    assert abs(rate - 3.7) <= 0.2 * 3.7


def test_frauds_concentrate_on_compromised_terminals(frame):
    per_term = frame.groupby("terminal_id")["label"].sum().sort_values(ascending=False)
    top = per_term.iloc[: max(1, int(0.05 * len(per_term)))].sum()
    assert top / per_term.sum() > 0.5


def test_fraud_deltas_much_shorter_than_genuine(frame):
    fr, gen = [], []
    for seq in group_by_actor(frame, Actor.CARD_HOLDER):
        d = np.diff(seq.timestamps)
        both = seq.labels[1:] & seq.labels[:-1]
        fr.append(d[both])
        gen.append(d[~seq.labels[1:] & ~seq.labels[:-1]])
    assert np.median(np.concatenate(fr)) < 3600 < np.median(np.concatenate(gen))


def test_compromised_terminals_lean_to_risky_merchants_abroad():
    df = generate(small(n_cards=600, fraud_rate=40.0, seed=2))
    risky = df["mcc"].isin(RISKY_MCCS) & df["country"].isin(RISKY_COUNTRIES)
    fraud = df["label"] == 1
    assert risky[fraud].mean() > 3 * risky[~fraud].mean()


def test_config_errors():
    with pytest.raises(ConfigError):
        GeneratorConfig(n_cards=0)
    with pytest.raises(ConfigError):
        GeneratorConfig(n_terminals=0)
    with pytest.raises(ConfigError):
        GeneratorConfig(fraud_rate=-1)
    with pytest.raises(ConfigError):
        EpisodeShape(n_probe=0)
    with pytest.raises(ConfigError):
        EpisodeShape(spend_sigma=-1.0)
    with pytest.raises(ConfigError):
        GeneratorConfig(risky_country_weight=0)


def test_generator_section_round_trip():
    cfg = GeneratorConfig.from_dict({"preset": "face_to_face", "seed": 4, "episode": {"n_probe": 3}})
    assert cfg.fraud_rate == 0.2 and cfg.seed == 4 and cfg.episode.n_probe == 3
    assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        GeneratorConfig.from_dict({"colour": "red"})
    assert set(PRESETS) == {"ecommerce", "face_to_face"}

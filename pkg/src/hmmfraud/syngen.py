"""Synthetic card-holder/terminal transaction streams with planted fraud episodes.

Genuine behaviour is per card: log-normal amounts with card-specific
(mu, sigma) and exponential inter-arrival times with a card-specific rate,
spent mostly at a handful of favourite terminals in the home country.
Fraud comes in episodes on one card: ``n_probe`` small test transactions
followed by one or more large spends, minutes apart, mostly at a small set
of compromised terminals that favour risky merchant categories and
cross-border locations.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from datetime import date

import numpy as np
import pandas as pd

from .txmodel import COLUMNS, _canonical, day_start

log = logging.getLogger(__name__)

COUNTRIES = ("BE", "NL", "FR", "DE", "LU", "GB", "ES", "US")
COUNTRY_WEIGHTS = (0.55, 0.12, 0.12, 0.08, 0.05, 0.04, 0.02, 0.02)
MCCS = ("5411", "5812", "5999", "4121", "5732", "5691", "7011", "4511", "5942", "5310")
# electronics, airlines, general merchandise: preferred by compromised terminals
RISKY_MCCS = ("5732", "4511", "5999")
# cross-border: countries where compromised terminals are more likely to sit
RISKY_COUNTRIES = ("US", "GB", "ES")


class ConfigError(ValueError):
    pass


@dataclass
class EpisodeShape:
    n_probe: int = 2
    probe_amount_range: tuple = (0.5, 5.0)
    # spend amount = card's median amount * multiplier * lognormal(0, spend_sigma)
    spend_amount_multiplier: float = 6.0
    spend_sigma: float = 0.3
    mean_spends: float = 2.0
    # inter-transaction delay inside an episode: exponential, seconds
    mean_delay_s: float = 600.0

    def __post_init__(self):
        self.probe_amount_range = tuple(float(x) for x in self.probe_amount_range)
        lo, hi = self.probe_amount_range
        if self.n_probe < 1:
            raise ConfigError("n_probe must be >= 1")
        if not 0 < lo <= hi:
            raise ConfigError("probe_amount_range must satisfy 0 < lo <= hi")
        if self.spend_amount_multiplier <= 0 or self.spend_sigma < 0 or self.mean_spends < 1 \
                or self.mean_delay_s <= 0:
            raise ConfigError("invalid episode shape")


@dataclass
class GeneratorConfig:
    n_cards: int = 2000
    n_terminals: int = 500
    days: int = 92
    fraud_rate: float = 3.7  # per 1000 transactions
    channel_mix: float = 1.0  # fraction e-commerce
    seed: int = 0
    start: str = "2015-03-01"
    episode: EpisodeShape = field(default_factory=EpisodeShape)
    # card behaviour hyper-priors
    tx_per_day_median: float = 0.1
    tx_per_day_spread: float = 1.5
    favourite_terminals: int = 5
    p_favourite: float = 0.8
    # genuine sessions: an arrival is followed by a few quick extra purchases
    session_prob: float = 0.15
    session_mean_extra: float = 1.5
    session_mean_delay_s: float = 900.0
    # cards issued and terminals opened during the horizon (uniform opening time)
    new_card_fraction: float = 0.8
    new_terminal_fraction: float = 0.3
    # fraud targeting
    compromised_terminal_fraction: float = 0.02
    compromised_share: float = 0.9
    # odds multiplier for a risky-MCC terminal being compromised
    risky_mcc_weight: float = 20.0
    risky_country_weight: float = 10.0

    def __post_init__(self):
        if isinstance(self.episode, dict):
            self.episode = EpisodeShape(**self.episode)
        if self.n_cards <= 0 or self.n_terminals <= 0 or self.days <= 0:
            raise ConfigError("n_cards, n_terminals and days must be > 0")
        if self.fraud_rate < 0 or self.fraud_rate >= 1000:
            raise ConfigError("fraud_rate must be in [0, 1000)")
        if not 0 <= self.channel_mix <= 1:
            raise ConfigError("channel_mix must be in [0, 1]")
        if not (0 <= self.new_card_fraction <= 1 and 0 <= self.new_terminal_fraction < 1):
            raise ConfigError("new_card_fraction must be in [0, 1] and new_terminal_fraction in [0, 1)")
        if not (0 <= self.compromised_terminal_fraction <= 1 and 0 <= self.compromised_share <= 1):
            raise ConfigError("compromised fractions must be in [0, 1]")
        if not 0 <= self.session_prob <= 1 or self.session_mean_extra < 1 or self.session_mean_delay_s <= 0:
            raise ConfigError("invalid session parameters")
        if self.risky_mcc_weight <= 0 or self.risky_country_weight <= 0:
            raise ConfigError("risky weights must be > 0")
        if self.tx_per_day_median <= 0 or self.favourite_terminals < 1:
            raise ConfigError("invalid card behaviour parameters")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["episode"]["probe_amount_range"] = list(self.episode.probe_amount_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        """Build from a ``[generator]`` config section; ``preset`` selects the base values."""
        d = dict(d)
        base = PRESETS[d.pop("preset")]().to_dict() if "preset" in d else {}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        episode = {**base.pop("episode", {}), **d.pop("episode", {})}
        return cls(**{**base, **d, "episode": episode})


def ecommerce_preset(**kw) -> GeneratorConfig:
    """About 210k e-commerce transactions, 3.7 frauds per 1000."""
    return GeneratorConfig(**{"n_cards": 9800, "n_terminals": 600, "fraud_rate": 3.7, "channel_mix": 1.0, **kw})


def face_to_face_preset(**kw) -> GeneratorConfig:
    """About 520k face-to-face transactions, 0.2 frauds per 1000."""
    return GeneratorConfig(**{"n_cards": 25000, "n_terminals": 1500, "fraud_rate": 0.2, "channel_mix": 0.0, **kw})


PRESETS = {"ecommerce": ecommerce_preset, "face_to_face": face_to_face_preset}


def _terminals(cfg: GeneratorConfig, rng):
    n = cfg.n_terminals
    country = rng.choice(len(COUNTRIES), size=n, p=COUNTRY_WEIGHTS)
    mcc = rng.integers(0, len(MCCS), size=n)
    popularity = rng.pareto(1.5, size=n) + 1.0
    horizon = cfg.days * 86400
    opens = np.where(rng.random(n) < cfg.new_terminal_fraction, rng.integers(0, horizon, n), 0)
    if not (opens == 0).any():
        opens[0] = 0
    return country, mcc, popularity, opens


def generate(cfg: GeneratorConfig) -> pd.DataFrame:
    """All transactions of the horizon as a canonical frame sorted by (timestamp, tx_id)."""
    rng = np.random.default_rng(cfg.seed)
    t0 = day_start(date.fromisoformat(cfg.start))
    horizon = cfg.days * 86400
    t_end = t0 + horizon - 1

    term_country, term_mcc, popularity, opens = _terminals(cfg, rng)
    pop_p = popularity / popularity.sum()
    always = np.flatnonzero(opens == 0)
    always_p = popularity[always] / popularity[always].sum()
    by_country = [np.flatnonzero(term_country == c) for c in range(len(COUNTRIES))]

    n_cards = cfg.n_cards
    mu = rng.normal(3.3, 0.7, n_cards)
    sigma = rng.uniform(0.25, 0.8, n_cards)
    rate = cfg.tx_per_day_median * np.exp(cfg.tx_per_day_spread * rng.standard_normal(n_cards)) / 86400.0
    home = rng.choice(len(COUNTRIES), size=n_cards, p=COUNTRY_WEIGHTS)
    issued = np.where(rng.random(n_cards) < cfg.new_card_fraction, rng.integers(0, horizon, n_cards), 0)

    cards, times, amounts, terms = [], [], [], []
    for c in range(n_cards):
        # arrival process: draw enough gaps to cover the horizon, then truncate
        n_guess = int(rate[c] * horizon * 1.5) + 20
        ts = issued[c] + np.cumsum(rng.exponential(1.0 / rate[c], n_guess))
        while ts[-1] < horizon:
            ts = np.r_[ts, ts[-1] + np.cumsum(rng.exponential(1.0 / rate[c], n_guess))]
        ts = ts[ts < horizon]
        extra = np.where(rng.random(ts.size) < cfg.session_prob,
                         1 + rng.poisson(cfg.session_mean_extra - 1, ts.size), 0)
        if extra.any():
            owner = np.repeat(np.arange(ts.size), extra)
            step = rng.exponential(cfg.session_mean_delay_s, owner.size)
            # cumulative delay within each session
            csum = np.cumsum(step)
            first = np.r_[0, np.cumsum(extra)[:-1]][extra > 0]
            base = np.repeat(csum[first] - step[first], extra[extra > 0])
            ts = np.sort(np.r_[ts, ts[owner] + csum - base])
            ts = ts[ts < horizon]
        ts = ts.astype(np.int64)
        k = ts.size
        local = by_country[home[c]]
        if local.size == 0:
            local = np.arange(cfg.n_terminals)
        lp = popularity[local] / popularity[local].sum()
        fav = rng.choice(local, size=min(cfg.favourite_terminals, local.size), replace=False, p=lp)
        use_fav = rng.random(k) < cfg.p_favourite
        tm = np.where(use_fav, fav[rng.integers(0, fav.size, k)], rng.choice(cfg.n_terminals, size=k, p=pop_p))
        closed = opens[tm] > ts
        if closed.any():
            tm[closed] = rng.choice(always, size=int(closed.sum()), p=always_p)
        cards.append(np.full(k, c))
        times.append(ts)
        amounts.append(np.exp(rng.normal(mu[c], sigma[c], k)))
        terms.append(tm)
    card = np.concatenate(cards)
    ts = np.concatenate(times)
    amount = np.concatenate(amounts)
    term = np.concatenate(terms)
    label = np.zeros(card.size, dtype=np.int8)

    n_genuine = card.size
    target = cfg.fraud_rate * n_genuine / (1000.0 - cfg.fraud_rate)
    ep = cfg.episode
    n_comp = min(always.size, max(1, int(round(cfg.compromised_terminal_fraction * cfg.n_terminals))))
    risky = np.isin(np.asarray(MCCS)[term_mcc], RISKY_MCCS)
    abroad = np.isin(np.asarray(COUNTRIES)[term_country], RISKY_COUNTRIES)
    comp_p = np.where(risky, cfg.risky_mcc_weight, 1.0) * np.where(abroad, cfg.risky_country_weight, 1.0)
    # skimmers are installed on terminals that exist from the start
    comp_p = comp_p[always]
    compromised = rng.choice(always, size=n_comp, replace=False, p=comp_p / comp_p.sum())
    f_card, f_ts, f_amount, f_term = [], [], [], []
    n_fraud = 0
    n_episodes = 0
    by_issue = np.argsort(issued, kind="stable")
    issued_sorted = issued[by_issue]
    while n_fraud < target - 0.5 * (ep.n_probe + ep.mean_spends):
        # episode time first, then a card already issued by then
        start = int(rng.integers(0, horizon))
        c = int(by_issue[rng.integers(np.searchsorted(issued_sorted, start, side="right"))])
        n_spend = 1 + int(rng.poisson(ep.mean_spends - 1))
        size = ep.n_probe + n_spend
        delays = np.maximum(1, rng.exponential(ep.mean_delay_s, size - 1)).astype(np.int64)
        ets = start + np.r_[0, np.cumsum(delays)]
        ets -= max(0, int(ets[-1]) - (horizon - 1))
        if ets[0] < issued[c]:
            continue
        probe = rng.uniform(*ep.probe_amount_range, ep.n_probe)
        spend = np.exp(mu[c]) * ep.spend_amount_multiplier * np.exp(rng.normal(0.0, ep.spend_sigma, n_spend))
        if rng.random() < cfg.compromised_share:
            pool = compromised
        else:
            pool = np.flatnonzero(opens <= ets[0])
        probe_tm = pool[rng.integers(pool.size)]
        etm = np.r_[np.full(ep.n_probe, probe_tm), pool[rng.integers(0, pool.size, n_spend)]]
        f_card.append(np.full(size, c))
        f_ts.append(ets)
        f_amount.append(np.r_[probe, spend])
        f_term.append(etm)
        n_fraud += size
        n_episodes += 1
    if f_card:
        card = np.r_[card, np.concatenate(f_card)]
        ts = np.r_[ts, np.concatenate(f_ts)]
        amount = np.r_[amount, np.concatenate(f_amount)]
        term = np.r_[term, np.concatenate(f_term)]
        label = np.r_[label, np.ones(n_fraud, dtype=np.int8)]
    log.info("generated %d genuine and %d fraud transactions (%d episodes)", n_genuine, n_fraud, n_episodes)

    n = card.size
    channel = np.where(rng.random(n) < cfg.channel_mix, "EC", "F2F")
    amount = np.maximum(np.round(amount, 2), 0.01)
    # stable order: time, then generation order
    order = np.lexsort((np.arange(n), ts))
    width = max(8, len(str(n)))
    df = pd.DataFrame({
        "tx_id": [f"T{i:0{width}d}" for i in range(n)],
        "card_id": np.char.add("C", np.char.zfill(card[order].astype(str), 6)),
        "terminal_id": np.char.add("M", np.char.zfill(term[order].astype(str), 5)),
        "timestamp": ts[order] + t0,
        "amount": amount[order],
        "country": np.asarray(COUNTRIES)[term_country[term[order]]],
        "mcc": np.asarray(MCCS)[term_mcc[term[order]]],
        "channel": channel[order],
        "label": label[order],
    }, columns=COLUMNS)
    assert df["timestamp"].max() <= t_end
    return _canonical(df)

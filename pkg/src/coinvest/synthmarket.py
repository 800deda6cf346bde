"""Planted investor-group market: known co-held pairs drive prices and volumes.

Each group runs buy or sell campaigns on its stocks. While a campaign is on,
every member gets the same signed return shock and a volume boost; campaigns
persist for several days, so recent joint moves carry information about the
next index move. Ground truth is the set of pairs co-held by some group.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import FEATURES, AlignedPanel, RawQuoteRecord
from .network import CoInvestNetwork


@dataclass(frozen=True)
class InvestorGroup:
    stocks: tuple[str, ...]
    activity: float = 0.3  # long-run fraction of days with a campaign running
    pressure: float = 0.02  # daily return shock while active
    volume_boost: float = 1.0  # relative volume increase while active

    def __post_init__(self):
        object.__setattr__(self, "stocks", tuple(self.stocks))


@dataclass(frozen=True)
class PlantedMarket:
    stocks: tuple[str, ...]
    groups: tuple[InvestorGroup, ...]
    noise: float = 0.01
    campaign_days: float = 5.0
    buy_share: float = 0.5
    base_prices: tuple[float, ...] = ()
    base_volume: float = 1e6
    volume_noise: float = 0.1
    index_weights: tuple[float, ...] = ()
    index_symbol: str = "INDEX"
    start: str = "2010-01-04"

    def __post_init__(self):
        object.__setattr__(self, "stocks", tuple(self.stocks))
        object.__setattr__(self, "groups", tuple(
            g if isinstance(g, InvestorGroup) else InvestorGroup(**g) for g in self.groups))
        object.__setattr__(self, "base_prices", tuple(self.base_prices))
        object.__setattr__(self, "index_weights", tuple(self.index_weights))

    def validate(self) -> None:
        n = len(self.stocks)
        if n < 2 or len(set(self.stocks)) != n:
            raise ValueError("need at least two distinct stocks")
        if self.index_symbol in self.stocks:
            raise ValueError("index symbol collides with a stock")
        for g in self.groups:
            if len(set(g.stocks)) < 2:
                raise ValueError("every group must hold at least two stocks")
            if set(g.stocks) - set(self.stocks):
                raise ValueError(f"group references unknown stocks {set(g.stocks) - set(self.stocks)}")
            if not 0.0 <= g.activity <= 1.0 or g.pressure < 0 or g.volume_boost < 0:
                raise ValueError("activity must be in [0, 1]; pressure and volume_boost non-negative")
        if self.noise < 0 or self.volume_noise < 0 or self.campaign_days < 1:
            raise ValueError("noise levels must be >= 0 and campaign_days >= 1")
        if self.base_prices and (len(self.base_prices) != n or min(self.base_prices) <= 0):
            raise ValueError("base_prices must be positive, one per stock")
        if self.index_weights and (len(self.index_weights) != n or min(self.index_weights) < 0):
            raise ValueError("index_weights must be non-negative, one per stock")

    @property
    def truth(self) -> set[tuple[str, str]]:
        order = {s: n for n, s in enumerate(self.stocks)}
        pairs = set()
        for g in self.groups:
            members = sorted(set(g.stocks), key=order.__getitem__)
            pairs.update((a, b) for n, a in enumerate(members) for b in members[n + 1:])
        return pairs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PlantedMarket":
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "PlantedMarket":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class MarketSample:
    panel: AlignedPanel  # raw (un-normalized) OHLCV
    index_close: np.ndarray
    truth: set[tuple[str, str]]
    pressure: np.ndarray = field(repr=False)  # (days, stocks) applied group shock
    index_ohlc: np.ndarray = field(repr=False)  # (4, days) open, close, low, high

    def records(self, index_symbol: str = "INDEX") -> list[RawQuoteRecord]:
        out = []
        v = self.panel.values
        for t, d in enumerate(self.panel.dates):
            for s, sym in enumerate(self.panel.symbols):
                out.append(RawQuoteRecord(d, sym, *(float(x) for x in v[s, :, t])))
            o, c, lo, hi = self.index_ohlc[:, t]
            out.append(RawQuoteRecord(d, index_symbol, float(o), float(c), float(lo), float(hi), 0.0))
        return out


def business_days(start: dt.date, n: int) -> list[dt.date]:
    days = np.busday_offset(np.datetime64(start), np.arange(n), roll="forward")
    return [d.astype(object) for d in days]


def _campaigns(rng: np.random.Generator, days: int, activity: float, mean_len: float,
               buy_share: float = 0.5) -> np.ndarray:
    """Signed campaign state per day: +1 buy, -1 sell, 0 idle.

    Two-state chain with stationary active fraction ``activity`` and mean
    run length ``mean_len``; each campaign picks its sign at random.
    """
    state = np.zeros(days)
    if activity <= 0:
        return state
    if activity >= 1:
        stop, start = 1.0 / mean_len, 1.0
    else:
        stop = 1.0 / mean_len
        start = min(1.0, activity * stop / (1.0 - activity))
    sign = 0.0
    for t in range(days):
        if sign != 0.0 and rng.random() < stop:
            sign = 0.0 if activity < 1 else (1.0 if rng.random() < buy_share else -1.0)
        elif sign == 0.0 and rng.random() < start:
            sign = 1.0 if rng.random() < buy_share else -1.0
        state[t] = sign
    return state


def generate(spec: PlantedMarket, days: int, seed: int) -> MarketSample:
    """Simulate ``days`` trading days of the planted market."""
    spec.validate()
    if days < 20:
        raise ValueError("need at least 20 days")
    rng = np.random.default_rng(seed)
    n = len(spec.stocks)
    col = {s: k for k, s in enumerate(spec.stocks)}
    base = np.asarray(spec.base_prices) if spec.base_prices else rng.uniform(20.0, 200.0, n)
    weights = np.asarray(spec.index_weights) if spec.index_weights else np.ones(n)

    pressure = np.zeros((days, n))
    boost = np.zeros((days, n))
    for g in spec.groups:
        state = _campaigns(rng, days, g.activity, spec.campaign_days, spec.buy_share)
        idx = [col[s] for s in dict.fromkeys(g.stocks)]
        pressure[:, idx] += (state * g.pressure)[:, None]
        boost[:, idx] += (np.abs(state) * g.volume_boost)[:, None]
    pressure[0] = 0.0
    boost[0] = 0.0

    noise = rng.normal(0.0, spec.noise, (days, n)) if spec.noise > 0 else np.zeros((days, n))
    noise[0] = 0.0
    returns = np.clip(pressure + noise, -0.5, 0.5)
    close = base * np.cumprod(1.0 + returns, axis=0)  # (days, n)
    prev = np.vstack([base, close[:-1]])
    gap = rng.normal(0.0, spec.noise / 4, (days, n)) if spec.noise > 0 else np.zeros((days, n))
    open_ = prev * (1.0 + gap)
    spread = rng.uniform(0.0, 0.01, (2, days, n))
    high = np.maximum(open_, close) * (1.0 + spread[0])
    low = np.minimum(open_, close) * (1.0 - spread[1])
    vol_noise = rng.normal(0.0, spec.volume_noise, (days, n)) if spec.volume_noise > 0 else np.zeros((days, n))
    volume = np.round(spec.base_volume * (1.0 + boost) * np.exp(vol_noise))

    values = np.stack([open_, close, low, high, volume], axis=0).transpose(2, 0, 1)  # (n, 5, days)
    dates = tuple(business_days(dt.date.fromisoformat(spec.start), days))
    panel = AlignedPanel(spec.stocks, dates, FEATURES, values)

    index_close = close @ weights
    index_open = open_ @ weights
    index_ohlc = np.stack([index_open, index_close,
                           np.minimum(index_open, index_close), np.maximum(index_open, index_close)])
    return MarketSample(panel, index_close, spec.truth, pressure, index_ohlc)


def tickers(n: int, prefix: str = "S") -> list[str]:
    width = len(str(n - 1))
    return [f"{prefix}{k:0{width}d}" for k in range(n)]


def grouped_spec(n_stocks: int = 20, group_sizes: Sequence[int] = (4, 5, 5, 6), seed: int = 0,
                 pool: int | None = None, **market_kw) -> PlantedMarket:
    """Groups of the given sizes drawn from a random pool of ``pool`` stocks.

    With ``pool=None`` the groups are disjoint; a smaller pool makes them
    overlap and leaves the remaining stocks uninvested.
    """
    names = tickers(n_stocks)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_stocks)
    groups = []
    if pool is None:
        if sum(group_sizes) > n_stocks:
            raise ValueError("groups need more stocks than exist")
        at = 0
        for size in group_sizes:
            groups.append(InvestorGroup(tuple(names[k] for k in sorted(order[at:at + size]))))
            at += size
    else:
        if not max(group_sizes) <= pool <= n_stocks:
            raise ValueError("pool must hold the largest group and fit in the market")
        members = order[:pool]
        for size in group_sizes:
            groups.append(InvestorGroup(tuple(names[k] for k in sorted(rng.choice(members, size, replace=False)))))
    return PlantedMarket(tuple(names), tuple(groups), **market_kw)


def nested_spec(n_stocks: int = 20, sizes: tuple[int, int, int] = (5, 10, 15),
                **market_kw) -> tuple[PlantedMarket, tuple[list[str], list[str], list[str]]]:
    """Market with nested subsets S1 < S2 < S3 whose co-investment thins outward.

    S1 is held by two overlapping groups, S2 adds one group spanning its outer
    ring, and S3 adds a single pair; the rest is noise. Returns the spec and
    the three subsets.
    """
    a, b, c = sizes
    if not 4 <= a < b < c <= n_stocks:
        raise ValueError("need 4 <= |S1| < |S2| < |S3| <= n_stocks")
    names = tickers(n_stocks)
    s1, s2, s3 = names[:a], names[:b], names[:c]
    half = (a + 1) // 2
    groups = [
        InvestorGroup(tuple(s1[:half + 1])),
        InvestorGroup(tuple(s1[half - 1:])),
        InvestorGroup(tuple(s1[:1] + names[a:b][: max(2, (b - a) // 2)])),
        InvestorGroup(tuple(names[b:c][:2])),
    ]
    return PlantedMarket(tuple(names), tuple(groups), **market_kw), (s1, s2, s3)


def precision_at_k(net: CoInvestNetwork, truth: set[tuple[str, str]], k: int) -> float:
    """Share of the k heaviest edges that are planted pairs."""
    if k < 1 or k > len(net.edges):
        raise ValueError(f"k={k} outside 1..{len(net.edges)}")
    top = sorted(net.edges, key=lambda e: -e[2])[:k]
    norm = {frozenset(p) for p in truth}
    return sum(frozenset((a, b)) in norm for a, b, _ in top) / k

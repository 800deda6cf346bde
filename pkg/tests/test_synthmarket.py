import numpy as np
import pytest

from coinvest import baselines as bl
from coinvest import data
from coinvest import synthmarket as sm
from coinvest.network import CoInvestNetwork


def test_truth_is_union_of_group_pairs():
    spec = sm.PlantedMarket(("A", "B", "C", "D"), (sm.InvestorGroup(("A", "B", "C")), sm.InvestorGroup(("D", "C"))))
    assert spec.truth == {("A", "B"), ("A", "C"), ("B", "C"), ("C", "D")}


@pytest.mark.parametrize("kwargs", [
    dict(stocks=("A",), groups=()),
    dict(stocks=("A", "B"), groups=(sm.InvestorGroup(("A",)),)),
    dict(stocks=("A", "B"), groups=(sm.InvestorGroup(("A", "Z")),)),
    dict(stocks=("A", "B"), groups=(), noise=-1.0),
    dict(stocks=("A", "B"), groups=(), base_prices=(1.0,)),
    dict(stocks=("A", "INDEX"), groups=()),
])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        sm.generate(sm.PlantedMarket(**kwargs), 30, 0)


def test_needs_twenty_days():
    with pytest.raises(ValueError):
        sm.generate(sm.grouped_spec(), 19, 0)


def test_common_factor_only():
    spec = sm.PlantedMarket(("A", "B", "C"), (sm.InvestorGroup(("A", "B", "C"), activity=1.0),), noise=0.0)
    s = sm.generate(spec, 60, 0)
    close = s.panel.values[:, 1]
    ratio = close / close[:, :1]
    np.testing.assert_allclose(ratio[1], ratio[0], rtol=1e-12)
    np.testing.assert_allclose(ratio[2], ratio[0], rtol=1e-12)
    for a, b in s.panel.pairs():
        r = bl.pearson(s.panel.series(a, "close"), s.panel.series(b, "close"))[0]
        assert r == pytest.approx(1.0, abs=1e-12)


def test_null_market_returns_pass_pcc_filter():
    # independent noise only: daily returns should rarely look significant
    spec = sm.PlantedMarket(tuple(sm.tickers(6)), ())
    passed = total = 0
    for seed in range(10):
        close = sm.generate(spec, 250, seed).panel.values[:, 1]
        rets = np.diff(close, axis=1) / close[:, :-1]
        for i in range(6):
            for j in range(i + 1, 6):
                passed += bl.pearson(rets[i], rets[j])[1] < 0.01
                total += 1
    assert (total - passed) / total >= 0.95


def test_same_seed_same_panel():
    spec = sm.grouped_spec()
    a, b = sm.generate(spec, 40, 5), sm.generate(spec, 40, 5)
    np.testing.assert_array_equal(a.panel.values, b.panel.values)
    np.testing.assert_array_equal(a.index_close, b.index_close)
    assert not np.array_equal(a.panel.values, sm.generate(spec, 40, 6).panel.values)


def test_ohlc_is_consistent_and_loadable(tmp_path):
    s = sm.generate(sm.grouped_spec(), 60, 1)
    v = s.panel.values
    o, c, lo, hi, vol = (v[:, k] for k in range(5))
    assert (lo <= np.minimum(o, c)).all() and (hi >= np.maximum(o, c)).all()
    assert (lo > 0).all() and (vol >= 0).all()
    path = tmp_path / "q.csv"
    data.write_quotes(s.records(), path)
    records = data.load_quotes(path)
    panel = data.build_panel(records, s.panel.symbols)
    np.testing.assert_array_equal(panel.values, s.panel.values)
    index = data.build_panel(records, ["INDEX"]).series("INDEX", "close")
    np.testing.assert_array_equal(index, s.index_close)


def test_index_follows_pressure_without_noise():
    spec = sm.grouped_spec(8, (3, 3), seed=2, noise=0.0, volume_noise=0.0)
    s = sm.generate(spec, 200, 2)
    moves = np.diff(s.index_close)
    pressure = s.pressure[1:].sum(axis=1)
    assert (moves[pressure > 0] > 0).all()
    assert (moves[pressure < 0] < 0).all()
    assert (pressure != 0).any()


def test_co_held_pairs_correlate_more():
    spec = sm.grouped_spec(12, (4, 4), seed=0)
    gaps = []
    for seed in range(5):
        s = sm.generate(spec, 250, seed)
        close = s.panel.values[:, 1]
        r = np.corrcoef(np.diff(close, axis=1) / close[:, :-1])
        idx = {n: k for k, n in enumerate(s.panel.symbols)}
        inside = [r[idx[a], idx[b]] for a, b in s.truth]
        outside = [r[idx[a], idx[b]] for a, b in s.panel.pairs() if (a, b) not in s.truth]
        gaps.append(np.mean(inside) - np.mean(outside))
    assert min(gaps) > 0


def test_campaign_activity_rate():
    rng = np.random.default_rng(0)
    state = sm._campaigns(rng, 20000, 0.3, 5.0)
    assert np.mean(state != 0) == pytest.approx(0.3, abs=0.03)
    assert set(np.unique(state)) == {-1.0, 0.0, 1.0}
    assert not sm._campaigns(rng, 50, 0.0, 5.0).any()


def test_grouped_and_nested_specs():
    spec = sm.grouped_spec(20, (4, 5, 5, 6), seed=0)
    assert len(spec.truth) == 6 + 10 + 10 + 15
    pooled = sm.grouped_spec(20, (4, 5), seed=0, pool=6)
    assert len({s for g in pooled.groups for s in g.stocks}) <= 6
    with pytest.raises(ValueError):
        sm.grouped_spec(5, (4, 5))
    nested, (s1, s2, s3) = sm.nested_spec()
    assert set(s1) < set(s2) < set(s3)

    def density(subset):
        inside = [p for p in nested.truth if p[0] in subset and p[1] in subset]
        return 2 * len(inside) / (len(subset) * (len(subset) - 1))

    assert density(s1) > density(s2) > density(s3) > 0


def test_spec_json_round_trip(tmp_path):
    spec = sm.grouped_spec(10, (3, 4), seed=1, noise=0.02)
    spec.save(tmp_path / "spec.json")
    assert sm.PlantedMarket.load(tmp_path / "spec.json") == spec


def test_precision_at_k_examples():
    truth = {("A", "B"), ("C", "D")}
    net = CoInvestNetwork(list("ABCD"), [("A", "B", 3.0), ("A", "C", 1.0), ("C", "D", 2.0)])
    assert sm.precision_at_k(net, truth, 2) == 1.0
    assert sm.precision_at_k(net, {("B", "D")}, 3) == 0.0
    assert sm.precision_at_k(net, truth, 3) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        sm.precision_at_k(net, truth, 4)


def test_random_selection_precision_matches_base_rate():
    rng = np.random.default_rng(0)
    names = sm.tickers(10)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    truth = set(pairs[:9])
    T, P = len(truth), len(pairs)
    vals = []
    for _ in range(2000):
        edges = [(a, b, float(rng.random())) for a, b in pairs]
        vals.append(sm.precision_at_k(CoInvestNetwork(names, edges), truth, T))
    assert np.mean(vals) == pytest.approx(T / P, abs=0.01)

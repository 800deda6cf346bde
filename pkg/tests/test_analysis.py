import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coinvest import analysis as an
from coinvest.network import CoInvestNetwork


def net(nodes, pairs):
    order = {s: n for n, s in enumerate(nodes)}
    edges = sorted(((a, b, 1.0) if order[a] < order[b] else (b, a, 1.0) for a, b in pairs),
                   key=lambda e: (order[e[0]], order[e[1]]))
    return CoInvestNetwork(list(nodes), edges)


def test_density_examples():
    g = net("ABCDE", [("A", "B"), ("B", "C"), ("A", "C"), ("D", "E")])
    assert an.edge_density(g, "ABC") == 1.0
    assert an.edge_density(g, "AD") == 0.0
    g4 = net("ABCD", [("A", "B"), ("B", "C"), ("C", "D")])
    assert an.edge_density(g4, "ABCD") == 0.5


def test_density_ignores_outside_nodes_and_needs_two():
    g = net("ABC", [("A", "B")])
    assert an.edge_density(g, ["A", "B", "Z"]) == 1.0
    with pytest.raises(ValueError):
        an.edge_density(g, ["A", "Z"])


@settings(max_examples=40, deadline=None)
@given(st.sets(st.tuples(st.integers(0, 6), st.integers(0, 6)), max_size=15),
       st.sets(st.integers(0, 6), min_size=2), st.tuples(st.integers(0, 6), st.integers(0, 6)))
def test_density_monotone_under_edge_addition(raw, subset, extra):
    nodes = [f"N{k}" for k in range(7)]
    pairs = {tuple(sorted(p)) for p in raw if p[0] != p[1]}
    members = [nodes[k] for k in subset]
    before = an.edge_density(net(nodes, [(nodes[a], nodes[b]) for a, b in pairs]), members)
    a, b = sorted(extra)
    if a != b and a in subset and b in subset:
        pairs.add((a, b))
    after = an.edge_density(net(nodes, [(nodes[a], nodes[b]) for a, b in pairs]), members)
    assert 0.0 <= before <= after <= 1.0


def test_top_degree_examples():
    star = net("HABCD", [("H", x) for x in "ABCD"])
    assert an.top_degree(star, 1).tickers == ["H"]
    ring = net("DCBA", [("A", "B"), ("B", "C"), ("C", "D"), ("D", "A")])
    assert an.top_degree(ring, 2).tickers == ["A", "B"]
    full = an.top_degree(ring, 4)
    assert sorted(full.tickers) == list("ABCD") and not full.truncated
    over = an.top_degree(ring, 9)
    assert over.truncated and len(over.tickers) == 4
    with pytest.raises(ValueError):
        an.top_degree(CoInvestNetwork([], []), 1)


def test_influence_examples():
    caps = {"A": 100.0, "B": 200.0}
    assert an.influence(["A", "B"], caps) == an.Influence(150.0, 50.0)
    assert an.influence(["A"], caps).std == 0.0
    partial = an.influence(["A", "Q"], caps)
    assert partial.mean == 100.0 and partial.missing == ("Q",)
    with pytest.raises(ValueError):
        an.influence(["Q"], caps)


def test_largest_component_examples():
    g = net("ABCDEFGH", [("A", "B"), ("B", "C"), ("D", "E"), ("E", "F"), ("F", "G"), ("G", "H")])
    assert an.largest_component(g).nodes == list("DEFGH")
    conn = net("ABC", [("A", "B"), ("B", "C")])
    lc = an.largest_component(conn)
    assert lc.nodes == conn.nodes and lc.edges == conn.edges
    assert an.largest_component(net("CAB", [])).nodes == ["A"]
    assert an.largest_component(CoInvestNetwork([], [])).nodes == []


def test_largest_component_tie_and_idempotence():
    g = net("XYAB", [("X", "Y"), ("A", "B")])
    lc = an.largest_component(g)
    assert sorted(lc.nodes) == ["A", "B"]
    again = an.largest_component(lc)
    assert again.nodes == lc.nodes and again.edges == lc.edges


def test_avg_distance_examples():
    adj = [net("ABC", [("A", "B")]), net("ABC", [("A", "B"), ("B", "C")])]
    s = an.avg_distance(adj, "A", "B")
    assert (s.mean, s.std, s.observed, s.skipped) == (1.0, 0.0, 2, 0)
    two = [net("ABC", [("A", "C")]), net("ABC", [("A", "B"), ("B", "C")])]
    s = an.avg_distance(two, "A", "C")
    assert (s.mean, s.std) == (1.5, 0.5)


def test_avg_distance_skips_and_errors():
    nets = [net("ABC", [("A", "B")]), net("AB", [])]
    s = an.avg_distance(nets, "A", "B")
    assert s.observed == 1 and s.skipped == 1
    with pytest.raises(ValueError, match="no observations"):
        an.avg_distance(nets, "A", "C")
    with pytest.raises(ValueError):
        an.avg_distance(nets, "A", "A")


def test_coverage_examples():
    g = net("ABCDEFGHIJ", [("A", "B"), ("C", "D")])
    assert an.coverage(g, ["A", "B"]) == 1.0
    assert an.coverage(g, ["E", "F"]) == 0.0
    assert an.coverage(g, list("ABCDEFGHIJ")) == 0.4
    with pytest.raises(ValueError):
        an.coverage(g, [])


def test_readers(tmp_path):
    caps = tmp_path / "caps.csv"
    caps.write_text("symbol,cap_usd_bn\nA,10.5\nB,3\n")
    assert an.read_caps(caps) == {"A": 10.5, "B": 3.0}
    caps.write_text("symbol,cap_usd_bn\nA,0\n")
    with pytest.raises(ValueError, match="positive"):
        an.read_caps(caps)
    wl = tmp_path / "watch.txt"
    wl.write_text("# leaders\nA\n\n B \n")
    assert an.read_watchlist(wl) == ["A", "B"]


def test_networkx_view_matches():
    g = net("ABCD", list(itertools.combinations("ABC", 2)))
    assert an.to_networkx(g).number_of_edges() == 3
    assert an.to_networkx(g).number_of_nodes() == 4

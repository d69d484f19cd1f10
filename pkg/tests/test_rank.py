import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_pagerank, dense_personalized, row_normalize
from qnar.exceptions import EmptyAnchorSet, InvalidSeed, NoConvergence, TooLarge, ZeroAnchorMass
from qnar.graph import ContributionGraph, NodeKind, ingest_events
from qnar.rank import (
    PageRank,
    RankVector,
    anchor_nodes,
    pagerank,
    pagerank_direct,
    personalized_pagerank,
    personalized_seed,
    residual,
    transition_operator,
)


def random_graph(rng, n, density=0.3, kinds=None):
    kinds = kinds or [NodeKind.USER, NodeKind.COURSELET, NodeKind.REVIEW, NodeKind.ORDER]
    nodes = {f"n{i}": kinds[rng.integers(len(kinds))] for i in range(n)}
    edges = {}
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < density:
                edges[(f"n{i}", f"n{j}")] = float(rng.uniform(0.01, 5))
    return ContributionGraph(nodes, edges)


def two_cycle():
    return ContributionGraph({"a": NodeKind.USER, "b": NodeKind.COURSELET},
                             {("a", "b"): 1.0, ("b", "a"): 1.0})


def test_courselet_transition_row(one_courselet_events):
    op = transition_operator(ingest_events(one_courselet_events))
    row = op.row("courselet:CL0")
    assert row["user:Alice"] == pytest.approx(16 / 18, abs=1e-15)
    assert f"{row['user:Alice']:.2f}" == "0.89"
    assert sorted(row.values())[:2] == pytest.approx([1 / 18, 1 / 18])


def test_single_node_is_dangling():
    op = transition_operator(ContributionGraph({"x": NodeKind.USER}, {}))
    assert op.dangling.tolist() == [True]
    assert pagerank(op).scores.tolist() == [1.0]
    assert pagerank_direct(op).scores.tolist() == pytest.approx([1.0])


def test_empty_graph():
    op = transition_operator(ContributionGraph())
    assert len(op) == 0
    assert len(pagerank(op)) == 0


@pytest.mark.parametrize("seed", range(10))
def test_rows_match_naive_normalization(seed):
    g = random_graph(np.random.default_rng(seed), 8)
    op = transition_operator(g)
    P = row_normalize(list(g.nodes), g.edges)
    np.testing.assert_allclose(op.matrix.toarray(), P, atol=1e-15)
    sums = op.matrix.toarray().sum(axis=1)
    assert all(abs(s) < 1e-12 or abs(s - 1) < 1e-12 for s in sums)


def test_two_cycle():
    op = transition_operator(two_cycle())
    np.testing.assert_allclose(pagerank(op).scores, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(pagerank_direct(op).scores, [0.5, 0.5], atol=1e-12)


def test_star_courselet_dominates():
    nodes = {f"u{i}": NodeKind.USER for i in range(3)} | {"c": NodeKind.COURSELET}
    g = ContributionGraph(nodes, {(f"u{i}", "c"): 1.0 for i in range(3)})
    pr = pagerank(transition_operator(g))
    assert pr["c"] == max(pr.scores)
    assert sum(pr["c"] > pr[u] for u in nodes if u != "c") == 3


@pytest.mark.parametrize("seed", range(50))
def test_power_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, int(rng.integers(1, 11)))
    op = transition_operator(g)
    s = rng.random(len(g))
    s /= s.sum()
    power = pagerank(op, s)
    oracle = dense_pagerank(row_normalize(list(g.nodes), g.edges), s, 0.15)
    np.testing.assert_allclose(power.scores, oracle, atol=1e-8, rtol=0)
    np.testing.assert_allclose(pagerank_direct(op, s).scores, oracle, atol=1e-12, rtol=0)
    assert residual(op, power, s) <= 1e-10


def test_personalized_seed_examples(one_courselet_events):
    base = RankVector(("a", "b", "c", "d"), np.full(4, 0.25), 0.0, 0)
    assert personalized_seed(base, {"a", "b"}) == {"a": 0.5, "b": 0.5, "c": 0.0, "d": 0.0}
    uneven = RankVector(("a", "b"), np.array([0.2, 0.8]), 0.0, 0)
    assert personalized_seed(uneven, {"a", "b"}) == pytest.approx({"a": 0.2, "b": 0.8})

    op = transition_operator(ingest_events(one_courselet_events))
    seed = personalized_seed(pagerank(op), anchor_nodes(op))
    assert sum(seed.values()) == pytest.approx(1.0, abs=1e-12)
    for node, kind in zip(op.nodes, op.kinds):
        if kind in (NodeKind.ORDER, NodeKind.REVIEW, NodeKind.VIEW):
            assert seed[node] == 0.0


def test_seed_errors():
    base = RankVector(("a", "b"), np.array([1.0, 0.0]), 0.0, 0)
    with pytest.raises(EmptyAnchorSet):
        personalized_seed(base, set())
    with pytest.raises(ZeroAnchorMass):
        personalized_seed(base, {"b"})
    with pytest.raises(InvalidSeed):
        personalized_seed(base, {"zz"})
    op = transition_operator(two_cycle())
    with pytest.raises(InvalidSeed):
        pagerank(op, {"a": 0.7})
    with pytest.raises(InvalidSeed):
        pagerank(op, [1.5, -0.5])


def test_personalized_matches_dense(two_period_events):
    from qnar.graph import EpochConfig, WEEK, build_epoch_sequence
    g = build_epoch_sequence(two_period_events, EpochConfig(0, WEEK, 2))[2].graph
    op = transition_operator(g)
    got = personalized_pagerank(op)
    want = dense_personalized({n: k.value for n, k in g.nodes.items()}, g.edges)
    for node in g.nodes:
        assert got[node] == pytest.approx(want[node], abs=1e-9)


def test_no_convergence_carries_diagnostics():
    rng = np.random.default_rng(3)
    op = transition_operator(random_graph(rng, 10))
    with pytest.raises(NoConvergence) as info:
        pagerank(op, alpha=0.15, tol=1e-15, max_iter=3)
    assert info.value.iterations == 3
    assert info.value.partial is not None and info.value.residual > 0


def test_dense_guard():
    nodes = {f"n{i}": NodeKind.USER for i in range(2001)}
    with pytest.raises(TooLarge):
        pagerank_direct(transition_operator(ContributionGraph(nodes, {})))


def test_alpha_validation():
    op = transition_operator(two_cycle())
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            pagerank(op, alpha=bad)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 20), st.floats(0.01, 100))
def test_weight_scaling_is_exact_no_op(seed, n, lam):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    scaled = ContributionGraph(g.nodes, {k: w * lam for k, w in g.edges.items()})
    a, b = transition_operator(g), transition_operator(scaled)
    np.testing.assert_allclose(a.matrix.toarray(), b.matrix.toarray(), rtol=1e-14, atol=1e-16)
    np.testing.assert_allclose(pagerank(a).scores, pagerank(b).scores, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 20))
def test_edge_addition_never_lowers_target(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    missing = [(f"n{i}", f"n{j}") for i in range(n) for j in range(n)
               if i != j and (f"n{i}", f"n{j}") not in g.edges]
    if not missing:
        return
    u, v = missing[rng.integers(len(missing))]
    before = pagerank_direct(transition_operator(g))[v]
    g2 = ContributionGraph(g.nodes, dict(g.edges) | {(u, v): float(rng.uniform(0.01, 5))})
    after = pagerank_direct(transition_operator(g2))[v]
    assert after >= before - 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_output_is_distribution(seed, n):
    rng = np.random.default_rng(seed)
    pr = personalized_pagerank(transition_operator(random_graph(rng, n, kinds=[
        NodeKind.USER, NodeKind.COURSELET])))
    assert np.all(pr.scores >= 0)
    assert pr.scores.sum() == pytest.approx(1.0, abs=1e-9)


def test_estimator_api(one_courselet_events):
    model = PageRank(alpha=0.2)
    assert model.get_params()["alpha"] == 0.2
    g = ingest_events(one_courselet_events)
    model.fit(g)
    assert model.n_iter_ > 0 and model.residual_ <= 1e-10
    out = model.transform(["user:Alice", "missing"])
    assert out[0] == model.scores_["user:Alice"] and out[1] == 0.0
    assert model.set_params(personalized=False).fit(g).scores_ != {}


def test_csv_format():
    pr = pagerank(transition_operator(two_cycle()))
    text = pr.to_csv()
    assert text.splitlines()[0] == "node_id,kind,score"
    assert text.splitlines()[1] == "a,user,0.5"

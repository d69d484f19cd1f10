import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import hand_stepped_rounds
from qnar.auction import Outcome
from qnar.exceptions import DegenerateReturns, InvalidDistributionParams, NotEnoughPlayers
from qnar.simulation import (
    Pareto,
    SimulationConfig,
    Uniform,
    bid_amounts,
    bootstrap_ci,
    init_stakes,
    muldiv_floor,
    play_round,
    ppv,
    replication_streams,
    report_csv,
    run_simulation,
    sharpe,
)
from qnar.tokens import SCALE, tokens


def test_degenerate_uniform_gives_exact_stakes():
    w = init_stakes(50, Uniform(1, 1), 0)
    assert (w == SCALE).all() and w.dtype == np.int64


def test_pareto_mean():
    w = init_stakes(100_000, Pareto(2.0), 3)
    assert w.mean() / SCALE == pytest.approx(1.0, rel=0.02)
    assert w.min() >= SCALE // 2


def test_stakes_reproducible():
    a = init_stakes(20, Pareto(3.0), 9)
    b = init_stakes(20, Pareto(3.0), np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, init_stakes(20, Pareto(3.0), 10))


@pytest.mark.parametrize("bad", [lambda: Pareto(1.0), lambda: Pareto(2, -1.0),
                                 lambda: Uniform(0, 1), lambda: Uniform(2, 1),
                                 lambda: SimulationConfig(distribution="lognormal")])
def test_invalid_distribution_params(bad):
    with pytest.raises(InvalidDistributionParams):
        bad()


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(n_rounds=0)
    with pytest.raises(ValueError):
        SimulationConfig(bid_fraction=0)
    with pytest.raises(ValueError):
        SimulationConfig(n_stakers=1)
    assert SimulationConfig(n_rounds=7, checkpoints=(3,)).checkpoints == (3, 7)


def test_bid_amounts_exact():
    w = np.array([0, 9, 10, 2**62 - 1], np.int64)
    assert bid_amounts(w, Fraction(1, 10)).tolist() == [x // 10 for x in w.tolist()]
    assert bid_amounts(w, Fraction(3, 7)).tolist() == [x * 3 // 7 for x in w.tolist()]


def test_muldiv_floor_against_python_ints():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2**62, 5000)
    c = rng.integers(1, 2**62, 5000)
    c[:500] = rng.integers(1, 50, 500)
    b = np.minimum(rng.integers(0, 2**62, 5000), c)
    got = muldiv_floor(a, b, c)
    want = [int(x) * int(y) // int(z) for x, y, z in zip(a, b, c)]
    assert got.tolist() == want


def test_tie_refunds_without_inflation():
    cfg = SimulationConfig(n_stakers=2, bid_fraction=1.0, inflation=0.0)
    w = np.array([5, 5], np.int64)
    res = play_round(w, cfg, np.random.default_rng(0), votes=[1, -1])
    assert res.settlement.refunded
    assert res.wealth.tolist() == [5, 5]
    assert res.returns.tolist() == [0.0, 0.0]


def test_worked_example_round():
    cfg = SimulationConfig(n_stakers=3, bid_fraction=1.0, inflation=0.0)
    w = np.array([tokens(1), tokens(2), tokens(2)], np.int64)
    res = play_round(w, cfg, np.random.default_rng(0), votes=[1, 1, -1])
    d = res.wealth - w
    assert res.settlement.outcome is Outcome.ACCEPTED
    assert abs(Fraction(int(d[0]), SCALE) - Fraction(2, 3)) < Fraction(1, SCALE)
    assert abs(Fraction(int(d[1]), SCALE) - Fraction(4, 3)) < Fraction(1, SCALE)
    assert d[2] == -tokens(2) and d.sum() == 0


def test_exogenous_truth_override():
    cfg = SimulationConfig(n_stakers=3, bid_fraction=1.0, inflation=0.0, outcome="exogenous")
    w = np.array([10, 10, 10], np.int64)
    res = play_round(w, cfg, np.random.default_rng(0), votes=[1, 1, -1], truth=Outcome.DENIED)
    assert res.wealth.tolist() == [0, 0, 30]


def test_not_enough_players():
    cfg = SimulationConfig(n_stakers=2)
    with pytest.raises(NotEnoughPlayers):
        play_round(np.array([5, 10**9]), cfg, np.random.default_rng(0))


def test_play_round_consumes_fixed_draws():
    cfg = SimulationConfig(n_stakers=4)
    w = np.full(4, tokens(1), np.int64)
    rng = np.random.default_rng(1)
    play_round(w, cfg, rng, votes=[1, 1, 1, -1])
    ref = np.random.default_rng(1)
    ref.random(5)
    assert rng.random() == ref.random()


@pytest.mark.parametrize("dist", ["uniform", "pareto"])
def test_matches_hand_stepped_oracle(dist):
    cfg = SimulationConfig(n_stakers=5, n_rounds=3, distribution=dist, replications=2, seed=4)
    report = run_simulation(cfg, keep_paths=True)
    for r in range(2):
        init, rounds = replication_streams(4, r)
        if dist == "uniform":
            x = init.uniform(0.5, 1.5, 5)
        else:
            x = 0.5 * (1.0 + init.pareto(2.0, 5))
        w0 = [max(1, int(v)) for v in np.rint(x * SCALE)]
        uniforms = [rounds.random(6).tolist() for _ in range(3)]
        path = hand_stepped_rounds(w0, uniforms)
        assert report.replications[r].wealth_path.tolist() == path


def test_batch_kernel_matches_play_round():
    cfg = SimulationConfig(n_stakers=7, n_rounds=40, distribution="pareto", replications=3,
                           seed=2, bid_fraction=0.3, inflation=0.5)
    report = run_simulation(cfg, keep_paths=True, block=2)
    for r in range(3):
        init, rounds = replication_streams(2, r)
        w = init_stakes(7, cfg.stake_distribution(), init)
        alive = None
        path = [w]
        for _ in range(40):
            res = play_round(w, cfg, rounds, alive)
            w, alive = res.wealth, res.alive
            path.append(w)
        np.testing.assert_array_equal(report.replications[r].wealth_path, np.stack(path))


def test_single_round_without_dispersion_has_no_sharpe():
    cfg = SimulationConfig(n_rounds=1, inflation=0.0, vote_prob=1.0, replications=3)
    report = run_simulation(cfg)
    assert all(rep.metrics[1].sharpe is None for rep in report.replications)
    assert np.isnan(report.metric("sharpe")).all()
    line = report_csv([report]).splitlines()[1]
    assert line.split(",")[7] == ""


def test_sharpe_examples():
    assert sharpe([0.1, 0.3]) == pytest.approx(0.2 / math.sqrt(0.02))
    assert sharpe([1, 2, 3, 4]) == pytest.approx(2.5 / np.std([1, 2, 3, 4], ddof=1))
    for bad in ([0.1], [0.2, 0.2, 0.2]):
        with pytest.raises(DegenerateReturns):
            sharpe(bad)


def test_ppv_values():
    assert ppv(0.2, 0.05, 0) == 0
    assert ppv(0.2, 0.05, 1) == pytest.approx(3.2)
    assert ppv(0.95, 0.05, 1) == pytest.approx(0.05)
    with pytest.raises(ZeroDivisionError):
        ppv(0, 0, 1)
    with pytest.raises(ValueError):
        ppv(-0.1, 0.05, 1)


def test_pooled_metrics_by_hand():
    cfg = SimulationConfig(n_stakers=3, n_rounds=6, replications=1, seed=5, bid_fraction=0.5)
    report = run_simulation(cfg, keep_paths=True)
    path = report.replications[0].wealth_path.astype(float)
    rets = (np.diff(path, axis=0) / path[:-1]).ravel()
    m = report.replications[0].metrics[6]
    assert m.exp_return == pytest.approx(rets.mean(), rel=1e-12)
    assert m.std == pytest.approx(rets.std(ddof=1), rel=1e-12)
    assert m.sharpe == pytest.approx(sharpe(rets), rel=1e-12)


def test_threads_and_blocks_do_not_change_output():
    cfg = SimulationConfig(n_stakers=6, n_rounds=60, replications=10, seed=3,
                           checkpoints=(10, 30))
    base = report_csv([run_simulation(cfg)])
    assert report_csv([run_simulation(cfg, threads=3, block=3)]) == base
    assert report_csv([run_simulation(cfg, block=1)]) == base
    assert report_csv([run_simulation(replace(cfg, seed=4))]) != base


@pytest.mark.parametrize("mode", ["per-participant", "total-split"])
def test_wealth_conservation(mode):
    cfg = SimulationConfig(n_stakers=8, n_rounds=50, replications=4, inflation=0.25,
                           inflation_mode=mode, distribution="pareto", seed=1)
    report = run_simulation(cfg, keep_paths=True)
    per_round = tokens(0.25)
    for rep in report.replications:
        path = rep.wealth_path
        for t in range(1, len(path)):
            grew = int(path[t].sum()) - int(path[t - 1].sum())
            if mode == "per-participant":
                assert grew % per_round == 0 and grew > 0
            else:
                assert grew == per_round


def test_zero_inflation_is_zero_sum():
    cfg = SimulationConfig(n_stakers=10, n_rounds=200, replications=3, inflation=0.0)
    for rep in run_simulation(cfg, keep_paths=True).replications:
        totals = rep.wealth_path.sum(axis=1)
        assert (totals == totals[0]).all()


def test_survival_falls_with_bid_fraction():
    base = SimulationConfig(n_stakers=10, n_rounds=60, replications=20, inflation=0.0, seed=6)
    survivors = [run_simulation(replace(base, bid_fraction=f)).metric("survivors").mean()
                 for f in (0.1, 0.5, 1.0)]
    assert survivors == sorted(survivors, reverse=True)
    assert survivors[0] == 10 and survivors[-1] < 10


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 10**12), min_size=2, max_size=9), st.integers(0, 2**32 - 1),
       st.sampled_from([0.1, 0.5, 1.0]))
def test_vote_flip_symmetry(wealth, seed, f):
    cfg = SimulationConfig(n_stakers=len(wealth), bid_fraction=f)
    w = np.array(wealth, np.int64)
    if (bid_amounts(w, cfg.fraction) >= 1).sum() < 2:
        return
    votes = np.random.default_rng(seed).choice([1, -1], len(w))
    a = play_round(w, cfg, np.random.default_rng(0), votes=votes)
    b = play_round(w, cfg, np.random.default_rng(0), votes=-votes)
    np.testing.assert_array_equal(a.wealth, b.wealth)


def test_truncation_is_reported():
    cfg = SimulationConfig(n_stakers=2, n_rounds=50, bid_fraction=1.0, inflation=0.0,
                           replications=5)
    report = run_simulation(cfg)
    for rep in report.replications:
        assert rep.truncated and rep.rounds_played < 50
        assert rep.metrics[50].rounds == rep.rounds_played


def test_bootstrap_ci():
    x = np.random.default_rng(0).normal(2.0, 1.0, 400)
    lo, hi = bootstrap_ci(x)
    assert lo < np.median(x) < hi and hi - lo < 0.5
    assert bootstrap_ci(x, seed=1) != (lo, hi)
    assert bootstrap_ci(x) == (lo, hi)
    with pytest.raises(ValueError):
        bootstrap_ci([np.nan])

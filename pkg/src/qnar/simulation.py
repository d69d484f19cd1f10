"""Monte Carlo staking simulation of the peer-review auction.

A population of unskilled stakers plays repeated rounds. Each round every
solvent staker bids a fixed fraction of its current wealth with a coin-flip
vote; the round is settled with the auction payoff and every participant is
minted the inflation amount. Wealth is integer subunits throughout, so token
conservation holds exactly.

``play_round`` is the readable single-round reference built on
:func:`qnar.auction.split_stakes`. ``run_simulation`` uses a vectorized kernel
that advances all replications at once and reproduces ``play_round``
bit for bit.

Randomness: replication ``r`` draws its initial stakes from
``default_rng([seed, r, 0])`` and its rounds from ``default_rng([seed, r, 1])``,
consuming ``n + 1`` uniforms per round (``n`` votes, then the exogenous truth).
Results therefore do not depend on replication order or thread count.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .auction import Bid, Outcome, Settlement, Vote, cumulative_split, decision_sum, split_stakes
from .exceptions import DegenerateReturns, InvalidDistributionParams, NotEnoughPlayers, OverflowGuard
from .tokens import SCALE, tokens
from .validation import check_positive_int, check_probability, check_scalar

logger = logging.getLogger(__name__)

GRID_STAKERS = (5, 10, 50, 100, 1000)
GRID_ROUNDS = (10, 50, 100, 1000, 10000)
_WEALTH_LIMIT = 2**62
_CHUNK_VALUES = 4_000_000  # uniforms drawn per chunk across all replications


@dataclass(frozen=True)
class SimulationConfig:
    n_stakers: int = 5
    n_rounds: int = 100
    distribution: str = "uniform"
    uniform_low: float = 0.5
    uniform_high: float = 1.5
    pareto_shape: float = 2.0
    pareto_scale: float | None = None  # None: chosen for mean 1
    vote_prob: float = 0.5
    bid_fraction: float = 0.1
    inflation: float = 1.0
    inflation_mode: str = "per-participant"
    outcome: str = "endogenous"
    p_accept: float = 0.5
    damping: bool = True
    replications: int = 100
    seed: int = 0
    checkpoints: tuple[int, ...] = ()

    def __post_init__(self):
        check_positive_int(self.n_stakers, "n_stakers", minimum=2)
        check_positive_int(self.n_rounds, "n_rounds")
        check_positive_int(self.replications, "replications")
        check_scalar(self.bid_fraction, "bid_fraction", min_val=0.0, max_val=1.0, include_min=False)
        check_probability(self.vote_prob, "vote_prob")
        check_probability(self.p_accept, "p_accept")
        check_scalar(self.inflation, "inflation", min_val=0.0)
        if self.distribution not in ("uniform", "pareto"):
            raise InvalidDistributionParams(f"unknown distribution {self.distribution!r}")
        if self.outcome not in ("endogenous", "exogenous"):
            raise ValueError(f"outcome must be endogenous or exogenous, got {self.outcome!r}")
        if self.inflation_mode not in ("per-participant", "total-split"):
            raise ValueError(f"unknown inflation mode {self.inflation_mode!r}")
        cps = tuple(sorted(set(int(c) for c in self.checkpoints) | {self.n_rounds}))
        if cps[0] < 1 or cps[-1] > self.n_rounds:
            raise ValueError(f"checkpoints must lie in 1..{self.n_rounds}")
        object.__setattr__(self, "checkpoints", cps)
        self.stake_distribution()  # validates parameters

    def stake_distribution(self) -> StakeDistribution:
        if self.distribution == "uniform":
            return Uniform(self.uniform_low, self.uniform_high)
        return Pareto(self.pareto_shape, self.pareto_scale)

    @property
    def fraction(self) -> Fraction:
        return Fraction(repr(self.bid_fraction))

    @property
    def inflation_subunits(self) -> int:
        return tokens(self.inflation)


@dataclass(frozen=True)
class Uniform:
    low: float = 0.5
    high: float = 1.5

    def __post_init__(self):
        if not (0 < self.low <= self.high) or not math.isfinite(self.high):
            raise InvalidDistributionParams(f"need 0 < low <= high, got ({self.low}, {self.high})")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, n)

    @property
    def mean(self) -> float:
        return (self.low + self.high) / 2


@dataclass(frozen=True)
class Pareto:
    """Classical Pareto with minimum ``scale``; ``scale=None`` sets the mean to 1."""

    shape: float = 2.0
    scale: float | None = None

    def __post_init__(self):
        if not self.shape > 1 or not math.isfinite(self.shape):
            raise InvalidDistributionParams(f"Pareto shape must be > 1 for a finite mean, got {self.shape}")
        if self.scale is None:
            object.__setattr__(self, "scale", (self.shape - 1) / self.shape)
        if not self.scale > 0:
            raise InvalidDistributionParams(f"Pareto scale must be positive, got {self.scale}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.scale * (1.0 + rng.pareto(self.shape, n))

    @property
    def mean(self) -> float:
        return self.shape * self.scale / (self.shape - 1)


StakeDistribution = Uniform | Pareto


def init_stakes(n: int, distribution: StakeDistribution, seed) -> np.ndarray:
    """``n`` positive i.i.d. stakes in subunits. ``seed`` may be a Generator."""
    check_positive_int(n, "n")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = distribution.sample(rng, n)
    return np.maximum(np.rint(x * SCALE), 1).astype(np.int64)


def replication_streams(seed: int, replication: int) -> tuple[np.random.Generator, np.random.Generator]:
    return (np.random.default_rng([seed, replication, 0]),
            np.random.default_rng([seed, replication, 1]))


def bid_amounts(wealth: np.ndarray, fraction: Fraction) -> np.ndarray:
    """``floor(wealth * fraction)`` exactly, without int64 overflow."""
    num, den = fraction.numerator, fraction.denominator
    return (wealth // den) * num + (wealth % den) * num // den


@dataclass
class RoundResult:
    settlement: Settlement
    wealth: np.ndarray
    alive: np.ndarray
    returns: np.ndarray


def play_round(wealth: np.ndarray, config: SimulationConfig, rng: np.random.Generator,
               alive: np.ndarray | None = None, votes: Sequence[int] | None = None,
               truth: Outcome | None = None) -> RoundResult:
    """One proposal: bid, vote, settle, mint.

    ``votes`` (+1/-1 per staker) and ``truth`` override the random draws; the
    ``n + 1`` uniforms are consumed either way so streams stay aligned.
    Raises :class:`NotEnoughPlayers` when fewer than two stakers can bid.
    """
    wealth = np.asarray(wealth, dtype=np.int64)
    n = len(wealth)
    alive = np.ones(n, bool) if alive is None else np.asarray(alive, bool).copy()
    u = rng.random(n + 1)
    bids = bid_amounts(wealth, config.fraction)
    alive &= bids >= 1
    if alive.sum() < 2:
        raise NotEnoughPlayers(f"only {int(alive.sum())} solvent staker(s)")
    if votes is None:
        votes = np.where(u[:n] < config.vote_prob, 1, -1)
    names = [f"s{i}" for i in range(n)]
    round_bids = [Bid(names[i], int(bids[i]), Vote(int(votes[i]))) for i in range(n) if alive[i]]

    refund = False
    if config.outcome == "exogenous":
        outcome = truth or (Outcome.ACCEPTED if u[n] < config.p_accept else Outcome.DENIED)
    else:
        total = decision_sum(round_bids)
        outcome = Outcome.ACCEPTED if total > 0 else Outcome.DENIED
        refund = total == 0
    split = split_stakes(round_bids, outcome, refund, config.damping)

    participants = [b.staker for b in round_bids]
    inflation = config.inflation_subunits
    if config.inflation_mode == "per-participant":
        minted = {s: inflation for s in participants}
    else:
        minted = dict(zip(participants, cumulative_split(inflation, [1] * len(participants))))

    new = wealth.copy()
    for i, name in enumerate(names):
        if alive[i]:
            new[i] += split.deltas[name] + minted[name]
    settlement = Settlement(
        outcome, decision_sum(round_bids), split.winners, split.losers,
        {b.staker: b.amount for b in round_bids}, {b.staker: b.vote for b in round_bids},
        split.deltas, {}, minted, 0, 0, {}, split.refunded)
    returns = np.divide(new - wealth, wealth, out=np.zeros(n), where=alive)
    return RoundResult(settlement, new, alive, returns)


def muldiv_floor(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Exact ``floor(a * b / c)`` for non-negative int64 arrays, ``c > 0``.

    The product may exceed 64 bits. A float estimate is corrected by
    ``floor(r / c)`` where the remainder ``r = a*b - q*c`` is computed modulo
    2**64; that is exact while ``|error| * c`` stays below 2**62. Elements outside that bound go through
    Python integers.
    """
    a, b, c = np.broadcast_arrays(np.asarray(a, np.int64), np.asarray(b, np.int64),
                                  np.asarray(c, np.int64))
    est = a.astype(np.float64) * b.astype(np.float64) / c.astype(np.float64)
    q = np.floor(est).astype(np.int64)
    safe = (est * 2.0**-50 + 4) * c.astype(np.float64) < 2.0**62
    au, bu, cu = a.astype(np.uint64), b.astype(np.uint64), c.astype(np.uint64)
    r = (au * bu - q.astype(np.uint64) * cu).view(np.int64)
    q = q + np.where(safe, r // c, 0)
    if not safe.all():
        q = q.copy()
        for idx in zip(*np.nonzero(~safe)):
            q[idx] = int(a[idx]) * int(b[idx]) // int(c[idx])
    return q


class _Welford:
    """Running mean/M2 per (replication, staker)."""

    def __init__(self, shape):
        self.count = np.zeros(shape[0], np.int64)
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def update(self, x: np.ndarray, rows: np.ndarray) -> None:
        self.count[rows] += 1
        k = self.count[rows][:, None].astype(np.float64)
        old = self.mean[rows]
        new = old + (x[rows] - old) / k
        self.m2[rows] += (x[rows] - old) * (x[rows] - new)
        self.mean[rows] = new

    def pooled(self):
        """Per replication: pooled mean, sample std over all staker-rounds."""
        n = self.mean.shape[1]
        total = self.count * n
        mean = self.mean.mean(axis=1)
        m2 = self.m2.sum(axis=1) + self.count * ((self.mean - mean[:, None]) ** 2).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            std = np.sqrt(m2 / (total - 1))
        return mean, std

    def per_staker_sharpe(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            std = np.sqrt(self.m2 / (self.count[:, None] - 1))
            out = self.mean / std
        return np.where(std > 0, out, np.nan)


@dataclass
class Metrics:
    rounds: int
    exp_return: float
    std: float
    sharpe: float | None
    survivors: int


@dataclass
class ReplicationResult:
    replication: int
    rounds_played: int
    truncated: bool
    metrics: dict[int, Metrics]
    survival: np.ndarray
    final_wealth: np.ndarray
    staker_sharpe: np.ndarray
    wealth_path: np.ndarray | None = None


def _sharpe_or_none(mean: float, std: float) -> float | None:
    if not std > 0 or not math.isfinite(std):
        return None
    return float(mean / std)


def _run_block(config: SimulationConfig, reps: Sequence[int], keep_paths: bool,
               progress: Callable[[int], None] | None = None) -> list[ReplicationResult]:
    n, R = config.n_stakers, len(reps)
    dist = config.stake_distribution()
    init_rngs, round_rngs = zip(*(replication_streams(config.seed, r) for r in reps))
    W = np.stack([init_stakes(n, dist, g) for g in init_rngs])
    alive = np.ones((R, n), bool)
    active = np.ones(R, bool)
    played = np.zeros(R, np.int64)
    survival = np.zeros((R, n), np.int64)
    stats = _Welford((R, n))
    metrics: list[dict[int, Metrics]] = [{} for _ in range(R)]
    paths = np.zeros((R, config.n_rounds + 1, n), np.int64) if keep_paths else None
    if keep_paths:
        paths[:, 0] = W

    frac = config.fraction
    inflation = config.inflation_subunits
    p, p_accept = config.vote_prob, config.p_accept
    exogenous = config.outcome == "exogenous"
    per_participant = config.inflation_mode == "per-participant"
    checkpoints = set(config.checkpoints)
    chunk = max(1, min(config.n_rounds, _CHUNK_VALUES // (R * (n + 1))))
    rows_all = np.arange(R)
    U = None

    def snapshot(rows, t):
        mean, std = stats.pooled()
        for i in rows:
            metrics[i][t] = Metrics(int(played[i]), float(mean[i]), float(std[i]),
                                    _sharpe_or_none(mean[i], std[i]), int(alive[i].sum()))

    for t in range(config.n_rounds):
        if t % chunk == 0:
            size = min(chunk, config.n_rounds - t)
            U = np.stack([g.random((size, n + 1)) for g in round_rngs], axis=1)
        u = U[t % chunk]

        bids = bid_amounts(W, frac)
        alive &= bids >= 1
        stuck = active & (alive.sum(axis=1) < 2)
        if stuck.any():
            for i in np.flatnonzero(stuck):
                logger.info("replication %d truncated at round %d: not enough players", reps[i], t)
                for cp in checkpoints:
                    metrics[i].setdefault(cp, None)
            active &= ~stuck
            if not active.any():
                break
        part = alive & active[:, None]
        bids = np.where(part, bids, 0)

        accept = u[:, :n] < p
        if exogenous:
            outcome_accept = u[:, n] < p_accept
            tie = np.zeros(R, bool)
        else:
            total = np.where(accept, bids, -bids).sum(axis=1)
            outcome_accept = total > 0
            tie = total == 0
        win = part & (accept == outcome_accept[:, None])
        lose = part & ~win
        sw = np.where(win, bids, 0).sum(axis=1)
        sl = np.where(lose, bids, 0).sum(axis=1)
        redistribute = ~tie & (sw > 0) & (sl > 0)

        weights = np.where(win, bids, 0) if config.damping else win.astype(np.int64)
        cum = np.cumsum(weights, axis=1)
        wsum = cum[:, -1]
        floors = muldiv_floor(sl[:, None], cum, np.maximum(wsum, 1)[:, None])
        profit = np.diff(floors, axis=1, prepend=0)
        delta = np.where(win, profit, 0) - np.where(lose, bids, 0)
        delta = np.where(redistribute[:, None], delta, 0)

        if per_participant:
            mint = np.where(part, inflation, 0)
        else:
            cnt = np.cumsum(part, axis=1)
            k = np.maximum(cnt[:, -1], 1)[:, None]
            mint = np.diff(inflation * cnt // k, axis=1, prepend=0)

        new = W + delta + mint
        if new.sum(axis=1).max() >= _WEALTH_LIMIT:
            raise OverflowGuard("total wealth exceeds the fixed-point simulation range")
        ret = np.divide(new - W, W, out=np.zeros((R, n)), where=part)
        rows = rows_all[active]
        stats.update(ret, rows)
        W = np.where(active[:, None], new, W)
        played[active] += 1
        survival += part
        if keep_paths:
            paths[active, t + 1] = W[active]
        if t + 1 in checkpoints:
            snapshot(rows, t + 1)
        if progress is not None:
            progress(t + 1)

    # truncated replications report their last state at every missed checkpoint
    mean, std = stats.pooled()
    staker_sharpe = stats.per_staker_sharpe()
    results = []
    for i, r in enumerate(reps):
        m = metrics[i]
        for cp in config.checkpoints:
            if m.get(cp) is None:
                m[cp] = Metrics(int(played[i]), float(mean[i]), float(std[i]),
                                _sharpe_or_none(mean[i], std[i]), int(alive[i].sum()))
        results.append(ReplicationResult(
            r, int(played[i]), bool(played[i] < config.n_rounds), dict(sorted(m.items())),
            survival[i].copy(), W[i].copy(), staker_sharpe[i].copy(),
            paths[i, : played[i] + 1].copy() if keep_paths else None))
    return results


@dataclass
class SimulationReport:
    config: SimulationConfig
    replications: list[ReplicationResult] = field(default_factory=list)

    def metric(self, name: str, checkpoint: int | None = None) -> np.ndarray:
        """One value per replication (NaN where undefined)."""
        cp = checkpoint or self.config.n_rounds
        vals = [getattr(rep.metrics[cp], name) for rep in self.replications]
        return np.array([np.nan if v is None else v for v in vals], dtype=float)

    def median_sharpe(self, checkpoint: int | None = None) -> float:
        return float(np.nanmedian(self.metric("sharpe", checkpoint)))

    def mean_return(self, checkpoint: int | None = None) -> float:
        return float(np.mean(self.metric("exp_return", checkpoint)))

    def summary(self, checkpoint: int | None = None) -> dict:
        sharpe = self.metric("sharpe", checkpoint)
        ret = self.metric("exp_return", checkpoint)
        surv = np.concatenate([rep.survival for rep in self.replications])
        return {
            "n": self.config.n_stakers,
            "rounds": checkpoint or self.config.n_rounds,
            "dist": self.config.distribution,
            "median_sharpe": float(np.nanmedian(sharpe)),
            "mean_sharpe": float(np.nanmean(sharpe)),
            "mean_exp_return": float(np.mean(ret)),
            "median_survival": float(np.median(surv)),
            "truncated": sum(rep.truncated for rep in self.replications),
        }

    def rows(self):
        cfg = self.config
        for cp in cfg.checkpoints:
            for rep in self.replications:
                m = rep.metrics[cp]
                yield {"n": cfg.n_stakers, "rounds": cp, "dist": cfg.distribution,
                       "replication": rep.replication, "rounds_played": m.rounds,
                       "exp_return": m.exp_return, "std": m.std, "sharpe": m.sharpe,
                       "survivors": m.survivors}


REPORT_COLUMNS = ("n", "rounds", "dist", "replication", "rounds_played", "exp_return", "std",
                  "sharpe", "survivors")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}" if math.isfinite(value) else ""
    return str(value)


def report_csv(reports: Sequence[SimulationReport], header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(REPORT_COLUMNS)
    for report in reports:
        for row in report.rows():
            writer.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def wealth_path_csv(reports: Sequence[SimulationReport], header: bool = True) -> str:
    """``n,dist,replication,round,staker,wealth`` with wealth in subunits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(["n", "dist", "replication", "round", "staker", "wealth"])
    for report in reports:
        cfg = report.config
        for rep in report.replications:
            if rep.wealth_path is None:
                continue
            for t, row in enumerate(rep.wealth_path):
                for i, w in enumerate(row):
                    writer.writerow([cfg.n_stakers, cfg.distribution, rep.replication, t, i,
                                     int(w)])
    return buf.getvalue()


def run_simulation(config: SimulationConfig, threads: int = 1, keep_paths: bool = False,
                   block: int = 100) -> SimulationReport:
    """Run every replication of ``config``.

    Replications are processed in blocks (vectorized inside a block); blocks
    may run on ``threads`` workers without changing any number.
    """
    reps = list(range(config.replications))
    blocks = [reps[i:i + block] for i in range(0, len(reps), block)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _run_block(config, b, keep_paths), blocks))
    else:
        parts = [_run_block(config, b, keep_paths) for b in blocks]
    return SimulationReport(config, [r for part in parts for r in part])


def run_grid(base: SimulationConfig, stakers: Sequence[int] = GRID_STAKERS,
             distributions: Sequence[str] = ("uniform", "pareto"), threads: int = 1,
             block: int = 100, keep_paths: bool = False) -> list[SimulationReport]:
    out = []
    for dist in distributions:
        for n in stakers:
            cfg = replace(base, n_stakers=n, distribution=dist)
            logger.info("simulating n=%d dist=%s rounds=%d reps=%d", n, dist, cfg.n_rounds,
                        cfg.replications)
            out.append(run_simulation(cfg, threads=threads, keep_paths=keep_paths, block=block))
    return out


def sharpe(returns: Sequence[float]) -> float:
    """Per-round Sharpe ratio: mean / sample std; no risk-free rate, no annualization."""
    x = np.asarray(returns, dtype=float)
    if x.size < 2:
        raise DegenerateReturns("need at least two returns")
    std = x.std(ddof=1)
    if np.ptp(x) == 0 or not std > 0:
        raise DegenerateReturns("returns have zero dispersion")
    return float(x.mean() / std)


def ppv(beta: float, alpha: float, R: float) -> float:
    """Positive predictive value, ``(1 - beta) R / (beta R + alpha)``, as printed.

    This form is not bounded by 1 (the textbook version has
    ``R + alpha - beta R`` in the denominator).
    """
    for name, v in (("beta", beta), ("alpha", alpha), ("R", R)):
        check_scalar(v, name, min_val=0.0)
    denom = beta * R + alpha
    if denom == 0:
        raise ZeroDivisionError("beta * R + alpha is zero")
    return (1 - beta) * R / denom


def bootstrap_ci(values: Sequence[float], statistic=np.median, n_boot: int = 2000,
                 level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval of ``statistic`` over ``values``."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise ValueError("no finite values")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    stats = statistic(x[idx], axis=1)
    lo, hi = np.quantile(stats, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)

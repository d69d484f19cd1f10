"""Temporal CredRank.

At each period ``k`` personalized PageRank is evaluated on ``G_k``. A user's
raw score adds up its epoch nodes with geometric decay,

    S*_i = sum_{t<=k} c^(k-t) pr_k(epoch(i, t)),

and the reported reputation rescales the raw scores over the contributors so
that they exactly share the minted total plus a fixed base,

    S_i = S*_i / sum_j S*_j * (M_k + base).
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import NoContributors, NoConvergence, UnknownNode, ZeroTotalScore
from .graph import (
    WEEK,
    ContributionEvent,
    ContributionGraph,
    EpochConfig,
    EpochGraphSequence,
    NodeKind,
    WeightConfig,
    build_epoch_sequence,
)
from .rank import (
    DEFAULT_ALPHA,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    RankVector,
    anchor_nodes,
    personalized_pagerank,
    transition_operator,
)
from .validation import check_alpha, check_decay, check_positive_int, check_tol

logger = logging.getLogger(__name__)

DEFAULT_BASE = 1000.0
DEFAULT_DECAY = 1.0


@dataclass
class EpochScoreSeries:
    """PageRank of every ``G_k``; ``ranks[k-1]`` is the vector for period ``k``."""

    ranks: list[RankVector]
    owners: list[dict[str, tuple[str, int]]]

    def __len__(self):
        return len(self.ranks)

    def rank(self, k: int) -> RankVector:
        return self.ranks[k - 1]

    def epoch_score(self, user: str, t: int, k: int) -> float:
        """``pr_k(epoch(user, t))``, 0 when the user has no node in period ``t``."""
        for node, (owner, period) in self.owners[k - 1].items():
            if owner == user and period == t:
                return self.ranks[k - 1][node]
        return 0.0


def epoch_scores(seq: EpochGraphSequence, alpha: float = DEFAULT_ALPHA, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, anchor_kinds=(NodeKind.USER, NodeKind.COURSELET),
                 method: str = "power", threads: int = 1) -> EpochScoreSeries:
    """Two-pass personalized PageRank on each ``G_k``.

    Periods are independent, so ``threads > 1`` evaluates them concurrently;
    the result does not depend on the thread count.
    """
    if len(seq) == 0:
        raise ValueError("epoch sequence is empty")

    def one(epoch):
        op = transition_operator(epoch.graph)
        if len(op) == 0:
            return RankVector((), np.zeros(0), 0.0, 0, ())
        try:
            return personalized_pagerank(op, anchor_nodes(op, anchor_kinds), alpha, tol,
                                         max_iter, method)
        except NoConvergence as exc:
            exc.epoch = epoch.k
            exc.args = (f"period {epoch.k}: {exc.args[0]}",)
            raise

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranks = list(pool.map(one, seq.epochs))
    else:
        ranks = [one(ep) for ep in seq.epochs]
    return EpochScoreSeries(ranks, [dict(ep.graph.owners) for ep in seq.epochs])


def aggregate_score(series: EpochScoreSeries, node: str, c: float = DEFAULT_DECAY,
                    k: int | None = None) -> float:
    """Decayed sum ``S*`` of ``node``'s epoch scores as seen at period ``k``."""
    check_decay(c)
    k = len(series) if k is None else k
    if not 1 <= k <= len(series):
        raise ValueError(f"period {k} outside 1..{len(series)}")
    rank = series.rank(k)
    if node not in rank:
        raise UnknownNode(node)
    total = 0.0
    terms = sorted((t, n) for n, (owner, t) in series.owners[k - 1].items() if owner == node)
    for t, epoch_node in terms:
        total += c ** (k - t) * rank[epoch_node]
    return total


def mint_total(graph_k: ContributionGraph, weights: WeightConfig | None = None,
               nodes: Iterable[str] | None = None) -> float:
    """``M_k``: sum of mint weights over the nodes of ``graph_k`` (or over ``nodes``)."""
    weights = weights or WeightConfig()
    pool = graph_k.nodes if nodes is None else nodes
    return float(sum(weights.mint_weight(graph_k.nodes[n]) for n in pool))


def period_mint(seq: EpochGraphSequence, k: int, weights: WeightConfig | None = None,
                cumulative: bool = True) -> float:
    epoch = seq[k]
    if cumulative:
        return mint_total(epoch.graph, weights)
    prev = seq[k - 1].graph.nodes if k > 1 else {}
    fresh = [n for n in epoch.graph.nodes if n not in prev]
    return mint_total(epoch.graph, weights, fresh)


@dataclass
class ReputationScore:
    period: int
    scores: dict[str, float]
    s_star: dict[str, float]
    minted: float
    base: float

    @property
    def budget(self) -> float:
        return self.minted + self.base

    def to_dict(self) -> dict:
        return {"period": self.period, "scores": [[n, v] for n, v in self.scores.items()],
                "s_star": [[n, v] for n, v in self.s_star.items()],
                "minted": self.minted, "base": self.base}

    @classmethod
    def from_dict(cls, data: Mapping) -> ReputationScore:
        return cls(data["period"], {n: v for n, v in data["scores"]},
                   {n: v for n, v in data["s_star"]}, data["minted"], data["base"])


def reputation_scores(series: EpochScoreSeries, graph_k: ContributionGraph,
                      weights: WeightConfig | None = None, c: float = DEFAULT_DECAY,
                      k: int | None = None, base: float = DEFAULT_BASE,
                      minted: float | None = None) -> ReputationScore:
    """Normalized reputation of the contributors of ``graph_k`` at period ``k``.

    Contributors are the persistent users owning at least one epoch node.
    ``minted`` overrides ``mint_total(graph_k)`` (per-period minting).
    """
    check_decay(c)
    k = len(series) if k is None else k
    contributors = graph_k.contributors()
    if not contributors:
        raise NoContributors(f"period {k} has no contributors")
    s_star = {u: aggregate_score(series, u, c, k) for u in contributors}
    total = sum(s_star.values())
    if not total > 0.0:
        raise ZeroTotalScore(f"period {k}: contributors carry no score")
    m = mint_total(graph_k, weights) if minted is None else minted
    budget = m + base
    scores = {u: v / total * budget for u, v in s_star.items()}
    return ReputationScore(k, scores, s_star, m, base)


def score_report(reports: Iterable[ReputationScore]) -> str:
    """CSV ``period,node_id,s_star,s_normalized`` with 12 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["period", "node_id", "s_star", "s_normalized"])
    for rep in reports:
        for node, score in rep.scores.items():
            writer.writerow([rep.period, node, f"{rep.s_star[node]:.12g}", f"{score:.12g}"])
    return buf.getvalue()


class CredRank(BaseEstimator):
    """Fit on a list of :class:`ContributionEvent`; exposes per-period reputation.

    Fitted attributes: ``sequence_``, ``series_``, ``reports_`` (one
    :class:`ReputationScore` per period holding contributors) and
    ``reputation_`` (scores at the last period).
    """

    def __init__(self, alpha=DEFAULT_ALPHA, decay=DEFAULT_DECAY, base=DEFAULT_BASE,
                 tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, weights=None, period=WEEK,
                 n_epochs=None, origin=None, webbing=False, cumulative_mint=True,
                 anchor_kinds=("user", "courselet"), threads=1):
        self.alpha = alpha
        self.decay = decay
        self.base = base
        self.tol = tol
        self.max_iter = max_iter
        self.weights = weights
        self.period = period
        self.n_epochs = n_epochs
        self.origin = origin
        self.webbing = webbing
        self.cumulative_mint = cumulative_mint
        self.anchor_kinds = anchor_kinds
        self.threads = threads

    def _epoch_config(self, events):
        if self.n_epochs is None:
            return EpochConfig.covering(events, self.period, self.origin)
        check_positive_int(self.n_epochs, "n_epochs")
        origin = self.origin
        if origin is None:
            origin = min((ev.ts for ev in events), default=0)
        return EpochConfig(origin, self.period, self.n_epochs)

    def fit(self, X: list[ContributionEvent], y=None):
        check_alpha(self.alpha)
        check_decay(self.decay, "decay")
        check_tol(self.tol)
        events = list(X)
        weights = self.weights or WeightConfig()
        self.sequence_ = build_epoch_sequence(events, self._epoch_config(events), weights,
                                              self.webbing)
        self.series_ = epoch_scores(self.sequence_, self.alpha, self.tol, self.max_iter,
                                    self.anchor_kinds, threads=self.threads)
        self.reports_ = []
        for epoch in self.sequence_:
            if not epoch.graph.contributors():
                continue
            m = period_mint(self.sequence_, epoch.k, weights, self.cumulative_mint)
            self.reports_.append(reputation_scores(self.series_, epoch.graph, weights,
                                                   self.decay, epoch.k, self.base, minted=m))
        self.reputation_ = dict(self.reports_[-1].scores) if self.reports_ else {}
        return self

    def transform(self, X):
        """Final-period reputation of the user node ids in ``X`` (0 when absent)."""
        if not hasattr(self, "reputation_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("CredRank is not fitted yet")
        return np.array([self.reputation_.get(u, 0.0) for u in X])

"""PageRank on contribution graphs.

The walk is written in row-vector form, ``pr <- alpha*s + (1-alpha)*pr*P~``,
where ``P`` is the row-normalized weight matrix and ``P~`` sends the mass of
dangling nodes (no out-weight) back to the seed ``s``.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from .exceptions import EmptyAnchorSet, InvalidSeed, NoConvergence, TooLarge, ZeroAnchorMass
from .graph import ContributionGraph, NodeKind
from .validation import check_alpha, check_positive_int, check_tol

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.15
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
DENSE_LIMIT = 2000
DEFAULT_ANCHOR_KINDS = (NodeKind.USER, NodeKind.COURSELET)


@dataclass
class TransitionOperator:
    nodes: tuple[str, ...]
    kinds: tuple[NodeKind, ...]
    matrix: sp.csr_matrix
    dangling: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {n: i for i, n in enumerate(self.nodes)}
        # column-major view for the x @ P products
        self._transpose = self.matrix.T.tocsr()

    def __len__(self):
        return len(self.nodes)

    def probability(self, source: str, target: str) -> float:
        return float(self.matrix[self.index[source], self.index[target]])

    def row(self, node: str) -> dict[str, float]:
        i = self.index[node]
        start, stop = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return {self.nodes[j]: float(v) for j, v in
                zip(self.matrix.indices[start:stop], self.matrix.data[start:stop])}

    def step(self, x: np.ndarray) -> np.ndarray:
        """``x @ P`` without the dangling correction."""
        return self._transpose @ x

    def dense(self, seed: np.ndarray) -> np.ndarray:
        """``P~`` as a dense array (dangling rows replaced by ``seed``)."""
        P = self.matrix.toarray()
        P[self.dangling] = seed
        return P


def transition_operator(graph: ContributionGraph) -> TransitionOperator:
    """Row-stochastic ``P(i, j) = w_ij / d_i``; rows with ``d_i = 0`` are dangling."""
    nodes = tuple(graph.nodes)
    index = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    rows = np.fromiter((index[s] for s, _ in graph.edges), dtype=np.int64, count=len(graph.edges))
    cols = np.fromiter((index[t] for _, t in graph.edges), dtype=np.int64, count=len(graph.edges))
    data = np.fromiter(graph.edges.values(), dtype=float, count=len(graph.edges))
    W = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    W.sum_duplicates()
    degree = np.asarray(W.sum(axis=1)).ravel()
    dangling = degree <= 0.0
    inv = np.zeros(n)
    inv[~dangling] = 1.0 / degree[~dangling]
    P = sp.diags(inv) @ W
    P = sp.csr_matrix(P)
    P.eliminate_zeros()
    P.sort_indices()
    kinds = tuple(graph.nodes[v] for v in nodes)
    return TransitionOperator(nodes, kinds, P, dangling)


@dataclass
class RankVector:
    nodes: tuple[str, ...]
    scores: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    kinds: tuple[NodeKind, ...] | None = None

    def __post_init__(self):
        self._index = {n: i for i, n in enumerate(self.nodes)}

    def __getitem__(self, node: str) -> float:
        return float(self.scores[self._index[node]])

    def __contains__(self, node) -> bool:
        return node in self._index

    def __len__(self):
        return len(self.nodes)

    def get(self, node: str, default: float = 0.0) -> float:
        i = self._index.get(node)
        return default if i is None else float(self.scores[i])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.nodes, self.scores.tolist()))

    def to_csv(self, fh=None) -> str | None:
        """``node_id,kind,score`` with 12 significant digits."""
        buf = fh if fh is not None else io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["node_id", "kind", "score"])
        kinds = self.kinds or ("",) * len(self.nodes)
        for node, kind, score in zip(self.nodes, kinds, self.scores):
            writer.writerow([node, getattr(kind, "value", kind), f"{score:.12g}"])
        return buf.getvalue() if fh is None else None


def uniform_seed(operator: TransitionOperator) -> np.ndarray:
    n = len(operator)
    return np.full(n, 1.0 / n) if n else np.zeros(0)


def _seed_array(operator: TransitionOperator, seed) -> np.ndarray:
    if seed is None:
        return uniform_seed(operator)
    if isinstance(seed, Mapping):
        s = np.zeros(len(operator))
        for node, mass in seed.items():
            try:
                s[operator.index[node]] = mass
            except KeyError:
                raise InvalidSeed(f"seed node {node!r} is not in the graph") from None
    else:
        s = np.asarray(seed, dtype=float)
        if s.shape != (len(operator),):
            raise InvalidSeed(f"seed has shape {s.shape}, expected ({len(operator)},)")
    if len(s) and (np.any(s < 0) or not np.all(np.isfinite(s))):
        raise InvalidSeed("seed entries must be finite and non-negative")
    if len(s) and abs(s.sum() - 1.0) > 1e-12:
        raise InvalidSeed(f"seed must sum to 1, sums to {s.sum()!r}")
    return s


def _apply(operator: TransitionOperator, x: np.ndarray, s: np.ndarray, alpha: float) -> np.ndarray:
    dangling_mass = x[operator.dangling].sum()
    return alpha * s + (1.0 - alpha) * (operator.step(x) + dangling_mass * s)


def residual(operator: TransitionOperator, pr, seed=None, alpha: float = DEFAULT_ALPHA) -> float:
    """``||pr - (alpha*s + (1-alpha)*pr*P~)||_1``."""
    x = pr.scores if isinstance(pr, RankVector) else np.asarray(pr, dtype=float)
    s = _seed_array(operator, seed)
    return float(np.abs(x - _apply(operator, x, s, alpha)).sum())


def pagerank(operator: TransitionOperator, seed=None, alpha: float = DEFAULT_ALPHA,
             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
             x0=None) -> RankVector:
    """Stationary distribution by power iteration.

    ``seed`` is a node->mass mapping or an array aligned with
    ``operator.nodes`` (uniform when omitted). Iteration stops once the L1 step
    ``||x_{t+1} - x_t||_1`` drops to ``tol``; since the map contracts by
    ``1 - alpha`` the returned vector's fixed-point residual is at most that.
    Raises :class:`NoConvergence` after ``max_iter`` steps.
    """
    check_alpha(alpha)
    check_tol(tol)
    check_positive_int(max_iter, "max_iter")
    s = _seed_array(operator, seed)
    n = len(operator)
    if n == 0:
        return RankVector((), np.zeros(0), 0.0, 0, ())
    x = s.copy() if x0 is None else np.asarray(x0, dtype=float) / np.sum(x0)
    delta = np.inf
    previous = np.inf
    for it in range(1, max_iter + 1):
        x_new = _apply(operator, x, s, alpha)
        delta = float(np.abs(x_new - x).sum())
        x = x_new
        if delta <= tol:
            break
        if it > 1 and alpha >= 0.1 and delta > previous * (1 + 1e-9):
            logger.warning("pagerank residual rose at iteration %d (%.3g > %.3g)", it, delta, previous)
        previous = delta
    else:
        raise NoConvergence(
            f"pagerank did not reach tol={tol} in {max_iter} iterations (residual {delta:.3g})",
            residual=delta, iterations=max_iter,
            partial=RankVector(operator.nodes, x, delta, max_iter, operator.kinds))
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    return RankVector(operator.nodes, x, delta, it, operator.kinds)


def pagerank_direct(operator: TransitionOperator, seed=None,
                    alpha: float = DEFAULT_ALPHA) -> RankVector:
    """Dense solve of ``pr (I - (1-alpha) P~) = alpha s``. Test oracle."""
    check_alpha(alpha)
    n = len(operator)
    if n > DENSE_LIMIT:
        raise TooLarge(f"{n} nodes exceeds the dense limit of {DENSE_LIMIT}")
    s = _seed_array(operator, seed)
    if n == 0:
        return RankVector((), np.zeros(0), 0.0, 0, ())
    A = np.eye(n) - (1.0 - alpha) * operator.dense(s)
    x = np.linalg.solve(A.T, alpha * s)
    res = float(np.abs(x - _apply(operator, x, s, alpha)).sum())
    return RankVector(operator.nodes, x, res, 0, operator.kinds)


def anchor_nodes(operator: TransitionOperator,
                 kinds: Iterable[NodeKind] = DEFAULT_ANCHOR_KINDS) -> set[str]:
    wanted = {NodeKind(k) for k in kinds}
    return {n for n, k in zip(operator.nodes, operator.kinds) if k in wanted}


def personalized_seed(base_rank: RankVector, anchor_set: Iterable[str]) -> dict[str, float]:
    """Restart distribution proportional to ``base_rank`` on the anchors, zero elsewhere."""
    anchors = set(anchor_set)
    if not anchors:
        raise EmptyAnchorSet("anchor set is empty")
    missing = anchors.difference(base_rank.nodes)
    if missing:
        raise InvalidSeed(f"anchors not covered by the base rank: {sorted(missing)[:5]}")
    mask = np.fromiter((n in anchors for n in base_rank.nodes), dtype=bool, count=len(base_rank))
    mass = np.where(mask, base_rank.scores, 0.0)
    total = mass.sum()
    if not total > 0.0:
        raise ZeroAnchorMass("anchor nodes carry no rank mass")
    return dict(zip(base_rank.nodes, (mass / total).tolist()))


def personalized_pagerank(operator: TransitionOperator, anchors: Iterable[str] | None = None,
                          alpha: float = DEFAULT_ALPHA, tol: float = DEFAULT_TOL,
                          max_iter: int = DEFAULT_MAX_ITER, method: str = "power") -> RankVector:
    """Two passes: uniform-seed PageRank, then PageRank restarted on the anchors."""
    solve = _solver(method, tol, max_iter)
    if anchors is None:
        anchors = anchor_nodes(operator)
    first = solve(operator, None, alpha)
    return solve(operator, personalized_seed(first, anchors), alpha)


def _solver(method, tol, max_iter):
    if method == "power":
        return lambda op, s, a: pagerank(op, s, a, tol=tol, max_iter=max_iter)
    if method == "direct":
        return pagerank_direct
    raise ValueError(f"method must be 'power' or 'direct', got {method!r}")


class PageRank(BaseEstimator):
    """Estimator wrapper: ``fit`` a :class:`ContributionGraph`, read ``scores_``.

    With ``personalized=True`` (the default) the restart distribution is
    re-derived from a first uniform pass and concentrated on nodes of
    ``anchor_kinds``.
    """

    def __init__(self, alpha=DEFAULT_ALPHA, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                 personalized=True, anchor_kinds=("user", "courselet"), method="power"):
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter
        self.personalized = personalized
        self.anchor_kinds = anchor_kinds
        self.method = method

    def fit(self, X, y=None):
        check_alpha(self.alpha)
        check_tol(self.tol)
        check_positive_int(self.max_iter, "max_iter")
        op = X if isinstance(X, TransitionOperator) else transition_operator(X)
        if self.personalized:
            rank = personalized_pagerank(op, anchor_nodes(op, self.anchor_kinds), self.alpha,
                                         self.tol, self.max_iter, self.method)
        else:
            rank = _solver(self.method, self.tol, self.max_iter)(op, None, self.alpha)
        self.operator_ = op
        self.rank_ = rank
        self.scores_ = rank.as_dict()
        self.n_iter_ = rank.iterations
        self.residual_ = rank.residual
        return self

    def transform(self, X):
        """Scores of the node ids in ``X`` (0 for nodes outside the graph)."""
        if not hasattr(self, "rank_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("PageRank is not fitted yet")
        return np.array([self.rank_.get(n) for n in X])

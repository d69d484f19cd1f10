"""Contribution graph construction.

Platform activity arrives as timestamped events (a user creates, orders,
reviews or views a courselet). Each event materializes a contribution node
plus the weighted edges of the edge-weight table, giving a directed graph
whose PageRank measures how credit flows from contributions back to the
people who authored them.

For time-resolved scoring the history is cut into fixed-length periods. In
period ``k`` every user who authored something gets an epoch contributor node
``epoch:<user>@k``; authorship edges of that period point at the epoch node
instead of the persistent user, and the epoch node forwards to the user.

Node ids are strings ``"<kind>:<key>"``, e.g. ``user:alice``,
``courselet:CL0``, ``review:e3``, ``epoch:alice@2``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping

from .exceptions import (
    DanglingTarget,
    EventOutsideHorizon,
    InvalidEvent,
    InvalidWeights,
    UnknownEdgeKind,
)

logger = logging.getLogger(__name__)

WEEK = 7 * 24 * 3600


class NodeKind(str, Enum):
    USER = "user"
    COURSELET = "courselet"
    ORDER = "order"
    REVIEW = "review"
    VIEW = "view"
    EPOCH = "epoch"


class EventKind(str, Enum):
    COURSELET = "courselet"  # create a courselet (target is the new courselet key)
    ORDER = "order"
    REVIEW = "review"
    VIEW = "view"

    @property
    def node_kind(self) -> NodeKind:
        return NodeKind(self.value)


U, C, O, R, V, E = (NodeKind.USER, NodeKind.COURSELET, NodeKind.ORDER,
                    NodeKind.REVIEW, NodeKind.VIEW, NodeKind.EPOCH)

DEFAULT_EDGE_WEIGHTS = {
    (V, C): 1e-5,
    (C, U): 1.0,
    (U, C): 1 / 8,
    (O, C): 5.0,
    (C, O): 1 / 16,
    (U, O): 1 / 8,
    (O, U): 1.0,
    (U, R): 1 / 8,
    (R, U): 1.0,
    (R, C): 2.0,
    (C, R): 1 / 16,
    (E, U): 1.0,
    (E, E): 1.0,  # only used when webbing is enabled
}

DEFAULT_MINT_WEIGHTS = {C: 10.0, R: 1.0, O: 1.0, V: 0.0, U: 0.0, E: 0.0}

# Edge templates per event, as (source role, target role). "node" is the
# contribution node, "actor" the acting user, "target" the courselet acted on.
# (node, actor) is the authorship edge.
REQUIRED_EDGES = {
    EventKind.COURSELET: (("node", "actor"), ("actor", "node")),
    EventKind.ORDER: (("actor", "node"), ("node", "actor"), ("node", "target"), ("target", "node")),
    EventKind.REVIEW: (("actor", "node"), ("node", "actor"), ("node", "target"), ("target", "node")),
    EventKind.VIEW: (("node", "target"),),
}
# emitted only when the weight table carries an entry for them
OPTIONAL_EDGES = {
    EventKind.COURSELET: (),
    EventKind.ORDER: (),
    EventKind.REVIEW: (),
    EventKind.VIEW: (("actor", "node"), ("node", "actor"), ("target", "node")),
}
AUTHORSHIP = ("node", "actor")


def node_id(kind: NodeKind, key: str) -> str:
    return f"{NodeKind(kind).value}:{key}"


def epoch_node_id(user_node: str, k: int) -> str:
    return f"epoch:{user_node.split(':', 1)[1]}@{k}"


def _parse_weight(text: str) -> float:
    text = text.strip()
    try:
        value = float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise InvalidWeights(f"not a number: {text!r}") from None
    return value


@dataclass(frozen=True)
class WeightConfig:
    """Edge weights keyed by ``(source kind, target kind)`` and per-kind mint weights."""

    edges: Mapping[tuple[NodeKind, NodeKind], float] = field(
        default_factory=lambda: dict(DEFAULT_EDGE_WEIGHTS))
    mint: Mapping[NodeKind, float] = field(default_factory=lambda: dict(DEFAULT_MINT_WEIGHTS))

    def __post_init__(self):
        edges = {(NodeKind(s), NodeKind(t)): float(w) for (s, t), w in self.edges.items()}
        mint = {NodeKind(k): float(w) for k, w in self.mint.items()}
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mint", mint)
        self.validate()

    def validate(self) -> None:
        for key, w in list(self.edges.items()) + list(self.mint.items()):
            if not (w >= 0.0) or w == float("inf"):
                raise InvalidWeights(f"weight for {key} must be finite and >= 0, got {w}")

    def edge(self, source: NodeKind, target: NodeKind) -> float:
        try:
            return self.edges[(source, target)]
        except KeyError:
            raise UnknownEdgeKind(
                f"no edge weight for ({source.value}, {target.value})") from None

    def mint_weight(self, kind: NodeKind) -> float:
        return self.mint.get(kind, 0.0)

    @classmethod
    def from_text(cls, text: str, base: WeightConfig | None = None) -> WeightConfig:
        """Parse ``edge.<src>.<dst> = w`` / ``mint.<kind> = w`` lines over ``base``.

        Values may be decimals or fractions (``1/8``). ``#`` starts a comment.
        """
        base = base or cls()
        edges, mint = dict(base.edges), dict(base.mint)
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidWeights(f"line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            parts = key.split(".")
            try:
                kinds = [NodeKind(p) for p in parts[1:]]
            except ValueError:
                raise InvalidWeights(f"line {lineno}: unknown node kind in {key!r}") from None
            try:
                w = _parse_weight(value)
            except InvalidWeights as exc:
                raise InvalidWeights(f"line {lineno}: {exc}") from None
            if w < 0 or w != w:
                raise InvalidWeights(f"line {lineno}: negative weight {key} = {value}")
            if parts[0] == "edge" and len(kinds) == 2:
                edges[(kinds[0], kinds[1])] = w
            elif parts[0] == "mint" and len(kinds) == 1:
                mint[kinds[0]] = w
            else:
                raise InvalidWeights(f"line {lineno}: unknown key {key!r}")
        return cls(edges, mint)

    @classmethod
    def from_file(cls, path) -> WeightConfig:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        lines = [f"edge.{s.value}.{t.value} = {w!r}" for (s, t), w in self.edges.items()]
        lines += [f"mint.{k.value} = {w!r}" for k, w in self.mint.items()]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ContributionEvent:
    kind: EventKind
    actor: str
    target: str
    ts: int
    id: str | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", EventKind(self.kind))
        except ValueError:
            raise InvalidEvent(f"unknown event kind {self.kind!r}") from None
        for name in ("actor", "target"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise InvalidEvent(f"{name} must be a non-empty string, got {value!r}")
        if isinstance(self.ts, bool) or not isinstance(self.ts, int):
            raise InvalidEvent(f"ts must be integer seconds, got {self.ts!r}")
        if self.id is not None and (not isinstance(self.id, str) or not self.id):
            raise InvalidEvent(f"id must be a non-empty string, got {self.id!r}")

    @classmethod
    def from_dict(cls, data: Mapping) -> ContributionEvent:
        if not isinstance(data, Mapping):
            raise InvalidEvent("event must be a JSON object")
        extra = set(data) - {"kind", "actor", "target", "ts", "id"}
        if extra:
            raise InvalidEvent(f"unknown field(s) {sorted(extra)}")
        missing = {"kind", "actor", "target", "ts"} - set(data)
        if missing:
            raise InvalidEvent(f"missing field(s) {sorted(missing)}")
        return cls(data["kind"], data["actor"], data["target"], data["ts"], data.get("id"))

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "actor": self.actor, "target": self.target, "ts": self.ts}
        if self.id is not None:
            out["id"] = self.id
        return out


def parse_events(lines: Iterable[str]) -> list[ContributionEvent]:
    """Parse a JSONL event log. Errors carry the 1-based line number."""
    events = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            events.append(ContributionEvent.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise InvalidEvent(f"line {lineno}: invalid JSON ({exc.msg})") from None
        except InvalidEvent as exc:
            raise InvalidEvent(f"line {lineno}: {exc}") from None
    return events


def read_events(path) -> list[ContributionEvent]:
    with open(path, encoding="utf-8") as fh:
        return parse_events(fh)


def write_events(events: Iterable[ContributionEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")


@dataclass
class ContributionGraph:
    """Directed weighted graph over users, contributions and epoch nodes.

    Treat instances as read-only once built; the builders below are the only
    writers.
    """

    nodes: dict[str, NodeKind] = field(default_factory=dict)
    edges: dict[tuple[str, str], float] = field(default_factory=dict)
    horizon: int | None = None
    # contribution node -> authoring user nodes, in order of first authorship
    authors: dict[str, tuple[str, ...]] = field(default_factory=dict)
    # epoch node -> (user node, period index)
    owners: dict[str, tuple[str, int]] = field(default_factory=dict)

    def __len__(self):
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def kind(self, node: str) -> NodeKind:
        return self.nodes[node]

    def nodes_of(self, *kinds: NodeKind) -> list[str]:
        kinds = {NodeKind(k) for k in kinds}
        return [n for n, k in self.nodes.items() if k in kinds]

    def out_edges(self, node: str) -> dict[str, float]:
        return {t: w for (s, t), w in self.edges.items() if s == node}

    def epoch_nodes_of(self, user_node: str) -> dict[int, str]:
        return {k: n for n, (u, k) in self.owners.items() if u == user_node}

    def contributors(self) -> list[str]:
        """Persistent users owning at least one epoch node, in node order."""
        owning = {u for u, _ in self.owners.values()}
        return [n for n in self.nodes if n in owning]

    def copy(self) -> ContributionGraph:
        return ContributionGraph(dict(self.nodes), dict(self.edges), self.horizon,
                                 dict(self.authors), dict(self.owners))

    def to_dict(self) -> dict:
        return {
            "nodes": [[n, k.value] for n, k in self.nodes.items()],
            "edges": [[s, t, w] for (s, t), w in self.edges.items()],
            "horizon": self.horizon,
            "authors": [[n, list(a)] for n, a in self.authors.items()],
            "owners": [[n, u, k] for n, (u, k) in self.owners.items()],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ContributionGraph:
        return cls(
            {n: NodeKind(k) for n, k in data["nodes"]},
            {(s, t): float(w) for s, t, w in data["edges"]},
            data["horizon"],
            {n: tuple(a) for n, a in data["authors"]},
            {n: (u, int(k)) for n, u, k in data["owners"]},
        )

    def to_json(self) -> str:
        """Canonical serialization; equal graphs give identical strings."""
        return json.dumps(self.to_dict(), separators=(",", ":"))


class _Builder:
    """Single-writer accumulator shared by the raw and the epoch builders."""

    def __init__(self, weights: WeightConfig, epoch_routing: bool, webbing: bool = False):
        self.weights = weights
        self.graph = ContributionGraph()
        self.epoch_routing = epoch_routing
        self.webbing = webbing
        self._last_epoch: dict[str, str] = {}

    def add_node(self, node: str, kind: NodeKind) -> bool:
        if node in self.graph.nodes:
            return False
        self.graph.nodes[node] = kind
        return True

    def add_edge(self, source: str, target: str, weight: float) -> None:
        key = (source, target)
        self.graph.edges[key] = self.graph.edges.get(key, 0.0) + weight

    def epoch_node(self, user: str, k: int) -> str:
        node = epoch_node_id(user, k)
        if self.add_node(node, NodeKind.EPOCH):
            self.graph.owners[node] = (user, k)
            self.add_edge(node, user, self.weights.edge(NodeKind.EPOCH, NodeKind.USER))
            prev = self._last_epoch.get(user)
            if self.webbing and prev is not None:
                w = self.weights.edge(NodeKind.EPOCH, NodeKind.EPOCH)
                self.add_edge(prev, node, w)
                self.add_edge(node, prev, w)
            self._last_epoch[user] = node
        return node

    def apply(self, event: ContributionEvent, index: int, k: int | None = None) -> str:
        """Materialize one event; returns the contribution node id."""
        actor = node_id(NodeKind.USER, event.actor)
        kind = event.kind.node_kind
        if event.kind is EventKind.COURSELET:
            node = node_id(kind, event.target)
            target = None
        else:
            node = node_id(kind, event.id or f"e{index}")
            target = node_id(NodeKind.COURSELET, event.target)
            if self.graph.nodes.get(target) is not NodeKind.COURSELET:
                raise DanglingTarget(
                    f"event {index} ({event.kind.value} by {event.actor}) targets "
                    f"{target}, which was never created")
        if node in self.graph.nodes and self.graph.nodes[node] is not kind:
            raise InvalidEvent(f"event {index}: node {node} already exists with another kind")

        roles = {"actor": (actor, NodeKind.USER), "node": (node, kind)}
        if target is not None:
            roles["target"] = (target, NodeKind.COURSELET)
        # resolve every weight before touching the graph so a bad event leaves it intact
        planned = []
        optional = OPTIONAL_EDGES[event.kind]
        for pair in REQUIRED_EDGES[event.kind] + optional:
            (s, sk), (t, tk) = roles[pair[0]], roles[pair[1]]
            if pair in optional and (sk, tk) not in self.weights.edges:
                continue
            planned.append((pair, s, t, self.weights.edge(sk, tk)))

        self.add_node(actor, NodeKind.USER)
        self.add_node(node, kind)
        for pair, s, t, w in planned:
            if pair == AUTHORSHIP:
                authors = self.graph.authors.get(node, ())
                if actor not in authors:
                    self.graph.authors[node] = authors + (actor,)
                if self.epoch_routing:
                    t = self.epoch_node(actor, k)
            self.add_edge(s, t, w)
        ts = event.ts
        if self.graph.horizon is None or ts > self.graph.horizon:
            self.graph.horizon = ts
        return node


def _ordered(events: Iterable[ContributionEvent]) -> list[tuple[int, ContributionEvent]]:
    # stable: ties keep input order
    return sorted(enumerate(events), key=lambda pair: pair[1].ts)


def ingest_events(events: Iterable[ContributionEvent],
                  weights: WeightConfig | None = None) -> ContributionGraph:
    """Build the raw (non-temporal) contribution graph.

    Events are stably sorted by timestamp. Repeated ``(source, target)`` pairs
    accumulate into one edge by summing weights. Contribution nodes without an
    explicit ``id`` are keyed ``e<i>`` with ``i`` the event's input position.
    """
    weights = weights or WeightConfig()
    builder = _Builder(weights, epoch_routing=False)
    for index, event in _ordered(events):
        builder.apply(event, index)
    return builder.graph


@dataclass(frozen=True)
class EpochConfig:
    origin: int = 0
    period: int = WEEK
    count: int = 1

    def __post_init__(self):
        if isinstance(self.period, bool) or not isinstance(self.period, int) or self.period <= 0:
            raise ValueError(f"period must be a positive integer, got {self.period!r}")
        if isinstance(self.count, bool) or not isinstance(self.count, int) or self.count < 1:
            raise ValueError(f"count must be a positive integer, got {self.count!r}")

    def period_of(self, ts: int) -> int:
        """1-based period index containing ``ts``."""
        if ts < self.origin:
            raise InvalidEvent(f"timestamp {ts} precedes the epoch origin {self.origin}")
        return (ts - self.origin) // self.period + 1

    @classmethod
    def covering(cls, events: Iterable[ContributionEvent], period: int = WEEK,
                 origin: int | None = None) -> EpochConfig:
        """Smallest config whose periods cover every event."""
        stamps = [ev.ts for ev in events]
        if origin is None:
            origin = min(stamps, default=0)
        count = max(((ts - origin) // period + 1 for ts in stamps), default=1)
        return cls(origin, period, max(count, 1))


@dataclass
class EpochGraph:
    k: int
    graph: ContributionGraph
    contributions: frozenset[str]
    epoch_nodes: frozenset[str]
    new_contributions: frozenset[str]
    new_epoch_nodes: frozenset[str]


@dataclass
class EpochGraphSequence:
    config: EpochConfig
    epochs: list[EpochGraph]

    def __len__(self):
        return len(self.epochs)

    def __iter__(self):
        return iter(self.epochs)

    def __getitem__(self, k: int) -> EpochGraph:
        """Period ``k``, 1-based."""
        if not 1 <= k <= len(self.epochs):
            raise IndexError(f"period {k} outside 1..{len(self.epochs)}")
        return self.epochs[k - 1]

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {"origin": cfg.origin, "period": cfg.period, "count": cfg.count},
            "epochs": [
                {
                    "k": ep.k,
                    "graph": ep.graph.to_dict(),
                    "contributions": sorted(ep.contributions),
                    "epoch_nodes": sorted(ep.epoch_nodes),
                    "new_contributions": sorted(ep.new_contributions),
                    "new_epoch_nodes": sorted(ep.new_epoch_nodes),
                }
                for ep in self.epochs
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> EpochGraphSequence:
        epochs = [
            EpochGraph(
                e["k"], ContributionGraph.from_dict(e["graph"]),
                frozenset(e["contributions"]), frozenset(e["epoch_nodes"]),
                frozenset(e["new_contributions"]), frozenset(e["new_epoch_nodes"]),
            )
            for e in data["epochs"]
        ]
        return cls(EpochConfig(**data["config"]), epochs)


def build_epoch_sequence(events: Iterable[ContributionEvent], epochs: EpochConfig,
                         weights: WeightConfig | None = None,
                         webbing: bool = False) -> EpochGraphSequence:
    """Build ``G_1 .. G_T``, each the union of all periods up to ``k``.

    Authorship edges of a period-``k`` event run from the contribution to the
    author's epoch node ``epoch:<user>@k`` (weight of the ``(kind, user)``
    entry); each epoch node has one ``(epoch, user)`` edge to its persistent
    user. With ``webbing`` consecutive epoch nodes of a user are linked both
    ways with the ``(epoch, epoch)`` weight.
    """
    weights = weights or WeightConfig()
    ordered = _ordered(events)
    by_period: dict[int, list[tuple[int, ContributionEvent]]] = {}
    for index, event in ordered:
        k = epochs.period_of(event.ts)
        if k > epochs.count:
            raise EventOutsideHorizon(
                f"event {index} at ts={event.ts} falls in period {k} > T={epochs.count}")
        by_period.setdefault(k, []).append((index, event))

    builder = _Builder(weights, epoch_routing=True, webbing=webbing)
    contributions: set[str] = set()
    epoch_nodes: set[str] = set()
    out = []
    for k in range(1, epochs.count + 1):
        before_nodes = set(builder.graph.nodes)
        new_contrib = set()
        for index, event in by_period.get(k, ()):
            node = builder.apply(event, index, k)
            if node not in contributions:
                new_contrib.add(node)
        new_epoch = {n for n in builder.graph.owners if n not in before_nodes}
        contributions |= new_contrib
        epoch_nodes |= new_epoch
        out.append(EpochGraph(k, builder.graph.copy(), frozenset(contributions),
                              frozenset(epoch_nodes), frozenset(new_contrib),
                              frozenset(new_epoch)))
        logger.debug("period %d: %d nodes, %d edges", k, len(builder.graph), builder.graph.n_edges)
    return EpochGraphSequence(epochs, out)

"""Contribution-graph reputation, token payouts and a staking peer-review game."""

__version__ = "0.1.0"

from .auction import (
    Accounts,
    AuctionConfig,
    AuctionRound,
    Bid,
    Outcome,
    Phase,
    Settlement,
    Vote,
    decide,
    open_auction,
    profit_ratio,
    replay_journal,
    split_stakes,
)
from .credrank import (
    CredRank,
    EpochScoreSeries,
    ReputationScore,
    aggregate_score,
    epoch_scores,
    mint_total,
    reputation_scores,
    score_report,
)
from .graph import (
    ContributionEvent,
    ContributionGraph,
    EpochConfig,
    EpochGraphSequence,
    NodeKind,
    WeightConfig,
    build_epoch_sequence,
    ingest_events,
    parse_events,
    read_events,
)
from .ledger import (
    Ledger,
    PayoutPolicy,
    Strategy,
    apply_payout,
    payout_balanced,
    payout_immediate,
    payout_recent,
)
from .rank import PageRank, RankVector, pagerank, personalized_pagerank, transition_operator
from .simulation import (
    SimulationConfig,
    SimulationReport,
    init_stakes,
    play_round,
    ppv,
    run_grid,
    run_simulation,
    sharpe,
)
from .tokens import SCALE, tokens

__all__ = [
    "Accounts", "AuctionConfig", "AuctionRound", "Bid", "ContributionEvent", "ContributionGraph",
    "CredRank", "EpochConfig", "EpochGraphSequence", "EpochScoreSeries", "Ledger", "NodeKind",
    "Outcome", "PageRank", "PayoutPolicy", "Phase", "RankVector", "ReputationScore", "SCALE",
    "Settlement", "SimulationConfig", "SimulationReport", "Strategy", "Vote", "WeightConfig",
    "aggregate_score", "apply_payout", "build_epoch_sequence", "decide", "epoch_scores",
    "ingest_events", "init_stakes", "mint_total", "open_auction", "pagerank", "parse_events",
    "payout_balanced", "payout_immediate", "payout_recent", "personalized_pagerank", "play_round",
    "ppv", "profit_ratio", "read_events", "replay_journal", "reputation_scores", "run_grid",
    "run_simulation", "score_report", "sharpe", "split_stakes", "tokens", "transition_operator",
]

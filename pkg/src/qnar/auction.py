"""Sealed-bid peer-review auction.

A proposer opens a round by locking a deposit. Stakers commit to a hidden bid
(amount, vote, nonce) by publishing its SHA-256 digest and locking an escrow of
at least the bid amount. After maturity the round moves to the reveal phase;
a reveal that does not open its commitment, or a missing reveal, forfeits the
escrow. Settlement decides by the sign of the bid-weighted vote sum.

Payoff. With winner stake ``SW`` and loser stake ``SL``, losers lose their
bids and each winner receives its bid back plus ``s_i * SL / SW``. So the
winners split the whole pot ``SW + SL`` pro rata, and a winner's profit
divided by ``SW`` equals ``(s_i / SW) * (SL / SW)``, the damped profit ratio
``profit_ratio`` reports. On the 1/2/2 example (two accept, one deny) the
winners receive 5/3 and 10/3 and the denier loses 2.

Rounding. Profits are split with cumulative flooring: the winner at position
``j`` in commit order gets ``floor(SL*C_j/SW) - floor(SL*C_{j-1}/SW)``, where
``C_j`` is the running winner stake. The parts sum to ``SL`` exactly.
"""
from __future__ import annotations

import hashlib
import json
import secrets
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .exceptions import (
    BidExceedsEscrow,
    DepositTooSmall,
    DigestMismatch,
    DuplicateCommit,
    DuplicateReveal,
    InsufficientBalance,
    NoSuchCommitment,
    NotAWinner,
    NoValidReveals,
    ProtocolError,
    WrongPhase,
)
from .tokens import MAX_SUBUNITS, format_tokens, tokens


class Vote(IntEnum):
    ACCEPT = 1
    DENY = -1

    @classmethod
    def parse(cls, value) -> Vote:
        if isinstance(value, Vote):
            return value
        if isinstance(value, str):
            key = value.strip().lower()
            if key in ("accept", "accepted", "+1", "1"):
                return cls.ACCEPT
            if key in ("deny", "denied", "-1"):
                return cls.DENY
        elif value in (1, -1) and not isinstance(value, bool):
            return cls(value)
        raise ValueError(f"not a vote: {value!r}")


class Outcome(str, Enum):
    ACCEPTED = "Accepted"
    DENIED = "Denied"

    @property
    def vote(self) -> Vote:
        return Vote.ACCEPT if self is Outcome.ACCEPTED else Vote.DENY


class Phase(str, Enum):
    OPEN = "Open"
    REVEAL = "Reveal"
    SETTLED = "Settled"


def new_nonce() -> bytes:
    return secrets.token_bytes(32)


@dataclass(frozen=True)
class Bid:
    staker: str
    amount: int
    vote: Vote
    nonce: bytes = b"\x00" * 32

    def __post_init__(self):
        object.__setattr__(self, "vote", Vote.parse(self.vote))
        if "\x00" in self.staker:
            raise ValueError("staker id may not contain NUL")
        if len(self.nonce) != 32:
            raise ValueError("nonce must be 32 bytes")
        if not 0 <= self.amount <= MAX_SUBUNITS:
            raise ValueError(f"bid amount out of range: {self.amount}")

    def encode(self) -> bytes:
        """``staker ‖ 0x00 ‖ amount (16 bytes, big-endian) ‖ vote byte ‖ nonce``."""
        vote_byte = b"\x01" if self.vote is Vote.ACCEPT else b"\xff"
        return (self.staker.encode("utf-8") + b"\x00" + self.amount.to_bytes(16, "big")
                + vote_byte + self.nonce)

    def commitment(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()


def decision_sum(bids: Iterable[Bid]) -> int:
    return sum(b.amount * int(b.vote) for b in bids)


def decide(bids: Sequence[Bid], tie_rule: Outcome = Outcome.DENIED) -> Outcome:
    """Sign of the bid-weighted vote sum; ``tie_rule`` when it is zero."""
    if not bids:
        raise NoValidReveals("no valid reveals to decide on")
    total = decision_sum(bids)
    if total > 0:
        return Outcome.ACCEPTED
    if total < 0:
        return Outcome.DENIED
    return Outcome(tie_rule)


def cumulative_split(total: int, weights: Sequence[int]) -> list[int]:
    """Split ``total`` by cumulative flooring over ``weights`` (exact sum)."""
    wsum = sum(weights)
    if wsum <= 0:
        return [0] * len(weights)
    out, running, prev = [], 0, 0
    for w in weights:
        running += w
        cur = total * running // wsum
        out.append(cur - prev)
        prev = cur
    return out


@dataclass
class StakeSplit:
    winners: tuple[str, ...]
    losers: tuple[str, ...]
    deltas: dict[str, int]
    refunded: bool


def split_stakes(bids: Sequence[Bid], outcome: Outcome, refund: bool = False,
                 damping: bool = True) -> StakeSplit:
    """Zero-sum redistribution of the revealed bids for a given outcome.

    Winners are the stakers who voted ``outcome``. A tie (``refund``), an
    empty winner side or an empty loser side refunds everyone. Without damping
    the losers' stake is split per head instead of per staked token.
    """
    if refund:
        return StakeSplit((), (), {b.staker: 0 for b in bids}, True)
    win = [b for b in bids if b.vote is outcome.vote]
    lose = [b for b in bids if b.vote is not outcome.vote]
    winners = tuple(b.staker for b in win)
    losers = tuple(b.staker for b in lose)
    if not win or not lose:
        return StakeSplit(winners, losers, {b.staker: 0 for b in bids}, not win)
    pot = sum(b.amount for b in lose)
    weights = [b.amount for b in win] if damping else [1] * len(win)
    deltas = {b.staker: -b.amount for b in lose}
    for b, profit in zip(win, cumulative_split(pot, weights)):
        deltas[b.staker] = profit
    deltas = {b.staker: deltas[b.staker] for b in bids}
    return StakeSplit(winners, losers, deltas, False)


@dataclass(frozen=True)
class AuctionConfig:
    maturity: int | None = None
    inflation: int = tokens(1)
    min_deposit: int = 0
    tie_rule: Outcome = Outcome.DENIED
    damping: bool = True
    inflation_mode: str = "per-participant"  # or "total-split"
    deposit_sink: str = "burn"  # or "winners"

    def __post_init__(self):
        object.__setattr__(self, "tie_rule", Outcome(self.tie_rule))
        if self.inflation < 0 or self.min_deposit < 0:
            raise ValueError("inflation and minimum deposit must be non-negative")
        if self.inflation_mode not in ("per-participant", "total-split"):
            raise ValueError(f"unknown inflation mode {self.inflation_mode!r}")
        if self.deposit_sink not in ("burn", "winners"):
            raise ValueError(f"unknown deposit sink {self.deposit_sink!r}")

    def to_dict(self) -> dict:
        return {"maturity": self.maturity, "inflation": format_tokens(self.inflation),
                "min_deposit": format_tokens(self.min_deposit),
                "tie_rule": self.tie_rule.value, "damping": self.damping,
                "inflation_mode": self.inflation_mode, "deposit_sink": self.deposit_sink}

    @classmethod
    def from_dict(cls, data: Mapping) -> AuctionConfig:
        data = dict(data)
        for key in ("inflation", "min_deposit"):
            if key in data:
                data[key] = tokens(str(data[key]))
        return cls(**data)


class Accounts:
    """Free and locked balances with explicit mint/burn counters."""

    def __init__(self, balances: Mapping[str, int] | None = None):
        self.free: dict[str, int] = dict(balances or {})
        self.locked: dict[str, int] = {}
        self.minted = 0
        self.burned = 0
        self._genesis = self.supply()

    def supply(self) -> int:
        return sum(self.free.values()) + sum(self.locked.values())

    def balance(self, account: str) -> int:
        return self.free.get(account, 0) + self.locked.get(account, 0)

    def lock(self, account: str, amount: int) -> None:
        if amount > self.free.get(account, 0):
            raise InsufficientBalance(
                f"{account} has {format_tokens(self.free.get(account, 0))}, "
                f"needs {format_tokens(amount)}")
        if amount:
            self.free[account] -= amount
            self.locked[account] = self.locked.get(account, 0) + amount

    def _take_locked(self, account: str, amount: int) -> None:
        if amount == 0:
            return
        if amount < 0 or amount > self.locked.get(account, 0):
            raise ProtocolError(f"{account} has less than {amount} locked")
        self.locked[account] -= amount
        if not self.locked[account]:
            del self.locked[account]

    def unlock(self, account: str, amount: int) -> None:
        self._take_locked(account, amount)
        self.free[account] = self.free.get(account, 0) + amount

    def burn_locked(self, account: str, amount: int) -> None:
        self._take_locked(account, amount)
        self.burned += amount

    def seize(self, account: str, amount: int) -> int:
        """Remove locked funds without burning them; the caller must :meth:`credit` them."""
        self._take_locked(account, amount)
        return amount

    def credit(self, account: str, amount: int) -> int:
        self.free[account] = self.free.get(account, 0) + amount
        return amount

    def transfer_locked(self, source: str, target: str, amount: int) -> None:
        self._take_locked(source, amount)
        self.free[target] = self.free.get(target, 0) + amount

    def mint(self, account: str, amount: int) -> None:
        self.free[account] = self.free.get(account, 0) + amount
        self.minted += amount

    def conserved(self) -> bool:
        return self.supply() - self._genesis == self.minted - self.burned


@dataclass
class Settlement:
    outcome: Outcome
    decision_sum: int
    winners: tuple[str, ...]
    losers: tuple[str, ...]
    bids: dict[str, int]
    votes: dict[str, Vote]
    deltas: dict[str, int]
    forfeits: dict[str, int]
    minted: dict[str, int]
    deposit: int
    deposit_burned: int
    deposit_paid: dict[str, int]
    refunded: bool

    @property
    def winner_stake(self) -> int:
        return sum(self.bids[s] for s in self.winners)

    @property
    def loser_stake(self) -> int:
        return sum(self.bids[s] for s in self.losers)

    @property
    def ratio(self) -> Fraction:
        """``SL / SW``; zero when nothing was redistributed."""
        if self.refunded or not self.winner_stake:
            return Fraction(0)
        return Fraction(self.loser_stake, self.winner_stake)

    def receipt(self, staker: str) -> int:
        """What a winner gets back from the pot: own bid plus profit."""
        return self.bids[staker] + self.deltas[staker]

    def exact_profit(self, staker: str) -> Fraction:
        """Unrounded profit (``s_i * SL / SW`` for a winner) in subunits."""
        if self.refunded or staker not in self.bids:
            return Fraction(0)
        if staker in self.losers:
            return Fraction(-self.bids[staker])
        return self.bids[staker] * self.ratio

    def burned(self) -> int:
        return sum(self.forfeits.values()) + self.deposit_burned

    def supply_change(self) -> int:
        return sum(self.minted.values()) - self.burned()

    def to_dict(self) -> dict:
        fmt = format_tokens
        return {
            "outcome": self.outcome.value,
            "decision_sum": fmt(self.decision_sum),
            "winners": list(self.winners),
            "losers": list(self.losers),
            "deltas": {s: fmt(v) for s, v in self.deltas.items()},
            "forfeits": {s: fmt(v) for s, v in self.forfeits.items()},
            "minted": {s: fmt(v) for s, v in self.minted.items()},
            "deposit_burned": fmt(self.deposit_burned),
            "deposit_paid": {s: fmt(v) for s, v in self.deposit_paid.items()},
            "refunded": self.refunded,
        }


def profit_ratio(settlement: Settlement, staker: str) -> Fraction:
    """``(s_i / SW) * (SL / SW)``: a winner's profit as a share of the winning stake."""
    if staker not in settlement.winners:
        raise NotAWinner(f"{staker} is not on the winning side")
    sw = settlement.winner_stake
    return Fraction(settlement.bids[staker], sw) * settlement.ratio


class AuctionRound:
    """One proposal's round: Open -> Reveal -> Settled. Single writer."""

    def __init__(self, proposer: str, deposit: int, config: AuctionConfig, accounts: Accounts,
                 ts: int | None = None):
        self.proposer = proposer
        self.deposit = deposit
        self.config = config
        self.accounts = accounts
        self.phase = Phase.OPEN
        self.commitments: dict[str, tuple[bytes, int]] = {}
        self.reveals: dict[str, Bid] = {}
        self.forfeits: dict[str, int] = {}
        self.settlement: Settlement | None = None
        self.journal: list[dict] = []

    def _log(self, phase: Phase, action: str, payload: dict, ts) -> None:
        self.journal.append({"phase": phase.value, "action": action, "payload": payload, "ts": ts})

    def _require(self, phase: Phase, action: str) -> None:
        if self.phase is not phase:
            raise WrongPhase(f"cannot {action} in phase {self.phase.value}")

    def commit(self, staker: str, commitment: bytes, escrow: int, now: int | None = None) -> None:
        """Record a sealed bid and lock ``escrow``, the most the bid may turn out to be."""
        self._require(Phase.OPEN, "commit")
        if now is not None and self.config.maturity is not None and now >= self.config.maturity:
            raise WrongPhase(f"commit at {now} after maturity {self.config.maturity}")
        if staker in self.commitments:
            raise DuplicateCommit(f"{staker} already committed")
        if len(commitment) != 32:
            raise ValueError("commitment must be a 32-byte digest")
        if escrow <= 0:
            raise ValueError("escrow must be positive")
        self.accounts.lock(staker, escrow)
        self.commitments[staker] = (bytes(commitment), escrow)
        self._log(Phase.OPEN, "commit", {"staker": staker, "commitment": commitment.hex(),
                                         "escrow": format_tokens(escrow)}, now)

    def close(self, now: int | None = None) -> None:
        self._require(Phase.OPEN, "close")
        if now is not None and self.config.maturity is not None and now < self.config.maturity:
            raise WrongPhase(f"cannot close at {now} before maturity {self.config.maturity}")
        self._log(Phase.OPEN, "close", {}, now)
        self.phase = Phase.REVEAL

    def reveal(self, staker: str, bid: Bid, now: int | None = None) -> None:
        """Open a commitment. A mismatch forfeits the escrow and raises :class:`DigestMismatch`."""
        self._require(Phase.REVEAL, "reveal")
        if staker not in self.commitments:
            raise NoSuchCommitment(f"{staker} has no commitment")
        if staker in self.reveals or staker in self.forfeits:
            raise DuplicateReveal(f"{staker} already revealed")
        self._log(Phase.REVEAL, "reveal", {"staker": staker, "amount": format_tokens(bid.amount),
                                           "vote": "accept" if bid.vote is Vote.ACCEPT else "deny",
                                           "nonce": bid.nonce.hex()}, now)
        digest, escrow = self.commitments[staker]
        if bid.staker != staker or bid.commitment() != digest:
            self.forfeits[staker] = escrow
            raise DigestMismatch(f"reveal by {staker} does not match its commitment; "
                                 f"{format_tokens(escrow)} forfeited")
        if not 0 < bid.amount <= escrow:
            self.forfeits[staker] = escrow
            raise BidExceedsEscrow(f"{staker} revealed {format_tokens(bid.amount)} against an "
                                   f"escrow of {format_tokens(escrow)}; escrow forfeited")
        self.reveals[staker] = bid

    def valid_bids(self) -> list[Bid]:
        return [self.reveals[s] for s in self.commitments if s in self.reveals]

    def decide(self) -> Outcome:
        return decide(self.valid_bids(), self.config.tie_rule)

    def settle(self, outcome: Outcome | None = None, now: int | None = None) -> Settlement:
        """Close the books. ``outcome`` overrides the vote (exogenous truth)."""
        self._require(Phase.REVEAL, "settle")
        cfg, acc = self.config, self.accounts
        for staker, (_, escrow) in self.commitments.items():
            if staker not in self.reveals and staker not in self.forfeits:
                self.forfeits[staker] = escrow
        bids = self.valid_bids()
        total = decision_sum(bids)
        refund = False
        if outcome is None:
            try:
                outcome = decide(bids, cfg.tie_rule)
            except NoValidReveals:
                outcome = cfg.tie_rule
            refund = total == 0
        outcome = Outcome(outcome)
        split = split_stakes(bids, outcome, refund, cfg.damping)

        for staker, (_, escrow) in self.commitments.items():
            if staker in self.forfeits:
                acc.burn_locked(staker, escrow)
        pot = 0
        for bid in bids:
            _, escrow = self.commitments[bid.staker]
            acc.unlock(bid.staker, escrow - bid.amount)
            delta = split.deltas[bid.staker]
            if delta < 0:
                pot += acc.seize(bid.staker, -delta)
            acc.unlock(bid.staker, bid.amount + min(delta, 0))
        for staker in split.winners:
            pot -= acc.credit(staker, split.deltas[staker])
        assert pot == 0, "stake split must be zero-sum"

        deposit_burned, deposit_paid = 0, {}
        if outcome is Outcome.ACCEPTED:
            acc.unlock(self.proposer, self.deposit)
        elif cfg.deposit_sink == "winners" and split.winners and not split.refunded:
            weights = [self.reveals[s].amount for s in split.winners]
            for staker, part in zip(split.winners, cumulative_split(self.deposit, weights)):
                acc.transfer_locked(self.proposer, staker, part)
                deposit_paid[staker] = part
        else:
            acc.burn_locked(self.proposer, self.deposit)
            deposit_burned = self.deposit

        participants = [b.staker for b in bids]
        if cfg.inflation_mode == "per-participant":
            minted = {s: cfg.inflation for s in participants}
        else:
            minted = dict(zip(participants, cumulative_split(cfg.inflation, [1] * len(participants))))
        for staker, amount in minted.items():
            if amount:
                acc.mint(staker, amount)

        self.settlement = Settlement(
            outcome, total, split.winners, split.losers,
            {b.staker: b.amount for b in bids}, {b.staker: b.vote for b in bids},
            split.deltas, dict(self.forfeits), minted, self.deposit, deposit_burned,
            deposit_paid, split.refunded)
        self._log(Phase.REVEAL, "settle", {"settlement": self.settlement.to_dict()}, now)
        self.phase = Phase.SETTLED
        return self.settlement

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.journal)


def open_auction(proposer: str, deposit: int, config: AuctionConfig, accounts: Accounts,
                 now: int | None = None) -> AuctionRound:
    """Start a round. The deposit is the anti-spam minimum bid and stays locked."""
    if deposit < config.min_deposit:
        raise DepositTooSmall(f"deposit {format_tokens(deposit)} below minimum "
                              f"{format_tokens(config.min_deposit)}")
    genesis = {a: format_tokens(v) for a, v in accounts.free.items()}
    accounts.lock(proposer, deposit)
    rnd = AuctionRound(proposer, deposit, config, accounts)
    rnd._log(Phase.OPEN, "open", {"proposer": proposer, "deposit": format_tokens(deposit),
                                  "balances": genesis, "config": config.to_dict()}, now)
    return rnd


@dataclass
class ReplayResult:
    round: AuctionRound
    settlement: Settlement | None
    journaled: dict | None
    forfeit_lines: list[int] = field(default_factory=list)


class JournalViolation(ProtocolError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


def replay_journal(lines: Iterable[str]) -> ReplayResult:
    """Re-execute a round journal. Any protocol violation raises :class:`JournalViolation`.

    Digest mismatches are not violations: they are recorded as forfeits, as in
    the live round.
    """
    rnd: AuctionRound | None = None
    journaled = None
    forfeit_lines = []
    lineno = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            phase, action, payload = Phase(rec["phase"]), rec["action"], rec.get("payload", {})
            ts = rec.get("ts")
        except (ValueError, KeyError, TypeError) as exc:
            raise JournalViolation(f"malformed record ({exc})", lineno) from None
        try:
            if action == "open":
                if rnd is not None:
                    raise WrongPhase("round already open")
                balances = {a: tokens(str(v)) for a, v in payload["balances"].items()}
                rnd = open_auction(payload["proposer"], tokens(str(payload["deposit"])),
                                   AuctionConfig.from_dict(payload.get("config", {})),
                                   Accounts(balances), ts)
                continue
            if rnd is None:
                raise WrongPhase(f"{action} before open")
            if phase is not rnd.phase:
                raise WrongPhase(f"record says phase {phase.value}, round is in {rnd.phase.value}")
            if action == "commit":
                rnd.commit(payload["staker"], bytes.fromhex(payload["commitment"]),
                           tokens(str(payload["escrow"])), ts)
            elif action == "close":
                rnd.close(ts)
            elif action == "reveal":
                bid = Bid(payload["staker"], tokens(str(payload["amount"])),
                          Vote.parse(payload["vote"]), bytes.fromhex(payload["nonce"]))
                try:
                    rnd.reveal(payload["staker"], bid, ts)
                except DigestMismatch:
                    forfeit_lines.append(lineno)
            elif action == "settle":
                outcome = payload.get("outcome")
                rnd.settle(Outcome(outcome) if outcome else None, ts)
                journaled = payload.get("settlement")
            else:
                raise ProtocolError(f"unknown action {action!r}")
        except ProtocolError as exc:
            if isinstance(exc, JournalViolation):
                raise
            raise JournalViolation(str(exc), lineno) from None
        except (KeyError, ValueError, TypeError) as exc:
            raise JournalViolation(f"bad payload ({exc})", lineno) from None
    if rnd is None:
        raise JournalViolation("empty journal", max(lineno, 1))
    if journaled is not None and rnd.settlement.to_dict() != journaled:
        raise JournalViolation("replayed settlement differs from the journaled one", lineno)
    return ReplayResult(rnd, rnd.settlement, journaled, forfeit_lines)

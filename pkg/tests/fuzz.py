"""Seeded random drivers for the auction state machine.

``fuzz_sequence`` runs one random operation sequence against a live round and
a tiny reference model of which operations are legal, checking phase safety
and token conservation after every step. ``random_settled_round`` plays one
complete randomized round for the conservation checks.
"""
from __future__ import annotations

import random

from qnar.auction import Accounts, AuctionConfig, Bid, Outcome, Phase, Vote, open_auction
from qnar.exceptions import (
    DigestMismatch,
    DuplicateCommit,
    DuplicateReveal,
    InsufficientBalance,
    NoSuchCommitment,
    WrongPhase,
)

STAKERS = ("s0", "s1", "s2", "s3", "s4")
ORDER = {Phase.OPEN: 0, Phase.REVEAL: 1, Phase.SETTLED: 2}


class InvariantBroken(AssertionError):
    pass


def _check(cond, msg):
    if not cond:
        raise InvariantBroken(msg)


def _nonce(rng):
    return rng.getrandbits(256).to_bytes(32, "big")


def _config(rng):
    return AuctionConfig(
        inflation=rng.choice([0, 1, 10**9]),
        tie_rule=rng.choice(list(Outcome)),
        damping=rng.random() < 0.8,
        inflation_mode=rng.choice(["per-participant", "total-split"]),
        deposit_sink=rng.choice(["burn", "winners"]),
    )


def fuzz_sequence(rng: random.Random, max_ops: int = 14) -> None:
    """One random sequence; raises :class:`InvariantBroken` on any violation."""
    acc = Accounts({s: rng.randrange(1, 50) for s in STAKERS} | {"P": 10})
    rnd = open_auction("P", rng.randrange(0, 11), _config(rng), acc)
    bids: dict[str, Bid] = {}
    committed, done = set(), set()
    last = Phase.OPEN
    for _ in range(rng.randrange(1, max_ops + 1)):
        op = rng.choice(["commit", "commit", "close", "reveal", "reveal", "settle"])
        phase = rnd.phase
        staker = rng.choice(STAKERS)
        try:
            if op == "commit":
                amount = rng.randrange(1, 30)
                bid = Bid(staker, amount, rng.choice(list(Vote)), _nonce(rng))
                escrow = amount + rng.choice([0, 0, 1, 5])
                if rng.random() < 0.1:
                    escrow = amount - 1 if amount > 1 else amount
                rnd.commit(staker, bid.commitment(), escrow)
                _check(phase is Phase.OPEN and staker not in committed,
                       f"commit accepted in {phase} / duplicate")
                committed.add(staker)
                bids[staker] = bid
            elif op == "close":
                rnd.close()
                _check(phase is Phase.OPEN, f"close accepted in {phase}")
            elif op == "reveal":
                bid = bids.get(staker, Bid(staker, 1, Vote.ACCEPT))
                tamper = rng.random() < 0.2
                if tamper:
                    bid = Bid(staker, bid.amount + 1, bid.vote, bid.nonce)
                rnd.reveal(staker, bid)
                _check(phase is Phase.REVEAL and staker in committed and staker not in done,
                       "illegal reveal accepted")
                _check(not tamper, "tampered reveal accepted")
                done.add(staker)
            else:
                rnd.settle()
                _check(phase is Phase.REVEAL, f"settle accepted in {phase}")
        except WrongPhase:
            legal = {"commit": Phase.OPEN, "close": Phase.OPEN,
                     "reveal": Phase.REVEAL, "settle": Phase.REVEAL}[op]
            _check(phase is not legal, f"{op} refused in its own phase {phase}")
        except DuplicateCommit:
            _check(staker in committed, "spurious DuplicateCommit")
        except InsufficientBalance:
            _check(op == "commit", "InsufficientBalance outside commit")
        except NoSuchCommitment:
            _check(staker not in committed, "spurious NoSuchCommitment")
        except DuplicateReveal:
            _check(staker in done, "spurious DuplicateReveal")
        except DigestMismatch:
            _check(staker in committed and staker not in done, "mismatch on illegal reveal")
            _check(staker in rnd.forfeits, "mismatch without forfeit")
            done.add(staker)
        _check(ORDER[rnd.phase] >= ORDER[last], "phase moved backwards")
        _check(ORDER[rnd.phase] - ORDER[last] <= 1, "phase skipped")
        last = rnd.phase
        _check((rnd.settlement is not None) == (rnd.phase is Phase.SETTLED),
               "settlement exists iff settled")
        _check(acc.conserved(), "supply changed beyond mint/burn")
        _check(all(v >= 0 for v in acc.free.values()), "negative free balance")
        _check(all(v >= 0 for v in acc.locked.values()), "negative locked balance")
    if rnd.phase is Phase.SETTLED:
        s = rnd.settlement
        _check(sum(s.deltas.values()) == 0, "stake split not zero-sum")
        for w in s.winners:
            _check(s.deltas[w] >= 0, "winner lost money")
        if not s.refunded and s.winners:
            for lo in s.losers:
                _check(s.deltas[lo] == -s.bids[lo], "loser delta is not minus the bid")
        _check(not acc.locked, "funds left locked after settlement")


def random_settled_round(rng: random.Random, inflation: int, forfeits: bool, damping=None):
    """Play one full random round; returns ``(accounts, supply_before, settlement)``."""
    n = rng.randrange(1, 8)
    names = [f"s{i}" for i in range(n)]
    acc = Accounts({s: rng.randrange(1, 10**12) for s in names} | {"P": 10**9})
    before = acc.supply()
    if damping is None:
        damping = rng.random() < 0.8
    cfg = AuctionConfig(inflation=inflation, damping=damping,
                        inflation_mode=rng.choice(["per-participant", "total-split"]))
    rnd = open_auction("P", rng.randrange(0, 10**9), cfg, acc)
    bids = []
    for s in names:
        amount = rng.randrange(1, acc.free[s] + 1)
        bid = Bid(s, amount, rng.choice(list(Vote)), _nonce(rng))
        rnd.commit(s, bid.commitment(), amount)
        bids.append(bid)
    rnd.close()
    for bid in bids:
        if forfeits and rng.random() < 0.15:
            if rng.random() < 0.5:
                continue  # never reveals
            try:
                rnd.reveal(bid.staker, Bid(bid.staker, bid.amount, bid.vote, _nonce(rng)))
            except DigestMismatch:
                pass
            continue
        rnd.reveal(bid.staker, bid)
    return acc, before, rnd.settle()

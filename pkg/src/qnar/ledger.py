"""QNAR -> QLET payouts and the token ledger.

All amounts are integer subunits (see :mod:`qnar.tokens`). Splits of a budget
use the largest-remainder rule, so the parts always add up to the amount being
split and each part is within one subunit of its exact share.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .exceptions import OverflowGuard
from .tokens import MAX_SUBUNITS, SCALE


def split_proportional(total: int, weights: Mapping[str, Fraction | int]) -> dict[str, int]:
    """Split ``total`` subunits proportionally to ``weights``.

    Floors every exact share, then hands the leftover subunits to the largest
    fractional remainders (ties go to the earlier key).
    """
    if total < 0:
        raise ValueError("cannot split a negative amount")
    weights = {k: Fraction(w) for k, w in weights.items()}
    if any(w < 0 for w in weights.values()):
        raise ValueError("weights must be non-negative")
    wsum = sum(weights.values(), Fraction(0))
    if wsum == 0:
        return {k: 0 for k in weights}
    out, remainders = {}, []
    for pos, (k, w) in enumerate(weights.items()):
        exact = total * w / wsum
        out[k] = exact.numerator // exact.denominator
        remainders.append((-(exact - out[k]), pos, k))
    leftover = total - sum(out.values())
    for _, _, k in sorted(remainders)[:leftover]:
        out[k] += 1
    return out


def _check_payouts(payouts: Mapping[str, int]) -> None:
    for account, amount in payouts.items():
        if not isinstance(amount, int) or amount < 0:
            raise ValueError(f"payout for {account!r} must be a non-negative int, got {amount!r}")


def payout_immediate(period_qnar: Mapping[str, int], rate: Fraction | int = 1) -> dict[str, int]:
    """One QLET per QNAR gained this period."""
    _check_payouts(period_qnar)
    rate = Fraction(rate)
    return {a: int(q * rate) for a, q in period_qnar.items()}


def underpayment(lifetime_qnar: Mapping[str, int], lifetime_qlet_paid: Mapping[str, int],
                 rate: Fraction | int = 1) -> dict[str, int]:
    rate = Fraction(rate)
    accounts = list(dict.fromkeys([*lifetime_qnar, *lifetime_qlet_paid]))
    return {a: max(0, int(lifetime_qnar.get(a, 0) * rate) - lifetime_qlet_paid.get(a, 0))
            for a in accounts}


def payout_balanced(lifetime_qnar: Mapping[str, int], lifetime_qlet_paid: Mapping[str, int],
                    budget: int, rate: Fraction | int = 1) -> dict[str, int]:
    """Pay lagging accounts toward their lifetime target.

    The distributed amount is ``min(budget, sum of underpayments)``, split in
    proportion to each account's underpayment, so nobody is paid past their
    target.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    owed = underpayment(lifetime_qnar, lifetime_qlet_paid, rate)
    return split_proportional(min(budget, sum(owed.values())), owed)


def recent_weights(qnar_history: Sequence[Mapping[str, int]], decay) -> dict[str, Fraction]:
    """``sum_t decay^(now - t) * qnar_t`` per account, exact."""
    decay = Fraction(decay)
    if not 0 < decay <= 1:
        raise ValueError(f"decay must be in (0, 1], got {float(decay)}")
    now = len(qnar_history) - 1
    out: dict[str, Fraction] = {}
    for t, period in enumerate(qnar_history):
        factor = decay ** (now - t)
        for account, q in period.items():
            out[account] = out.get(account, Fraction(0)) + q * factor
    return out


def payout_recent(qnar_history: Sequence[Mapping[str, int]], decay,
                  budget: int | None = None) -> dict[str, int]:
    """Decay-weighted payout. With a ``budget`` the weights are rescaled to spend it exactly."""
    weights = recent_weights(qnar_history, decay)
    if budget is None:
        return {a: w.numerator // w.denominator for a, w in weights.items()}
    if budget < 0:
        raise ValueError("budget must be non-negative")
    return split_proportional(budget, weights)


def scores_to_subunits(scores: Mapping[str, float]) -> dict[str, int]:
    return {a: int(round(v * SCALE)) for a, v in scores.items()}


def period_gains(previous: Mapping[str, float], current: Mapping[str, float]) -> dict[str, int]:
    """QNAR gained between two reputation snapshots, clamped at zero, in subunits."""
    prev = scores_to_subunits(previous)
    cur = scores_to_subunits(current)
    return {a: max(0, v - prev.get(a, 0)) for a, v in cur.items()}


@dataclass(frozen=True)
class LedgerEntry:
    account: str
    qnar: tuple[int, ...] = ()
    qlet: tuple[int, ...] = ()

    @property
    def lifetime_qnar(self) -> int:
        return sum(self.qnar)

    @property
    def lifetime_qlet(self) -> int:
        return sum(self.qlet)


@dataclass(frozen=True)
class Ledger:
    """Immutable snapshot; :func:`apply_payout` returns the next one."""

    entries: Mapping[str, LedgerEntry] = field(default_factory=dict)
    periods: int = 0

    def lifetime_qnar(self) -> dict[str, int]:
        return {a: e.lifetime_qnar for a, e in self.entries.items()}

    def lifetime_qlet(self) -> dict[str, int]:
        return {a: e.lifetime_qlet for a, e in self.entries.items()}

    def qnar_history(self) -> list[dict[str, int]]:
        return [{a: e.qnar[t] for a, e in self.entries.items()} for t in range(self.periods)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["account", "lifetime_qnar", "lifetime_qlet"])
        for a, e in self.entries.items():
            writer.writerow([a, e.lifetime_qnar, e.lifetime_qlet])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"periods": self.periods,
                "entries": [[a, list(e.qnar), list(e.qlet)] for a, e in self.entries.items()]}

    @classmethod
    def from_dict(cls, data: Mapping) -> Ledger:
        entries = {a: LedgerEntry(a, tuple(q), tuple(p)) for a, q, p in data["entries"]}
        return cls(entries, data["periods"])


def apply_payout(ledger: Ledger, payouts: Mapping[str, int],
                 qnar: Mapping[str, int] | None = None) -> Ledger:
    """Record one period: QNAR earned and QLET paid per account."""
    qnar = qnar or {}
    _check_payouts(payouts)
    _check_payouts(qnar)
    accounts = list(dict.fromkeys([*ledger.entries, *qnar, *payouts]))
    pad = (0,) * ledger.periods
    entries = {}
    for a in accounts:
        old = ledger.entries.get(a, LedgerEntry(a, pad, pad))
        entry = LedgerEntry(a, old.qnar + (qnar.get(a, 0),), old.qlet + (payouts.get(a, 0),))
        if entry.lifetime_qnar > MAX_SUBUNITS or entry.lifetime_qlet > MAX_SUBUNITS:
            raise OverflowGuard(f"balance of {a!r} exceeds the fixed-point range")
        entries[a] = entry
    return Ledger(entries, ledger.periods + 1)


class Strategy(str, Enum):
    IMMEDIATE = "IMMEDIATE"
    BALANCED = "BALANCED"
    RECENT = "RECENT"


@dataclass(frozen=True)
class PayoutPolicy:
    strategy: Strategy = Strategy.BALANCED
    budget: int | None = None
    decay: float = 1.0
    rate: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.strategy is Strategy.BALANCED and self.budget is None:
            raise ValueError("BALANCED needs a per-period budget")


def run_period(ledger: Ledger, period_qnar: Mapping[str, int],
               policy: PayoutPolicy = None) -> tuple[Ledger, dict[str, int]]:
    """Compute this period's payouts under ``policy`` and record them."""
    policy = policy or PayoutPolicy(budget=0)
    if policy.strategy is Strategy.IMMEDIATE:
        payouts = payout_immediate(period_qnar, policy.rate)
    elif policy.strategy is Strategy.BALANCED:
        lifetime = ledger.lifetime_qnar()
        for a, q in period_qnar.items():
            lifetime[a] = lifetime.get(a, 0) + q
        payouts = payout_balanced(lifetime, ledger.lifetime_qlet(), policy.budget, policy.rate)
    else:
        history = ledger.qnar_history() + [dict(period_qnar)]
        payouts = payout_recent(history, policy.decay, policy.budget)
    return apply_payout(ledger, payouts, period_qnar), payouts


def journal_record(period: int, qnar: Mapping[str, int], payouts: Mapping[str, int]) -> str:
    return json.dumps({"period": period, "qnar": dict(qnar), "qlet": dict(payouts)},
                      sort_keys=True)


def replay_journal(lines: Iterable[str]) -> Ledger:
    """Rebuild a ledger from an append-only payout journal."""
    ledger = Ledger()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec["period"] != ledger.periods + 1:
            raise ValueError(f"line {lineno}: expected period {ledger.periods + 1}, "
                             f"got {rec['period']}")
        ledger = apply_payout(ledger, rec["qlet"], rec["qnar"])
    return ledger

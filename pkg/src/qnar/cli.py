"""Command-line entry point: ``qnar score | simulate | auction-replay | validate``.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 protocol violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .auction import replay_journal
from .credrank import CredRank, score_report
from .exceptions import (
    ConfigError,
    InputError,
    InvalidEvent,
    NotEnoughPlayers,
    NumericalError,
    OverflowGuard,
    ProtocolError,
    QnarError,
)
from .graph import NodeKind, WeightConfig, ingest_events, parse_events, read_events
from .io import (
    MAGIC,
    Snapshot,
    atomic_write,
    load_snapshot,
    parse_config_text,
    resolve_config,
    save_snapshot,
)
from .ledger import Ledger, PayoutPolicy, period_gains, run_period
from .rank import transition_operator
from .simulation import SimulationConfig, report_csv, run_grid, wealth_path_csv
from .tokens import SCALE, format_fraction, format_tokens, tokens

logger = logging.getLogger("qnar")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_PROTOCOL = 0, 2, 3, 4
TRUNCATION_MARKER = "# truncated: interrupted before the grid completed"


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ProtocolError):
        return EXIT_PROTOCOL
    if isinstance(exc, (NumericalError, OverflowGuard, NotEnoughPlayers)):
        return EXIT_NUMERIC
    return EXIT_INPUT


def _load_config(args, command: str):
    file_values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        file_values = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    flags = dict(getattr(args, "overrides", None) or {})
    for pair in getattr(args, "set", None) or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        flags[key.strip().replace("-", "_")] = value.strip()
    return resolve_config(command, file_values, os.environ, flags)


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- score

@dataclass
class ScoreRun:
    model: CredRank
    ledger: Ledger
    snapshot: Snapshot
    csv: str


def score_events(events, cfg) -> ScoreRun:
    """ingest -> epoch sequence -> CredRank -> reputation, plus the payout ledger."""
    if not events:
        raise InvalidEvent("no events")
    weights = WeightConfig.from_file(cfg["weights"]) if cfg["weights"] else WeightConfig()
    model = CredRank(alpha=cfg["alpha"], decay=cfg["decay"], base=cfg["base"], tol=cfg["tol"],
                     max_iter=cfg["max_iter"], weights=weights, period=cfg["period"],
                     n_epochs=cfg["epochs"], origin=cfg["origin"], webbing=cfg["webbing"],
                     cumulative_mint=cfg["cumulative_mint"], threads=cfg["threads"])
    model.fit(events)

    try:
        policy = PayoutPolicy(cfg["payout_strategy"].upper(), tokens(cfg["payout_budget"]),
                              cfg["payout_decay"])
    except ValueError as exc:
        raise ConfigError(f"payout settings: {exc}") from None
    ledger, previous = Ledger(), {}
    for report in model.reports_:
        gains = period_gains(previous, report.scores)
        ledger, _ = run_period(ledger, gains, policy)
        previous = report.scores

    graph = ingest_events(events, weights)
    snapshot = Snapshot(graph, model.sequence_, list(model.reports_), ledger)
    return ScoreRun(model, ledger, snapshot, score_report(model.reports_))


def transition_lines(run: ScoreRun) -> list[str]:
    """Courselet out-transitions in the final period, two decimals."""
    graph = run.model.sequence_[len(run.model.sequence_)].graph
    op = transition_operator(graph)
    lines = []
    for node in graph.nodes_of(NodeKind.COURSELET):
        for target, p in op.row(node).items():
            label = target
            if target in graph.owners:
                label = f"{target} ({graph.owners[target][0]})"
            lines.append(f"transition {node} -> {label} {p:.2f}")
    return lines


def cmd_score(args) -> int:
    cfg = _load_config(args, "score")
    events = read_events(args.events)
    run = score_events(events, cfg)
    _emit(run.csv, args.out)
    if args.snapshot:
        save_snapshot(run.snapshot, args.snapshot)
    if args.ledger:
        atomic_write(args.ledger, run.ledger.to_csv())
    if args.transitions:
        for line in transition_lines(run):
            print(line, file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def simulation_configs(cfg) -> tuple[SimulationConfig, tuple[int, ...], tuple[str, ...]]:
    try:
        base = SimulationConfig(
            n_stakers=cfg["n"][0] if cfg["n"] else 0, n_rounds=cfg["rounds"],
            distribution=cfg["dist"][0] if cfg["dist"] else "", vote_prob=cfg["p"],
            bid_fraction=cfg["f"], inflation=cfg["inflation"],
            inflation_mode=cfg["inflation_mode"], outcome=cfg["outcome"],
            p_accept=cfg["p_accept"], uniform_low=cfg["uniform_low"],
            uniform_high=cfg["uniform_high"], pareto_shape=cfg["pareto_shape"],
            pareto_scale=cfg["pareto_scale"], damping=cfg["damping"],
            replications=cfg["reps"], seed=cfg["seed"], checkpoints=cfg["checkpoints"])
    except InputError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    for n in cfg["n"]:
        if n < 2:
            raise ConfigError(f"n must be >= 2, got {n}")
    for dist in cfg["dist"]:
        if dist not in ("uniform", "pareto"):
            raise ConfigError(f"unknown distribution {dist!r}")
    return base, cfg["n"], cfg["dist"]


def cmd_simulate(args) -> int:
    cfg = _load_config(args, "simulate")
    base, stakers, dists = simulation_configs(cfg)
    reports = []
    interrupted = False
    try:
        for dist in dists:
            for n in stakers:
                reports += run_grid(base, (n,), (dist,), threads=cfg["threads"],
                                    keep_paths=bool(cfg["paths"]))
    except KeyboardInterrupt:
        interrupted = True
    text = report_csv(reports)
    if interrupted:
        text += TRUNCATION_MARKER + "\n"
    _emit(text, args.out)
    if cfg["paths"] and reports:
        atomic_write(cfg["paths"], wealth_path_csv(reports))
    if interrupted:
        print("interrupted: partial results written", file=sys.stderr)
        return 130
    return EXIT_OK


# ---------------------------------------------------------------- auction-replay

def settlement_lines(result) -> list[str]:
    s = result.settlement
    lines = [f"outcome: {s.outcome.value}", f"decision_sum: {format_tokens(s.decision_sum)}"]
    if s.refunded:
        lines.append("refunded: all bids returned")
    for staker, delta in s.deltas.items():
        exact = s.exact_profit(staker) / SCALE
        lines.append(f"{staker}: {format_fraction(exact, sign=True)} "
                     f"({format_tokens(delta, sign=True)})")
    for staker, amount in s.forfeits.items():
        lines.append(f"forfeit: {staker} {format_tokens(amount)}")
    for staker, amount in s.minted.items():
        if amount:
            lines.append(f"minted: {staker} {format_tokens(amount)}")
    if s.deposit_burned:
        lines.append(f"deposit burned: {format_tokens(s.deposit_burned)}")
    if result.journaled is not None:
        lines.append("settlement matches journal")
    return lines


def cmd_auction_replay(args) -> int:
    with open(args.journal, encoding="utf-8") as fh:
        result = replay_journal(fh)
    if result.settlement is None:
        raise ProtocolError("journal ends before settlement")
    _emit("\n".join(settlement_lines(result)) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------- validate

def _sniff(path: Path) -> str:
    raw = path.read_bytes()
    if raw.startswith(MAGIC):
        return "snapshot"
    first = next((ln for ln in raw.decode("utf-8", "replace").splitlines() if ln.strip()), "")
    if first.lstrip().startswith("{"):
        try:
            rec = json.loads(first)
        except ValueError:
            return "events"
        return "journal" if isinstance(rec, dict) and "phase" in rec else "events"
    return "weights"


def validate_file(path) -> tuple[str, str | None, int]:
    """``(kind, violation or None, exit code)`` for one file."""
    path = Path(path)
    kind = "unknown"
    try:
        kind = _sniff(path)
        if kind == "snapshot":
            load_snapshot(path)
        elif kind == "journal":
            with open(path, encoding="utf-8") as fh:
                replay_journal(fh)
        elif kind == "events":
            with open(path, encoding="utf-8") as fh:
                events = parse_events(fh)
            if not events:
                raise InvalidEvent("no events")
            ingest_events(events)
        else:
            WeightConfig.from_file(path)
    except QnarError as exc:
        return kind, f"{type(exc).__name__}: {exc}", exit_code(exc)
    except OSError as exc:
        return kind, f"{type(exc).__name__}: {exc}", EXIT_INPUT
    return kind, None, EXIT_OK


def cmd_validate(args) -> int:
    worst = EXIT_OK
    for name in args.files:
        kind, problem, code = validate_file(name)
        if problem is None:
            print(f"{name}: ok ({kind})")
        else:
            print(f"{name}: {problem}")
            worst = max(worst, code)
    return worst


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qnar", description="Reputation scoring, token rewards and staking-game simulation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)
    # -q is accepted after the subcommand too; SUPPRESS keeps it from resetting the global flag
    quiet = argparse.ArgumentParser(add_help=False)
    quiet.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS,
                       help="only log warnings")

    def common(p, seed=False):
        p.add_argument("--config", help="flat key = value settings file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a setting")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--threads", type=int, help="worker threads")
        if seed:
            p.add_argument("--seed", type=int, help="master seed")

    p = sub.add_parser("score", parents=[quiet], help="reputation scores from a JSONL event log")
    p.add_argument("events")
    common(p)
    p.add_argument("--weights", help="edge/mint weight file")
    p.add_argument("--epochs", type=int, help="number of periods (default: cover all events)")
    p.add_argument("--snapshot", help="write a snapshot bundle here")
    p.add_argument("--ledger", help="write the payout ledger CSV here")
    p.add_argument("--transitions", action="store_true",
                   help="print courselet out-transition probabilities to stderr")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("simulate", parents=[quiet], help="Monte Carlo staking grid")
    common(p, seed=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("auction-replay", parents=[quiet], help="re-execute an auction journal")
    p.add_argument("journal")
    p.add_argument("--out")
    p.set_defaults(func=cmd_auction_replay)

    p = sub.add_parser("validate", parents=[quiet],
                       help="check event logs, weight files, snapshots, journals")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args.overrides = {k: getattr(args, k, None) for k in ("seed", "threads", "weights", "epochs")
                      if getattr(args, k, None) is not None}
    try:
        return args.func(args)
    except QnarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

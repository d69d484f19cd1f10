import json
import random
import sys
from pathlib import Path

import pytest

from qnar.graph import ContributionEvent

DATA = Path(__file__).parent / "data"


def load_dicts(name):
    with open(DATA / name, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def random_event_dicts(n, seed=0, users=8, span=10 * 7 * 24 * 3600):
    """Valid random event dicts: every non-courselet event targets an existing courselet."""
    rng = random.Random(seed)
    stamps = sorted(rng.randrange(span) for _ in range(n))
    courselets, out = [], []
    for i, ts in enumerate(stamps):
        actor = f"u{rng.randrange(users)}"
        if not courselets or rng.random() < 0.25:
            if courselets and rng.random() < 0.1:
                target = rng.choice(courselets)  # co-authoring
            else:
                target = f"CL{len(courselets)}"
                courselets.append(target)
            out.append({"kind": "courselet", "actor": actor, "target": target, "ts": ts})
        else:
            kind = rng.choice(["order", "review", "view"])
            out.append({"kind": kind, "actor": actor, "target": rng.choice(courselets), "ts": ts})
    return out


def to_events(dicts):
    return [ContributionEvent.from_dict(d) for d in dicts]


@pytest.fixture
def one_courselet_events():
    return to_events(load_dicts("one_courselet_events.jsonl"))


@pytest.fixture
def two_period_dicts():
    return load_dicts("two_period_events.jsonl")


@pytest.fixture
def two_period_events(two_period_dicts):
    return to_events(two_period_dicts)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance.RESULTS:
            terminalreporter.write_line(line)

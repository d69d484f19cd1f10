import logging
import struct

import pytest

from qnar.cli import score_events
from qnar.exceptions import ConfigError, SnapshotError
from qnar.io import (
    MAGIC,
    Snapshot,
    atomic_write,
    canonical_key,
    dump_snapshot,
    load_snapshot,
    load_snapshot_bytes,
    parse_config_text,
    resolve_config,
    save_snapshot,
)


@pytest.fixture
def snapshot(two_period_events):
    return score_events(two_period_events, resolve_config("score")).snapshot


def test_snapshot_round_trip(snapshot, tmp_path):
    raw = dump_snapshot(snapshot)
    back = load_snapshot_bytes(raw)
    assert back == snapshot
    assert dump_snapshot(back) == raw
    path = tmp_path / "s.qsnap"
    save_snapshot(snapshot, path)
    assert load_snapshot(path) == snapshot
    assert back.scores[-1].scores == snapshot.scores[-1].scores
    assert back.ledger == snapshot.ledger


def test_empty_snapshot_round_trip():
    assert load_snapshot_bytes(dump_snapshot(Snapshot())) == Snapshot()


@pytest.mark.parametrize("damage", ["magic", "version", "flip", "truncate", "trailing", "header"])
def test_corruption_is_detected(snapshot, damage):
    raw = bytearray(dump_snapshot(snapshot))
    if damage == "magic":
        raw[:4] = b"JUNK"
    elif damage == "version":
        raw[len(MAGIC):len(MAGIC) + 2] = struct.pack(">H", 2)
    elif damage == "flip":
        raw[-10] ^= 0x01
    elif damage == "truncate":
        raw = raw[:-5]
    elif damage == "trailing":
        raw += b"\0"
    else:
        raw[len(MAGIC) + 6] = ord("[")
    with pytest.raises(SnapshotError):
        load_snapshot_bytes(bytes(raw))


def test_every_single_byte_flip_in_payload_fails(snapshot):
    raw = dump_snapshot(snapshot)
    for pos in range(len(raw) - 1, len(raw) - 400, -7):
        bad = bytearray(raw)
        bad[pos] ^= 0x20
        with pytest.raises(SnapshotError):
            load_snapshot_bytes(bytes(bad))


def test_atomic_write_replaces(tmp_path):
    path = tmp_path / "out.csv"
    atomic_write(path, "one\n")
    atomic_write(path, b"two\n")
    assert path.read_text() == "two\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]


def test_parse_config_text():
    text = "# comment\ncredrank.c = 0.5\n score.alpha=0.2 # inline\n\nreps = 3\nreps = 4\n"
    assert parse_config_text(text) == {"decay": "0.5", "alpha": "0.2", "reps": "4"}
    with pytest.raises(ConfigError, match="2"):
        parse_config_text("a = 1\nnonsense\n")


def test_canonical_key():
    assert canonical_key("CredRank.C") == "decay"
    assert canonical_key("sim.inflation-mode") == "inflation_mode"


def test_precedence():
    cfg = resolve_config("score", {"decay": "0.2", "alpha": "0.3"},
                         {"QNAR_CREDRANK__C": "0.4", "QNAR_BASE": "10"}, {"decay": "0.6"})
    assert cfg["decay"] == 0.6 and cfg.sources["decay"] == "flag"
    assert cfg["alpha"] == 0.3 and cfg.sources["alpha"] == "file"
    assert cfg["base"] == 10.0 and cfg.sources["base"] == "env"
    assert cfg["tol"] == 1e-10 and cfg.sources["tol"] == "default"
    cfg = resolve_config("score", {"decay": "0.2"}, {"QNAR_CREDRANK__C": "0.4"})
    assert cfg["decay"] == 0.4


def test_unknown_keys():
    with pytest.raises(ConfigError, match="bogus"):
        resolve_config("score", {"bogus": "1"})
    with pytest.raises(ConfigError):
        resolve_config("simulate", flags={"alpha": "0.1"})
    with pytest.raises(ConfigError):
        resolve_config("score", env={"QNAR_BOGUS": "1"})
    # another subcommand's setting in the environment is not an error
    assert resolve_config("score", env={"QNAR_REPS": "5"})["alpha"] == 0.15


def test_bad_values():
    with pytest.raises(ConfigError, match="reps"):
        resolve_config("simulate", {"reps": "many"})
    with pytest.raises(ConfigError):
        resolve_config("score", {"webbing": "maybe"})


def test_list_values():
    cfg = resolve_config("simulate", {"n": "5, 10,1000", "dist": "uniform,pareto"})
    assert cfg["n"] == (5, 10, 1000) and cfg["dist"] == ("uniform", "pareto")


def test_resolved_config_is_logged(caplog):
    with caplog.at_level(logging.INFO, logger="qnar"):
        resolve_config("simulate", flags={"seed": 9})
    assert "seed=9 (flag)" in caplog.text

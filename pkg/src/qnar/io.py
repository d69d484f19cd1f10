"""Persistence: atomic writes, run configuration, and the snapshot bundle.

Snapshot layout (all integers big-endian)::

    b"QNARSNAP" | u16 version | u32 header length | header JSON | sections...

The header lists each section's name, byte length and SHA-256, plus a digest
over all section bytes. Sections are canonical JSON.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .credrank import ReputationScore
from .exceptions import ConfigError, SnapshotError
from .graph import ContributionGraph, EpochGraphSequence
from .ledger import Ledger

logger = logging.getLogger(__name__)

MAGIC = b"QNARSNAP"
FORMAT_VERSION = 1
SECTIONS = ("graph", "epochs", "scores", "ledger")
ENV_PREFIX = "QNAR_"


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- config

def _bool(text: str) -> bool:
    key = str(text).strip().lower()
    if key in ("1", "true", "yes", "on"):
        return True
    if key in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(parse: Callable) -> Callable:
    def inner(text):
        return None if str(text).strip().lower() in ("", "none") else parse(text)
    return inner


def _list(parse: Callable) -> Callable:
    def inner(text):
        if isinstance(text, (list, tuple)):
            return tuple(parse(x) for x in text)
        return tuple(parse(x.strip()) for x in str(text).split(",") if x.strip())
    return inner


def _int(text) -> int:
    return int(str(text).strip())


def _float(text) -> float:
    return float(str(text).strip())


def _str(text) -> str:
    return str(text).strip()


Schema = Mapping[str, tuple[Callable, Any]]

SCORE_SCHEMA: Schema = {
    "alpha": (_float, 0.15),
    "decay": (_float, 1.0),
    "base": (_float, 1000.0),
    "tol": (_float, 1e-10),
    "max_iter": (_int, 10_000),
    "period": (_int, 7 * 24 * 3600),
    "epochs": (_optional(_int), None),
    "origin": (_optional(_int), None),
    "webbing": (_bool, False),
    "cumulative_mint": (_bool, True),
    "weights": (_optional(_str), None),
    "threads": (_int, 1),
    "payout_strategy": (_str, "BALANCED"),
    "payout_budget": (_str, "100"),
    "payout_decay": (_float, 1.0),
}

SIMULATE_SCHEMA: Schema = {
    "n": (_list(_int), (5,)),
    "rounds": (_int, 100),
    "checkpoints": (_list(_int), ()),
    "reps": (_int, 100),
    "seed": (_int, 0),
    "dist": (_list(_str), ("uniform",)),
    "f": (_float, 0.1),
    "inflation": (_float, 1.0),
    "inflation_mode": (_str, "per-participant"),
    "outcome": (_str, "endogenous"),
    "p": (_float, 0.5),
    "p_accept": (_float, 0.5),
    "uniform_low": (_float, 0.5),
    "uniform_high": (_float, 1.5),
    "pareto_shape": (_float, 2.0),
    "pareto_scale": (_optional(_float), None),
    "damping": (_bool, True),
    "threads": (_int, 1),
    "paths": (_optional(_str), None),
}

SCHEMAS = {"score": SCORE_SCHEMA, "simulate": SIMULATE_SCHEMA}

# dotted spellings accepted anywhere a key is read
ALIASES = {
    "credrank.c": "decay", "credrank.base": "base", "credrank.alpha": "alpha",
    "credrank.decay": "decay", "credrank.tol": "tol", "credrank.max_iter": "max_iter",
}


def canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_").lower()
    key = ALIASES.get(key, key)
    for prefix in ("score.", "sim.", "simulate."):
        if key.startswith(prefix):
            key = key[len(prefix):]
    return key


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` comments; later keys win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[canonical_key(key)] = value
    return out


@dataclass
class RunConfig:
    """Resolved settings with the layer each value came from."""

    command: str
    values: dict[str, Any]
    sources: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def describe(self) -> str:
        return ", ".join(f"{k}={self.values[k]!r} ({self.sources[k]})" for k in sorted(self.values))


def resolve_config(command: str, file_values: Mapping[str, str] | None = None,
                   env: Mapping[str, str] | None = None,
                   flags: Mapping[str, Any] | None = None) -> RunConfig:
    """Merge defaults < config file < ``QNAR_*`` environment < flags.

    Unknown keys in the file or flags are errors. Environment variables naming
    a key of another subcommand are ignored; any other ``QNAR_*`` name is an
    error.
    """
    schema = SCHEMAS[command]
    known_anywhere = {k for s in SCHEMAS.values() for k in s}
    values = {k: default for k, (_, default) in schema.items()}
    sources = {k: "default" for k in schema}

    def apply(layer: Mapping[str, Any], label: str, strict: bool) -> None:
        for key, raw in layer.items():
            key = canonical_key(key)
            if key not in schema:
                if strict or key not in known_anywhere:
                    raise ConfigError(f"unknown {command} setting {key!r} ({label})")
                continue
            parse = schema[key][0]
            try:
                values[key] = parse(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r} ({label}): {exc}") from None
            sources[key] = label

    apply(file_values or {}, "file", strict=True)
    env_values = {k[len(ENV_PREFIX):].replace("__", "."): v for k, v in (env or {}).items()
                  if k.startswith(ENV_PREFIX)}
    apply(env_values, "env", strict=False)
    apply({k: v for k, v in (flags or {}).items() if v is not None}, "flag", strict=True)
    cfg = RunConfig(command, values, sources)
    logger.info("resolved %s config: %s", command, cfg.describe())
    return cfg


# ---------------------------------------------------------------- snapshot

@dataclass
class Snapshot:
    graph: ContributionGraph | None = None
    epochs: EpochGraphSequence | None = None
    scores: list[ReputationScore] = field(default_factory=list)
    ledger: Ledger | None = None

    def sections(self) -> dict[str, Any]:
        return {
            "graph": None if self.graph is None else self.graph.to_dict(),
            "epochs": None if self.epochs is None else self.epochs.to_dict(),
            "scores": [s.to_dict() for s in self.scores],
            "ledger": None if self.ledger is None else self.ledger.to_dict(),
        }

    def __eq__(self, other):
        if not isinstance(other, Snapshot):
            return NotImplemented
        return self.sections() == other.sections()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def dump_snapshot(snap: Snapshot) -> bytes:
    blobs = [(name, _canonical(body)) for name, body in snap.sections().items()]
    header = {
        "format": "qnar-snapshot",
        "version": FORMAT_VERSION,
        "sections": [{"name": n, "length": len(b), "sha256": hashlib.sha256(b).hexdigest()}
                     for n, b in blobs],
        "sha256": hashlib.sha256(b"".join(b for _, b in blobs)).hexdigest(),
    }
    head = _canonical(header)
    return MAGIC + struct.pack(">HI", FORMAT_VERSION, len(head)) + head + b"".join(
        b for _, b in blobs)


def load_snapshot_bytes(raw: bytes) -> Snapshot:
    """Parse and verify a snapshot. Every failure is a :class:`SnapshotError`."""
    fixed = len(MAGIC) + 6
    if len(raw) < fixed or not raw.startswith(MAGIC):
        raise SnapshotError("not a snapshot (bad magic)")
    version, hlen = struct.unpack(">HI", raw[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    try:
        header = json.loads(raw[fixed:fixed + hlen])
        entries = header["sections"]
    except (ValueError, KeyError, TypeError):
        raise SnapshotError("corrupted snapshot header") from None
    if header.get("version") != version:
        raise SnapshotError("header version does not match the binary version")
    pos = fixed + hlen
    bodies = {}
    payload = b""
    for entry in entries:
        blob = raw[pos:pos + entry["length"]]
        if len(blob) != entry["length"]:
            raise SnapshotError(f"section {entry['name']!r} is truncated")
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise SnapshotError(f"checksum mismatch in section {entry['name']!r}")
        bodies[entry["name"]] = json.loads(blob)
        payload += blob
        pos += entry["length"]
    if pos != len(raw):
        raise SnapshotError("trailing bytes after the last section")
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise SnapshotError("content checksum mismatch")
    missing = set(SECTIONS) - set(bodies)
    if missing:
        raise SnapshotError(f"missing section(s) {sorted(missing)}")
    try:
        return Snapshot(
            None if bodies["graph"] is None else ContributionGraph.from_dict(bodies["graph"]),
            None if bodies["epochs"] is None else EpochGraphSequence.from_dict(bodies["epochs"]),
            [ReputationScore.from_dict(s) for s in bodies["scores"]],
            None if bodies["ledger"] is None else Ledger.from_dict(bodies["ledger"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"malformed section content ({exc})") from None


def save_snapshot(snap: Snapshot, path) -> None:
    atomic_write(path, dump_snapshot(snap))


def load_snapshot(path) -> Snapshot:
    return load_snapshot_bytes(Path(path).read_bytes())

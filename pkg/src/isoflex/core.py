"""Shared vocabulary: isolation levels, templates, keys and history records.

History records serialize to one JSON object per line with a fixed key order,
so golden files compare byte for byte.
"""

from __future__ import annotations

import enum
import itertools
import json
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, NamedTuple, Optional


class IsolationLevel(enum.Enum):
    RC = "RC"
    SI = "SI"
    SER = "SER"

    @property
    def rank(self) -> int:
        return _LEVEL_RANK[self]

    def __lt__(self, other: "IsolationLevel") -> bool:
        # Reporting order only.
        if not isinstance(other, IsolationLevel):
            return NotImplemented
        return self.rank < other.rank

    @classmethod
    def parse(cls, text: str) -> "IsolationLevel":
        try:
            return cls(text.upper())
        except ValueError:
            raise ValueError(f"unknown isolation level {text!r}") from None


_LEVEL_RANK = {IsolationLevel.RC: 0, IsolationLevel.SI: 1, IsolationLevel.SER: 2}


class DependencyKind(enum.Enum):
    WW = "WW"
    WR = "WR"
    RW = "RW"


class Mode(enum.Enum):
    READ = "Read"
    WRITE = "Write"


class Outcome(enum.Enum):
    COMMITTED = "Committed"
    ABORTED = "Aborted"


ABORT_REASONS = frozenset(
    {
        "version_mismatch",
        "wait_die",
        "engine_ww_conflict",
        "engine_ssi",
        "civ_version_mismatch",
        "user",
    }
)


class TransactionAborted(Exception):
    """Raised when a transaction is rolled back; ``reason`` is from ABORT_REASONS."""

    def __init__(self, txn_id: int, reason: str):
        super().__init__(f"txn {txn_id} aborted: {reason}")
        self.txn_id = txn_id
        self.reason = reason


class Blocked(Exception):
    """The operation must be retried later; nothing was changed."""


class Key(NamedTuple):
    relation: str
    id: int

    def __str__(self) -> str:
        return f"{self.relation}/{self.id}"


@dataclass(frozen=True)
class Step:
    mode: Mode
    relation: str
    key_param: int


@dataclass(frozen=True)
class TransactionTemplate:
    name: str
    arity: int
    steps: tuple[Step, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("template name must be non-empty")
        if not self.steps:
            raise ValueError(f"template {self.name!r} has no steps")
        for step in self.steps:
            if not 0 <= step.key_param < self.arity:
                raise ValueError(
                    f"template {self.name!r}: key_param {step.key_param} "
                    f"outside arity {self.arity}"
                )

    @classmethod
    def build(cls, name: str, arity: int, steps: Iterable[tuple[str, str, int]]) -> "TransactionTemplate":
        """Build from ``(mode, relation, key_param)`` triples, mode "r"/"w"."""
        parsed = []
        for mode, relation, param in steps:
            m = Mode.READ if mode.lower() in ("r", "read") else Mode.WRITE
            parsed.append(Step(m, relation, param))
        return cls(name, arity, tuple(parsed))

    def relations(self, mode: Mode) -> set[str]:
        return {s.relation for s in self.steps if s.mode is mode}


class EventCounter:
    """Global logical clock; every call to ``tick`` returns a fresh value."""

    def __init__(self, start: int = 1):
        self._count = itertools.count(start)
        self._lock = threading.Lock()
        self._last = start - 1

    def tick(self) -> int:
        with self._lock:
            self._last = next(self._count)
            return self._last

    @property
    def now(self) -> int:
        return self._last


@dataclass(frozen=True)
class Op:
    mode: Mode
    key: Key
    version: int


@dataclass(frozen=True)
class HistoryRecord:
    txn_id: int
    template: str
    level: IsolationLevel
    begin_seq: int
    end_seq: int
    outcome: Outcome
    abort_reason: Optional[str] = None
    ops: tuple[Op, ...] = field(default_factory=tuple)

    @property
    def committed(self) -> bool:
        return self.outcome is Outcome.COMMITTED

    def reads(self) -> Iterator[Op]:
        return (op for op in self.ops if op.mode is Mode.READ)

    def writes(self) -> Iterator[Op]:
        return (op for op in self.ops if op.mode is Mode.WRITE)


class MalformedRecord(ValueError):
    def __init__(self, position: Any, reason: str):
        super().__init__(f"malformed history record at {position}: {reason}")
        self.position = position
        self.reason = reason


_RECORD_FIELDS = ("txn_id", "template", "level", "begin_seq", "end_seq", "outcome", "abort_reason", "ops")
_OP_FIELDS = ("mode", "relation", "id", "version")


def serialize_history_record(rec: HistoryRecord) -> str:
    payload = {
        "txn_id": rec.txn_id,
        "template": rec.template,
        "level": rec.level.value,
        "begin_seq": rec.begin_seq,
        "end_seq": rec.end_seq,
        "outcome": rec.outcome.value,
        "abort_reason": rec.abort_reason,
        "ops": [
            {"mode": op.mode.value, "relation": op.key.relation, "id": op.key.id, "version": op.version}
            for op in rec.ops
        ],
    }
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def _uint(obj: dict, name: str, where: str) -> int:
    value = obj[name]
    if type(value) is not int or value < 0:
        raise MalformedRecord(where, f"{name} must be an unsigned integer")
    return value


def parse_history_record(line: str) -> HistoryRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(exc.pos, exc.msg) from None
    if not isinstance(obj, dict):
        raise MalformedRecord(0, "expected a JSON object")
    if tuple(obj) != _RECORD_FIELDS:
        raise MalformedRecord(0, f"fields must be exactly {list(_RECORD_FIELDS)}")

    txn_id = _uint(obj, "txn_id", "txn_id")
    if not isinstance(obj["template"], str):
        raise MalformedRecord("template", "template must be a string")
    try:
        level = IsolationLevel(obj["level"])
    except ValueError:
        raise MalformedRecord("level", f"unknown level {obj['level']!r}") from None
    begin_seq = _uint(obj, "begin_seq", "begin_seq")
    end_seq = _uint(obj, "end_seq", "end_seq")
    if begin_seq >= end_seq:
        raise MalformedRecord("end_seq", "begin_seq must be < end_seq")
    try:
        outcome = Outcome(obj["outcome"])
    except ValueError:
        raise MalformedRecord("outcome", f"unknown outcome {obj['outcome']!r}") from None
    reason = obj["abort_reason"]
    if outcome is Outcome.COMMITTED and reason is not None:
        raise MalformedRecord("abort_reason", "committed record carries an abort reason")
    if outcome is Outcome.ABORTED and reason not in ABORT_REASONS:
        raise MalformedRecord("abort_reason", f"unknown abort reason {reason!r}")
    if not isinstance(obj["ops"], list):
        raise MalformedRecord("ops", "ops must be a list")

    ops = []
    for i, raw in enumerate(obj["ops"]):
        where = f"ops[{i}]"
        if not isinstance(raw, dict) or tuple(raw) != _OP_FIELDS:
            raise MalformedRecord(where, f"op fields must be exactly {list(_OP_FIELDS)}")
        try:
            mode = Mode(raw["mode"])
        except ValueError:
            raise MalformedRecord(where, f"unknown mode {raw['mode']!r}") from None
        if not isinstance(raw["relation"], str):
            raise MalformedRecord(where, "relation must be a string")
        ops.append(Op(mode, Key(raw["relation"], _uint(raw, "id", where)), _uint(raw, "version", where)))

    return HistoryRecord(txn_id, obj["template"], level, begin_seq, end_seq, outcome, reason, tuple(ops))


def write_history(path, records: Iterable[HistoryRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(serialize_history_record(rec))
            fh.write("\n")


def read_history(path) -> list[HistoryRecord]:
    with open(path, encoding="utf-8") as fh:
        return [parse_history_record(line) for line in fh if line.strip()]

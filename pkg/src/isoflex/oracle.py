"""Offline serializability checking over history logs.

The direct serialization graph uses adjacent-version edges: WW between
consecutive installers of a key, WR from installer to reader, RW from a
reader of version v to the installer of v+1. Aborted transactions are
ignored. A history is serializable iff the graph is acyclic.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .core import DependencyKind, HistoryRecord, IsolationLevel, Key, Mode, Op, Outcome


class InconsistentHistory(ValueError):
    def __init__(self, key: Key, detail: str):
        super().__init__(f"{key}: {detail}")
        self.key = key
        self.detail = detail


@dataclass(frozen=True, order=True)
class DsgEdge:
    src: int
    dst: int
    kind: DependencyKind
    key: Key


@dataclass(frozen=True)
class SerializationGraph:
    vertices: tuple[int, ...]
    edges: tuple[DsgEdge, ...]

    def successors(self) -> dict[int, list[DsgEdge]]:
        out: dict[int, list[DsgEdge]] = {v: [] for v in self.vertices}
        for e in self.edges:
            out[e.src].append(e)
        return out


@dataclass(frozen=True)
class OracleVerdict:
    serializable: bool
    witness_cycle: Optional[tuple[tuple[int, DependencyKind], ...]] = None

    def witness_json(self) -> list[dict]:
        return [{"txn_id": t, "kind": k.value} for t, k in (self.witness_cycle or ())]


def _installers(committed: Sequence[HistoryRecord]) -> dict[Key, dict[int, int]]:
    installs: dict[Key, dict[int, int]] = {}
    for rec in committed:
        for op in rec.writes():
            by_version = installs.setdefault(op.key, {})
            other = by_version.get(op.version)
            if other is not None and other != rec.txn_id:
                raise InconsistentHistory(op.key, f"version {op.version} installed by {other} and {rec.txn_id}")
            by_version[op.version] = rec.txn_id
    for key, by_version in installs.items():
        expected = list(range(1, len(by_version) + 1))
        if sorted(by_version) != expected:
            raise InconsistentHistory(key, f"installed versions {sorted(by_version)} are not consecutive from 1")
    return installs


def build_dsg(history: Iterable[HistoryRecord]) -> SerializationGraph:
    committed = [r for r in history if r.outcome is Outcome.COMMITTED]
    installs = _installers(committed)
    edges: set[DsgEdge] = set()
    for key, by_version in installs.items():
        for v in range(2, len(by_version) + 1):
            a, b = by_version[v - 1], by_version[v]
            if a != b:
                edges.add(DsgEdge(a, b, DependencyKind.WW, key))
    for rec in committed:
        own: set[Key] = set()
        for op in rec.ops:
            if op.mode is Mode.WRITE:
                own.add(op.key)
                continue
            if op.key in own:
                continue  # read of its own write
            by_version = installs.get(op.key, {})
            if op.version > 0:
                writer = by_version.get(op.version)
                if writer is None:
                    raise InconsistentHistory(op.key, f"txn {rec.txn_id} read never-installed version {op.version}")
                if writer != rec.txn_id:
                    edges.add(DsgEdge(writer, rec.txn_id, DependencyKind.WR, op.key))
            nxt = by_version.get(op.version + 1)
            if nxt is not None and nxt != rec.txn_id:
                edges.add(DsgEdge(rec.txn_id, nxt, DependencyKind.RW, op.key))
    vertices = tuple(sorted(r.txn_id for r in committed))
    return SerializationGraph(vertices, tuple(sorted(edges, key=lambda e: (e.src, e.dst, e.kind.value, e.key))))


def check_serializable(g: SerializationGraph) -> OracleVerdict:
    """Iterative DFS; on a back edge returns the cycle as (txn, kind of outgoing edge)."""
    succ = g.successors()
    color = {v: 0 for v in g.vertices}  # 0 new, 1 on stack, 2 done
    for root in g.vertices:
        if color[root]:
            continue
        path: list[tuple[int, DsgEdge]] = []
        stack = [(root, iter(succ[root]))]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            edge = next(it, None)
            if edge is None:
                color[node] = 2
                stack.pop()
                if path:
                    path.pop()
                continue
            nxt = edge.dst
            if color[nxt] == 1:
                cycle = path + [(node, edge)]
                start = next(i for i, (n, _) in enumerate(cycle) if n == nxt)
                return OracleVerdict(False, tuple((n, e.kind) for n, e in cycle[start:]))
            if color[nxt] == 0:
                color[nxt] = 1
                path.append((node, edge))
                stack.append((nxt, iter(succ[nxt])))
    return OracleVerdict(True)


def check_history(history: Iterable[HistoryRecord]) -> OracleVerdict:
    return check_serializable(build_dsg(history))


def find_vulnerable_violations(history: Iterable[HistoryRecord], level: IsolationLevel) -> list[tuple[int, int, Key]]:
    """RW dependencies that are vulnerable at ``level`` and committed in inverted order.

    RC: every RW edge between committed transactions. SI: RW edges i -> j for
    which some RW edge k -> i exists. SER: none.
    """
    if level is IsolationLevel.SER:
        return []
    records = [r for r in history if r.outcome is Outcome.COMMITTED]
    end = {r.txn_id: r.end_seq for r in records}
    rw = [e for e in build_dsg(records).edges if e.kind is DependencyKind.RW]
    if level is IsolationLevel.SI:
        has_incoming = {e.dst for e in rw}
        rw = [e for e in rw if e.src in has_incoming]
    return [(e.src, e.dst, e.key) for e in rw if end[e.dst] < end[e.src]]


# -- brute-force reference ---------------------------------------------------------


def brute_force_serializable(history: Iterable[HistoryRecord]) -> bool:
    """True iff some serial order of committed txns reproduces every observed version."""
    committed = [r for r in history if r.outcome is Outcome.COMMITTED]
    for order in itertools.permutations(committed):
        if _replays(order):
            return True
    return not committed


def _replays(order: Sequence[HistoryRecord]) -> bool:
    current: dict[Key, int] = {}
    for rec in order:
        written: dict[Key, int] = {}
        for op in rec.ops:
            if op.mode is Mode.READ:
                if op.version != written.get(op.key, current.get(op.key, 0)):
                    return False
            elif op.key not in written:
                if op.version != current.get(op.key, 0) + 1:
                    return False
                written[op.key] = op.version
        current.update(written)
    return True


def random_history(rng: random.Random, max_txns: int = 5, max_keys: int = 3) -> list[HistoryRecord]:
    """A small history that is internally consistent but not necessarily serializable.

    Each key gets a random sequence of distinct committed writers; each
    transaction reads some keys at random existing versions and then writes.
    """
    n = rng.randint(1, max_txns)
    keys = [Key("k", i) for i in range(rng.randint(1, max_keys))]
    writes: dict[int, dict[Key, int]] = {t: {} for t in range(1, n + 1)}
    chain_len: dict[Key, int] = {}
    for key in keys:
        writers = rng.sample(range(1, n + 1), rng.randint(0, n))
        for version, t in enumerate(writers, start=1):
            writes[t][key] = version
        chain_len[key] = len(writers)
    records = []
    for t in range(1, n + 1):
        ops = []
        for key in keys:
            if rng.random() < 0.6:
                choices = [v for v in range(chain_len[key] + 1) if v != writes[t].get(key)]
                ops.append(Op(Mode.READ, key, rng.choice(choices)))
        for key, version in writes[t].items():
            ops.append(Op(Mode.WRITE, key, version))
        records.append(HistoryRecord(t, "rand", IsolationLevel.RC, 2 * t - 1, 2 * t, Outcome.COMMITTED, None, tuple(ops)))
    return records

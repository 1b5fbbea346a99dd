"""Embedded multi-version key-value engine with RC, SI and SER.

* RC reads the newest committed version at each read.
* SI and SER read from a snapshot fixed at begin; writes follow
  first-committer-wins.
* SER additionally certifies each commit against the serialization graph of
  committed SER transactions and aborts any commit that would close a cycle.

Writers take a per-key write lock held until commit or abort. A writer that
finds the lock taken raises ``Blocked`` and is queued FIFO; after
``wait_budget`` fruitless retries it aborts, which breaks write-lock
deadlocks. Under RC a read-modify-write whose read went stale aborts instead of
losing the concurrent update.
"""

from __future__ import annotations

import enum
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .core import Blocked, EventCounter, IsolationLevel, Key, TransactionAborted


class KeyNotFound(KeyError):
    pass


class WriteConflictAbort(TransactionAborted):
    pass


class CertificationAbort(TransactionAborted):
    pass


class TxnStatus(enum.Enum):
    ACTIVE = "Active"
    COMMITTED = "Committed"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class VersionEntry:
    version: int
    value: int
    installer: Optional[int]
    commit_seq: int


@dataclass(eq=False)
class EngineTxn:
    txn_id: int
    level: IsolationLevel
    begin_seq: int
    snapshot_seq: int
    read_set: list = field(default_factory=list)
    first_read: dict = field(default_factory=dict)
    write_set: dict = field(default_factory=dict)
    status: TxnStatus = TxnStatus.ACTIVE
    abort_reason: Optional[str] = None
    commit_seq: Optional[int] = None
    installed: dict = field(default_factory=dict)
    end_seq: Optional[int] = None
    blocked_attempts: int = 0
    waiting_key: Optional[Key] = None
    locked: list = field(default_factory=list)

    @property
    def active(self) -> bool:
        return self.status is TxnStatus.ACTIVE


@dataclass(eq=False)
class _SerNode:
    txn_id: int
    begin: int
    commit: int
    reads: dict
    writes: dict
    out: set = field(default_factory=set)
    inn: set = field(default_factory=set)


class Engine:
    def __init__(
        self,
        relations: Optional[dict[str, int]] = None,
        initial_value: Callable[[Key], int] = lambda key: 0,
        counter: Optional[EventCounter] = None,
        wait_budget: int = 100,
        prune_every: int = 64,
    ):
        """``relations`` maps relation name to key count; keys ``0..n-1`` exist
        with version 0 and ``initial_value(key)``. ``None`` admits any key."""
        self.relations = dict(relations) if relations is not None else None
        self.initial_value = initial_value
        self.counter = counter or EventCounter()
        self.wait_budget = wait_budget
        self._chains: dict[Key, list[VersionEntry]] = {}
        self._locks: dict[Key, EngineTxn] = {}
        self._queues: dict[Key, deque] = {}
        self._live: dict[int, EngineTxn] = {}
        self._next_id = 1
        self._mutex = threading.RLock()
        self._ser_nodes: dict[int, _SerNode] = {}
        self._ser_readers: dict[tuple[Key, int], set[int]] = {}
        self._prune_every = prune_every
        self._commits_since_prune = 0

    # -- keys ---------------------------------------------------------------

    def _chain(self, key: Key) -> list[VersionEntry]:
        chain = self._chains.get(key)
        if chain is None:
            if self.relations is not None:
                n = self.relations.get(key.relation)
                if n is None or not 0 <= key.id < n:
                    raise KeyNotFound(key)
            chain = [VersionEntry(0, self.initial_value(key), None, 0)]
            self._chains[key] = chain
        return chain

    def get_latest_version(self, key: Key) -> int:
        with self._mutex:
            return self._chain(key)[-1].version

    def latest_value(self, key: Key) -> int:
        with self._mutex:
            return self._chain(key)[-1].value

    def chain(self, key: Key) -> tuple[VersionEntry, ...]:
        with self._mutex:
            return tuple(self._chain(key))

    def touched_keys(self) -> list[Key]:
        with self._mutex:
            return sorted(self._chains)

    # -- lifecycle ----------------------------------------------------------

    def begin(self, level: IsolationLevel, txn_id: Optional[int] = None) -> EngineTxn:
        with self._mutex:
            if txn_id is None:
                txn_id = self._next_id
            self._next_id = max(self._next_id, txn_id + 1)
            seq = self.counter.tick()
            txn = EngineTxn(txn_id, level, seq, seq)
            self._live[txn_id] = txn
            return txn

    def _check_active(self, txn: EngineTxn) -> None:
        if not txn.active:
            raise TransactionAborted(txn.txn_id, txn.abort_reason or "user") if txn.status is TxnStatus.ABORTED \
                else RuntimeError(f"txn {txn.txn_id} already committed")

    def read(self, txn: EngineTxn, key: Key) -> tuple[int, int]:
        with self._mutex:
            self._check_active(txn)
            chain = self._chain(key)
            if key in txn.write_set:
                value, version = txn.write_set[key], chain[-1].version + 1
            else:
                if txn.level is IsolationLevel.RC:
                    entry = chain[-1]
                else:
                    entry = _visible(chain, txn.snapshot_seq)
                value, version = entry.value, entry.version
                txn.first_read.setdefault(key, version)
            txn.read_set.append((key, version))
            return value, version

    def write(self, txn: EngineTxn, key: Key, value: int) -> None:
        with self._mutex:
            self._check_active(txn)
            if key in txn.write_set:
                txn.write_set[key] = value
                return
            chain = self._chain(key)
            latest = chain[-1]
            if txn.level is IsolationLevel.RC:
                seen = txn.first_read.get(key)
                if seen is not None and latest.version != seen:
                    self._fail(txn, "engine_ww_conflict", WriteConflictAbort)
            elif latest.commit_seq > txn.snapshot_seq:
                self._fail(txn, "engine_ww_conflict", WriteConflictAbort)

            owner = self._locks.get(key)
            queue = self._queues.get(key)
            if (owner is not None and owner is not txn) or (queue and queue[0] is not txn):
                if queue is None:
                    queue = self._queues[key] = deque()
                if txn.waiting_key != key:
                    queue.append(txn)
                    txn.waiting_key = key
                txn.blocked_attempts += 1
                if txn.blocked_attempts > self.wait_budget:
                    self._fail(txn, "engine_ww_conflict", WriteConflictAbort)
                raise Blocked(key)

            if queue:
                queue.popleft()
                if not queue:
                    del self._queues[key]
            txn.waiting_key = None
            txn.blocked_attempts = 0
            self._locks[key] = txn
            txn.locked.append(key)
            txn.write_set[key] = value

    def commit(self, txn: EngineTxn) -> int:
        with self._mutex:
            self._check_active(txn)
            if txn.level is IsolationLevel.SER:
                edges = self._ser_edges(txn)
                if self._closes_cycle(*edges):
                    self._fail(txn, "engine_ssi", CertificationAbort)
            seq = self.counter.tick()
            for key, value in txn.write_set.items():
                chain = self._chains[key]
                version = chain[-1].version + 1
                chain.append(VersionEntry(version, value, txn.txn_id, seq))
                txn.installed[key] = version
            txn.status = TxnStatus.COMMITTED
            txn.commit_seq = txn.end_seq = seq
            self._finish(txn)
            if txn.level is IsolationLevel.SER:
                self._add_ser_node(txn, *edges)
            return seq

    def abort(self, txn: EngineTxn, reason: str = "user") -> None:
        with self._mutex:
            if txn.active:
                txn.status = TxnStatus.ABORTED
                txn.abort_reason = reason
                txn.end_seq = self.counter.tick()
                self._finish(txn)

    def _fail(self, txn: EngineTxn, reason: str, exc_type) -> None:
        self.abort(txn, reason)
        raise exc_type(txn.txn_id, reason)

    def _finish(self, txn: EngineTxn) -> None:
        for key in txn.locked:
            if self._locks.get(key) is txn:
                del self._locks[key]
        txn.locked = []
        if txn.waiting_key is not None:
            queue = self._queues.get(txn.waiting_key)
            if queue is not None:
                try:
                    queue.remove(txn)
                except ValueError:
                    pass
                if not queue:
                    del self._queues[txn.waiting_key]
            txn.waiting_key = None
        self._live.pop(txn.txn_id, None)

    # -- SER certification ----------------------------------------------------

    def _ser_edges(self, txn: EngineTxn) -> tuple[set[int], set[int]]:
        nodes = self._ser_nodes
        out_edges: set[int] = set()
        in_edges: set[int] = set()
        for key, seen in txn.first_read.items():
            chain = self._chains[key]
            # WR: nearest SER installer at or below the observed version.
            for entry in reversed(chain[: seen + 1]):
                if entry.installer in nodes:
                    in_edges.add(entry.installer)
                    break
            # RW: nearest SER installer above it.
            for entry in chain[seen + 1:]:
                if entry.installer in nodes:
                    out_edges.add(entry.installer)
                    break
        for key in txn.write_set:
            chain = self._chains[key]
            for entry in reversed(chain):
                for reader in self._ser_readers.get((key, entry.version), ()):
                    if reader != txn.txn_id:
                        in_edges.add(reader)
                if entry.installer in nodes:
                    in_edges.add(entry.installer)
                    break
        return out_edges, in_edges

    def _closes_cycle(self, out_edges: set[int], in_edges: set[int]) -> bool:
        if not out_edges or not in_edges:
            return False
        if out_edges & in_edges:
            return True
        seen = set(out_edges)
        stack = list(out_edges)
        while stack:
            node = self._ser_nodes[stack.pop()]
            for nxt in node.out:
                if nxt in in_edges:
                    return True
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def _add_ser_node(self, txn: EngineTxn, out_edges: set[int], in_edges: set[int]) -> None:
        node = _SerNode(txn.txn_id, txn.begin_seq, txn.commit_seq, dict(txn.first_read), dict(txn.installed))
        self._ser_nodes[txn.txn_id] = node
        for other in out_edges:
            node.out.add(other)
            self._ser_nodes[other].inn.add(txn.txn_id)
        for other in in_edges:
            node.inn.add(other)
            self._ser_nodes[other].out.add(txn.txn_id)
        for key, version in node.reads.items():
            self._ser_readers.setdefault((key, version), set()).add(txn.txn_id)
        self._commits_since_prune += 1
        if self._commits_since_prune >= self._prune_every:
            self._commits_since_prune = 0
            self.prune_certifier()

    def prune_certifier(self) -> int:
        """Drop committed SER nodes that no live or retained transaction overlaps."""
        with self._mutex:
            horizon = min((t.begin_seq for t in self._live.values()), default=self.counter.now + 1)
            changed = True
            while changed:
                changed = False
                for node in self._ser_nodes.values():
                    if node.commit >= horizon and node.begin < horizon:
                        horizon = node.begin
                        changed = True
            doomed = [n for n in self._ser_nodes.values() if n.commit < horizon]
            for node in doomed:
                del self._ser_nodes[node.txn_id]
            for node in doomed:
                for other in node.out:
                    if other in self._ser_nodes:
                        self._ser_nodes[other].inn.discard(node.txn_id)
                for other in node.inn:
                    if other in self._ser_nodes:
                        self._ser_nodes[other].out.discard(node.txn_id)
                for key, version in node.reads.items():
                    readers = self._ser_readers.get((key, version))
                    if readers is not None:
                        readers.discard(node.txn_id)
                        if not readers:
                            del self._ser_readers[(key, version)]
            return len(doomed)

    def certifier_size(self) -> int:
        return len(self._ser_nodes)

    # -- debugging ------------------------------------------------------------

    def dump(self, keys: Optional[Iterable[Key]] = None) -> str:
        with self._mutex:
            wanted = sorted(keys) if keys is not None else sorted(self._chains)
            lines = []
            for key in wanted:
                chain = self._chain(key)
                parts = [
                    f"v{e.version}={e.value}@{e.commit_seq}" + (f"/t{e.installer}" if e.installer is not None else "")
                    for e in chain
                ]
                lines.append(f"{key}: " + " ".join(parts))
            return "\n".join(lines) + ("\n" if lines else "")


def _visible(chain: list[VersionEntry], snapshot_seq: int) -> VersionEntry:
    for entry in reversed(chain):
        if entry.commit_seq <= snapshot_seq:
            return entry
    return chain[0]

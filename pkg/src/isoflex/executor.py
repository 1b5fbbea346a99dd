"""Middle-tier concurrency control on top of a low-isolation engine.

Transactions run execute -> validate -> commit. During execution, reads and
writes whose (template, relation) sits on a vulnerable dependency for the
transaction's level are captured with the versions seen. Validation takes
shared validation locks on captured reads and exclusive ones on captured
writes (sorted key order, WAIT-DIE), then compares every captured read with
the latest committed version. Commit happens in the engine first; the
version cache is refreshed and the validation locks are released afterwards,
so engine commit order follows the middle-tier order.
"""

from __future__ import annotations

import enum
import itertools
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .analyzer import AnalysisResult, TemplateRegistry, analyze
from .core import (
    Blocked,
    HistoryRecord,
    IsolationLevel,
    Key,
    Mode,
    Op,
    Outcome,
    TransactionAborted,
    TransactionTemplate,
)
from .engine import Engine, EngineTxn
from .locktable import LockMode, LockVerdict, ValidationLockTable


class UnknownTemplate(KeyError):
    pass


class Phase(enum.Enum):
    EXECUTING = "Executing"
    VALIDATING = "Validating"
    COMMITTING = "Committing"
    DONE = "Done"


class Validation(enum.Enum):
    SUCCESS = "Success"
    WAIT = "Wait"


@dataclass
class CoordinatorConfig:
    vlt_buckets: int = 4096
    lease_ticks: int = 1000
    gc_period_ticks: int = 10_000
    retry_budget: int = 10
    cc_enabled: bool = True


@dataclass(frozen=True)
class VRead:
    key: Key
    version_observed: int


@dataclass
class VWrite:
    key: Key
    version_to_install: int


@dataclass(frozen=True)
class _ReadLog:
    key: Key
    relation: str
    version: int
    own: bool


@dataclass(eq=False)
class RuntimeTransaction:
    txn_id: int
    template: TransactionTemplate
    level: IsolationLevel
    engine_txn: EngineTxn
    args: tuple = ()
    vread_set: list = field(default_factory=list)
    vwrite_set: list = field(default_factory=list)
    phase: Phase = Phase.EXECUTING
    outcome: Optional[Outcome] = None
    abort_reason: Optional[str] = None
    commit_seq: Optional[int] = None
    record: Optional[HistoryRecord] = None
    validation_waits: int = 0
    _reads: list = field(default_factory=list)
    _writes: dict = field(default_factory=dict)  # key -> op index
    _ops: list = field(default_factory=list)
    _plan: list = field(default_factory=list)
    _checks: list = field(default_factory=list)
    _cursor: int = 0
    _held: list = field(default_factory=list)

    @property
    def begin_seq(self) -> int:
        return self.engine_txn.begin_seq

    @property
    def done(self) -> bool:
        return self.phase is Phase.DONE


class Coordinator:
    """The register/analysis/begin/execute/commit/rollback surface."""

    def __init__(
        self,
        engine: Engine,
        registry: TemplateRegistry,
        config: Optional[CoordinatorConfig] = None,
        governor=None,
    ):
        self.engine = engine
        self.registry = registry
        self.config = config or CoordinatorConfig()
        self.governor = governor
        self.vlt = ValidationLockTable(self.config.vlt_buckets, self.config.lease_ticks)
        self.history: list[HistoryRecord] = []
        self._history_lock = threading.Lock()
        self._ids = itertools.count(1)
        self._ids_lock = threading.Lock()
        self._last_gc = 0
        self.analysis: Optional[AnalysisResult] = None
        self.analysis_()

    # -- template interfaces ----------------------------------------------------

    def register(self, tpl: TransactionTemplate) -> int:
        tid = self.registry.register(tpl)
        self.analysis_()
        return tid

    def analysis_(self) -> AnalysisResult:
        self.analysis = analyze(self.registry)
        self._readers = {lvl: vs.reader_endpoints() for lvl, vs in self.analysis.vulnerable.items()}
        self._writers = {lvl: vs.writer_endpoints() for lvl, vs in self.analysis.vulnerable.items()}
        return self.analysis

    def tracks_read(self, template: str, relation: str, level: IsolationLevel) -> bool:
        return (template, relation) in self._readers[level]

    def tracks_write(self, template: str, relation: str, level: IsolationLevel) -> bool:
        return (template, relation) in self._writers[level]

    # -- transaction interfaces ------------------------------------------------------

    def begin(self, template: str, args: Sequence = (), level: Optional[IsolationLevel] = None) -> RuntimeTransaction:
        if template not in self.registry:
            raise UnknownTemplate(template)
        with self._ids_lock:
            txn_id = next(self._ids)
        if self.governor is not None:
            level = self.governor.level_for_new()
        elif level is None:
            raise ValueError("isolation level required without a governor")
        etxn = self.engine.begin(level, txn_id)
        txn = RuntimeTransaction(txn_id, self.registry[template], level, etxn, tuple(args))
        if self.governor is not None:
            self.governor.on_begin(txn_id, etxn.begin_seq)
        return txn

    def execute(self, txn: RuntimeTransaction, step_index: int, args: Optional[Sequence] = None,
                value: Optional[int] = None) -> int:
        """Run one template statement. Raises ``Blocked`` (retry later) or ``TransactionAborted``."""
        if txn.phase is not Phase.EXECUTING:
            raise RuntimeError(f"txn {txn.txn_id} is not executing")
        step = txn.template.steps[step_index]
        params = txn.args if args is None else tuple(args)
        key = Key(step.relation, int(params[step.key_param]))
        track = self.config.cc_enabled
        etxn = txn.engine_txn
        try:
            if step.mode is Mode.READ:
                own = key in etxn.write_set
                val, version = self.engine.read(etxn, key)
                txn._reads.append(_ReadLog(key, step.relation, version, own))
                txn._ops.append(Op(Mode.READ, key, version))
                if track and not own and self.tracks_read(txn.template.name, step.relation, txn.level):
                    txn.vread_set.append(VRead(key, version))
                return val
            if value is None:
                raise ValueError("write step needs a value")
            first = key not in etxn.write_set
            self.engine.write(etxn, key, value)
            if first:
                provisional = self.engine.get_latest_version(key) + 1
                txn._writes[key] = len(txn._ops)
                txn._ops.append(Op(Mode.WRITE, key, provisional))
                if track and self.tracks_write(txn.template.name, step.relation, txn.level):
                    txn.vwrite_set.append(VWrite(key, provisional))
            return value
        except Blocked:
            raise
        except TransactionAborted as exc:
            self._finish_aborted(txn, exc.reason)
            raise

    def _lock_plan(self, txn: RuntimeTransaction, civ_level: Optional[IsolationLevel], recheck: bool = True):
        modes: dict[Key, LockMode] = {}
        for r in txn.vread_set:
            modes.setdefault(r.key, LockMode.SHARED)
        for w in txn.vwrite_set:
            modes[w.key] = LockMode.EXCLUSIVE
        checks = [(r.key, r.version_observed, "version_mismatch") for r in txn.vread_set]
        if civ_level is not None:
            name = txn.template.name
            own = {(r.key, r.version_observed) for r in txn.vread_set}
            for r in txn._reads:
                if not r.own and self.tracks_read(name, r.relation, civ_level):
                    modes.setdefault(r.key, LockMode.SHARED)
                    if recheck and (r.key, r.version) not in own:
                        checks.append((r.key, r.version, "civ_version_mismatch"))
            for key in txn._writes:
                if self.tracks_write(name, key.relation, civ_level):
                    modes[key] = LockMode.EXCLUSIVE
        return sorted(modes.items()), checks

    def civ_lock_plan(self, txn: RuntimeTransaction, old: IsolationLevel, new: IsolationLevel) -> list:
        """Validation-lock demands under the stricter of ``old`` and ``new``."""
        level = min((old, new), key=lambda lvl: lvl.rank)
        return self._lock_plan(txn, level)[0]

    def validate(self, txn: RuntimeTransaction) -> Validation:
        """Acquire validation locks and check versions; call again while it returns WAIT."""
        if txn.phase is Phase.EXECUTING:
            if self.governor is not None and not self.governor.admit_validation(txn.txn_id):
                return Validation.WAIT
            txn.phase = Phase.VALIDATING
            if self.config.cc_enabled:
                civ_level, recheck = None, True
                if self.governor is not None:
                    civ_level = self.governor.civ_level(txn.txn_id)
                    recheck = self.governor.civ_recheck
                txn._plan, txn._checks = self._lock_plan(txn, civ_level, recheck)
        elif txn.phase is not Phase.VALIDATING:
            raise RuntimeError(f"txn {txn.txn_id} cannot validate in phase {txn.phase}")

        now = self.engine.counter.now
        while txn._cursor < len(txn._plan):
            key, mode = txn._plan[txn._cursor]
            verdict = self.vlt.try_lock(key, txn.txn_id, mode, now)
            if verdict is LockVerdict.GRANTED:
                txn._held.append(key)
                txn._cursor += 1
            elif verdict is LockVerdict.WAIT:
                txn.validation_waits += 1
                return Validation.WAIT
            else:
                self._abort(txn, "wait_die")

        for key, observed, reason in txn._checks:
            latest = self.vlt.cached_version(key, now)
            if latest is None:
                latest = self.engine.get_latest_version(key)
                self.vlt.set_cached_version(key, latest, now)
            if latest != observed:
                self._abort(txn, reason)
        txn._checks = []
        return Validation.SUCCESS

    def commit(self, txn: RuntimeTransaction) -> int:
        if txn.phase is Phase.EXECUTING and self.validate(txn) is Validation.WAIT:
            raise Blocked("validation pending")
        if txn.phase is not Phase.VALIDATING or txn._checks or txn._cursor < len(txn._plan):
            raise RuntimeError(f"txn {txn.txn_id} has not passed validation")
        txn.phase = Phase.COMMITTING
        etxn = txn.engine_txn
        try:
            seq = self.engine.commit(etxn)
        except TransactionAborted as exc:
            self._finish_aborted(txn, exc.reason)
            raise
        now = self.engine.counter.now
        for w in txn.vwrite_set:
            w.version_to_install = etxn.installed[w.key]
            self.vlt.set_cached_version(w.key, w.version_to_install, now)
        tracked = {w.key for w in txn.vwrite_set}
        for key, version in etxn.installed.items():
            if key not in tracked:
                self.vlt.set_cached_version(key, version, now, create=False)
            txn._ops[txn._writes[key]] = Op(Mode.WRITE, key, version)
        self._release(txn, now)
        txn.commit_seq = seq
        txn.outcome = Outcome.COMMITTED
        self._close(txn)
        self._maybe_gc(now)
        return seq

    def rollback(self, txn: RuntimeTransaction, reason: str = "user") -> None:
        if txn.phase is Phase.DONE:
            return
        self.engine.abort(txn.engine_txn, reason)
        self._finish_aborted(txn, reason)

    # -- internals -----------------------------------------------------------------

    def _abort(self, txn: RuntimeTransaction, reason: str) -> None:
        self.engine.abort(txn.engine_txn, reason)
        self._finish_aborted(txn, reason)
        raise TransactionAborted(txn.txn_id, reason)

    def _finish_aborted(self, txn: RuntimeTransaction, reason: str) -> None:
        if txn.phase is Phase.DONE:
            return
        self._release(txn, self.engine.counter.now)
        txn.outcome = Outcome.ABORTED
        txn.abort_reason = txn.engine_txn.abort_reason or reason
        self._close(txn)

    def _release(self, txn: RuntimeTransaction, now: int) -> None:
        pending = txn._plan[txn._cursor][0] if txn._cursor < len(txn._plan) else None
        for key in txn._held:
            self.vlt.release(key, txn.txn_id, now)
        if pending is not None and txn.phase is not Phase.EXECUTING:
            self.vlt.release(pending, txn.txn_id, now)
        txn._held = []
        txn._cursor = len(txn._plan)

    def _close(self, txn: RuntimeTransaction) -> None:
        txn.phase = Phase.DONE
        etxn = txn.engine_txn
        rec = HistoryRecord(
            txn.txn_id,
            txn.template.name,
            txn.level,
            etxn.begin_seq,
            etxn.end_seq,
            txn.outcome,
            None if txn.outcome is Outcome.COMMITTED else txn.abort_reason,
            tuple(txn._ops),
        )
        txn.record = rec
        with self._history_lock:
            self.history.append(rec)
        if self.governor is not None:
            self.governor.on_finish(txn.txn_id)

    def _maybe_gc(self, now: int) -> None:
        if now - self._last_gc >= self.config.gc_period_ticks:
            self._last_gc = now
            self.vlt.gc_sweep(now)

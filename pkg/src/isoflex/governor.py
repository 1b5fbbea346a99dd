"""Online isolation-level transitions.

State machine: Steady(level) -> Barrier(old, new) -> Draining(old, new) -> Steady(new).

On a request the governor stamps a transition sequence number and closes the
validation gate until every transaction already validating has finished. It
then drains the transactions that were live at the request; new transactions
get the new level from the moment of the request. Every transaction that was
live at the request, or that began before the governor returned to Steady,
validates with cross-isolation validation (CIV): its lock plan and read
recheck follow the stricter of the levels it straddles.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import Optional

from .core import EventCounter, IsolationLevel


class GovernorError(RuntimeError):
    pass


class CivMode(enum.Enum):
    FULL = "full"
    NO_RECHECK = "no-recheck"  # barrier and stricter locks, no read-set recheck
    NAIVE = "naive"  # switch immediately, no barrier, no CIV


class Phase(enum.Enum):
    STEADY = "Steady"
    BARRIER = "Barrier"
    DRAINING = "Draining"


@dataclass(frozen=True)
class GovernorState:
    phase: Phase
    level: IsolationLevel
    old: Optional[IsolationLevel] = None
    new: Optional[IsolationLevel] = None
    remaining_old: frozenset = frozenset()
    transition_seq: Optional[int] = None


@dataclass(frozen=True)
class TransitionRecord:
    old: IsolationLevel
    new: IsolationLevel
    requested_seq: int
    completed_seq: Optional[int] = None


def stricter(levels) -> IsolationLevel:
    """The level whose vulnerable set is largest: RC, then SI, then SER."""
    return min(levels, key=lambda lvl: lvl.rank)


class TransitionGovernor:
    def __init__(self, level: IsolationLevel, counter: Optional[EventCounter] = None,
                 civ_mode: CivMode = CivMode.FULL):
        self.counter = counter or EventCounter()
        self.civ_mode = civ_mode
        self._phase = Phase.STEADY
        self._level = level
        self._old: Optional[IsolationLevel] = None
        self._seq: Optional[int] = None
        self._remaining: set[int] = set()
        self._validating: set[int] = set()
        self._live: dict[int, int] = {}
        self._civ: dict[int, set] = {}
        self._mutex = threading.RLock()
        self.transitions: list[TransitionRecord] = []

    # -- inspection ---------------------------------------------------------------

    @property
    def phase(self) -> Phase:
        return self._phase

    @property
    def steady(self) -> bool:
        return self._phase is Phase.STEADY

    @property
    def level(self) -> IsolationLevel:
        """Level handed to new transactions."""
        return self._level

    def state(self) -> GovernorState:
        with self._mutex:
            if self._phase is Phase.STEADY:
                return GovernorState(Phase.STEADY, self._level)
            return GovernorState(self._phase, self._level, self._old, self._level,
                                 frozenset(self._remaining), self._seq)

    def level_for_new(self) -> IsolationLevel:
        return self._level

    @property
    def civ_recheck(self) -> bool:
        return self.civ_mode is CivMode.FULL

    def civ_level(self, txn_id: int) -> Optional[IsolationLevel]:
        levels = self._civ.get(txn_id)
        return stricter(levels) if levels else None

    # -- events ------------------------------------------------------------------

    def on_begin(self, txn_id: int, begin_seq: int) -> None:
        with self._mutex:
            self._live[txn_id] = begin_seq
            if self._phase is not Phase.STEADY:
                self._civ[txn_id] = {self._old, self._level}

    def request_transition(self, new: IsolationLevel) -> bool:
        """Start a transition; False if one is in flight or nothing would change."""
        with self._mutex:
            if self._phase is not Phase.STEADY or new is self._level:
                return False
            old = self._level
            seq = self.counter.tick()
            self.transitions.append(TransitionRecord(old, new, seq))
            self._level = new
            if self.civ_mode is CivMode.NAIVE:
                self._complete(seq)
                return True
            self._old = old
            self._seq = seq
            self._phase = Phase.BARRIER
            self._remaining = {t for t, b in self._live.items() if b < seq}
            for t in self._remaining:
                self._civ.setdefault(t, set()).update((old, new))
            self._advance()
            return True

    def admit_validation(self, txn_id: int) -> bool:
        """Gate in front of validation; closed for newcomers during the barrier."""
        with self._mutex:
            if txn_id in self._validating:
                return True
            if self._phase is Phase.BARRIER:
                return False
            self._validating.add(txn_id)
            return True

    def on_finish(self, txn_id: int) -> None:
        with self._mutex:
            self._live.pop(txn_id, None)
            self._validating.discard(txn_id)
            self._civ.pop(txn_id, None)
            if self._phase is Phase.DRAINING and txn_id in self._remaining:
                self.drain_tick(txn_id)
            else:
                self._advance()

    def drain_tick(self, txn_id: int) -> GovernorState:
        with self._mutex:
            if self._phase is not Phase.DRAINING or txn_id not in self._remaining:
                raise GovernorError(f"txn {txn_id} is not draining")
            self._remaining.discard(txn_id)
            self._advance()
            return self.state()

    # -- internals ------------------------------------------------------------------

    def _advance(self) -> None:
        if self._phase is Phase.BARRIER and not self._validating:
            self._phase = Phase.DRAINING
            self._remaining &= set(self._live)
        if self._phase is Phase.DRAINING and not self._remaining:
            self._complete(self.counter.tick())

    def _complete(self, seq: int) -> None:
        last = self.transitions[-1]
        self.transitions[-1] = TransitionRecord(last.old, last.new, last.requested_seq, seq)
        self._phase = Phase.STEADY
        self._old = None
        self._seq = None
        self._remaining = set()

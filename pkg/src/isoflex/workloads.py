"""Benchmark template sets and a seeded bounded Zipfian sampler."""

from __future__ import annotations

import math
import random
from typing import Optional

from .analyzer import TemplateRegistry
from .core import TransactionTemplate

CHECKING = "checking"
SAVINGS = "savings"
USERTABLE = "usertable"

SMALLBANK_TEMPLATES = ("Amg", "Bal", "DC", "TS", "WC")


def generate_smallbank_templates() -> TemplateRegistry:
    """The five SmallBank procedures keyed by customer id.

    Step order matters to the analyzer: WC reads checking before savings.
    """
    reg = TemplateRegistry()
    # Amg(n1, n2): move all of n1's funds into n2's checking account.
    reg.register(TransactionTemplate.build("Amg", 2, [
        ("r", CHECKING, 0), ("r", SAVINGS, 0),
        ("w", CHECKING, 0), ("w", SAVINGS, 0),
        ("r", CHECKING, 1), ("w", CHECKING, 1),
    ]))
    reg.register(TransactionTemplate.build("Bal", 1, [("r", CHECKING, 0), ("r", SAVINGS, 0)]))
    reg.register(TransactionTemplate.build("DC", 1, [("r", CHECKING, 0), ("w", CHECKING, 0)]))
    reg.register(TransactionTemplate.build("TS", 1, [("r", SAVINGS, 0), ("w", SAVINGS, 0)]))
    reg.register(TransactionTemplate.build("WC", 1, [
        ("r", CHECKING, 0), ("r", SAVINGS, 0), ("w", CHECKING, 0),
    ]))
    return reg


YCSB_TEMPLATE = "YCSB"
YCSB_READ_STEP = 0
YCSB_WRITE_STEP = 1


def generate_ycsb_templates(ops_per_txn: int = 10, write_pct: float = 10.0, seed: int = 0):
    """One template whose statements are a keyed read and a keyed blind write.

    The read and the write take separate parameters: each statement picks its
    own key, so the analyzer must not assume a read and a later write of the
    same transaction hit the same item. Pass ``(key, key)`` as arguments.
    Returns the registry and a sampler yielding, per transaction, a list of
    ``(step_index, key_id)`` pairs. Keys are drawn by the caller-supplied key
    sampler passed to ``sampler(key_sampler)``.
    """
    if not 0 <= write_pct <= 100:
        raise ValueError("write_pct must be within [0, 100]")
    if ops_per_txn < 1:
        raise ValueError("ops_per_txn must be >= 1")
    reg = TemplateRegistry()
    reg.register(TransactionTemplate.build(YCSB_TEMPLATE, 2, [("r", USERTABLE, 0), ("w", USERTABLE, 1)]))
    rng = random.Random(seed)

    def sampler(key_sampler, write_pct_now: Optional[float] = None) -> list[tuple[int, int]]:
        pct = write_pct if write_pct_now is None else write_pct_now
        ops = []
        for _ in range(ops_per_txn):
            step = YCSB_WRITE_STEP if rng.random() * 100 < pct else YCSB_READ_STEP
            ops.append((step, key_sampler()))
        return ops

    return reg, sampler


class ZipfSampler:
    """Bounded Zipf over ``0..n-1`` via rejection-inversion (Hormann & Derflinger).

    Rank 0 is the hottest item. ``skew == 0`` degenerates to uniform.
    """

    def __init__(self, n: int, skew: float, rng: random.Random):
        if n < 1:
            raise ValueError("n must be >= 1")
        if skew < 0:
            raise ValueError("skew must be >= 0")
        self.n = n
        self.skew = skew
        self.rng = rng
        if skew > 0:
            self._h_x1 = self._h(1.5) - 1.0
            self._h_n = self._h(n + 0.5)
            self._s = 2.0 - self._h_inv(self._h(2.5) - self._hpow(2.0))

    def _hpow(self, x: float) -> float:
        return math.exp(-self.skew * math.log(x))

    def _h(self, x: float) -> float:
        log_x = math.log(x)
        return _helper2((1.0 - self.skew) * log_x) * log_x

    def _h_inv(self, x: float) -> float:
        t = max(x * (1.0 - self.skew), -1.0)
        return math.exp(_helper1(t) * x)

    def __call__(self) -> int:
        if self.skew == 0:
            return self.rng.randrange(self.n)
        while True:
            u = self._h_n + self.rng.random() * (self._h_x1 - self._h_n)
            x = self._h_inv(u)
            k = int(x + 0.5)
            k = min(max(k, 1), self.n)
            if k - x <= self._s or u >= self._h(k + 0.5) - self._hpow(k):
                return k - 1


def _helper1(x: float) -> float:
    # log1p(x) / x, stable near 0
    if abs(x) > 1e-8:
        return math.log1p(x) / x
    return 1.0 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x))


def _helper2(x: float) -> float:
    # expm1(x) / x, stable near 0
    if abs(x) > 1e-8:
        return math.expm1(x) / x
    return 1.0 + x * 0.5 * (1.0 + x * (1.0 / 3.0) * (1.0 + 0.25 * x))

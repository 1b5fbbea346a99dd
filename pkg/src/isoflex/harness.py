"""Workload driver, run metrics and scripted scenarios.

Sessions are generators interleaved by a seeded scheduler: each step advances
one session by one statement (or one retry of a blocked statement). A session
yields ``PROGRESS`` when something changed and ``BLOCKED`` when it has to
wait; a watchdog counts stretches with no progress at all.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator, Optional

from .adapter import Adapter, HeuristicThresholds, load_weights
from .core import (
    Blocked,
    EventCounter,
    HistoryRecord,
    IsolationLevel,
    Key,
    TransactionAborted,
    write_history,
)
from .engine import Engine
from .executor import Coordinator, CoordinatorConfig, RuntimeTransaction, Validation
from .governor import CivMode, TransitionGovernor
from .oracle import check_history
from .workloads import (
    CHECKING,
    SAVINGS,
    SMALLBANK_TEMPLATES,
    USERTABLE,
    YCSB_TEMPLATE,
    ZipfSampler,
    generate_smallbank_templates,
    generate_ycsb_templates,
)

PROGRESS = "progress"
BLOCKED = "blocked"
INITIAL_BALANCE = 1000


class ConfigError(ValueError):
    pass


@dataclass
class WorkloadConfig:
    benchmark: str = "smallbank"
    sessions: int = 8
    duration_ops: int = 1000
    skew: float = 0.7
    write_pct: float = 10.0
    ops_per_txn: int = 10
    template_mix: dict = field(default_factory=lambda: {name: 20 for name in SMALLBANK_TEMPLATES})
    seed: int = 0
    level_mode: str = "fixed"
    level: str = "RC"
    cc_enabled: bool = True
    civ_enabled: bool = True
    civ_recheck: bool = True
    accounts: int = 40_000
    keys: int = 100_000
    think_ticks: int = 0
    transitions: list = field(default_factory=list)  # [[after_txns, level], ...]
    shift_at: Optional[int] = None  # logical txn count at which write_pct changes
    shift_write_pct: Optional[float] = None
    adapt_every: int = 200
    batch_size: int = 512
    weights: Optional[str] = None
    density_threshold: float = 0.1
    write_ratio_threshold: float = 0.3
    retry_budget: int = 10
    engine_wait_budget: int = 100
    stall_limit: int = 20_000
    vlt_buckets: int = 4096
    lease_ticks: int = 1000
    gc_period_ticks: int = 10_000

    def validate(self) -> "WorkloadConfig":
        if self.benchmark not in ("smallbank", "ycsb"):
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")
        if self.level_mode not in ("fixed", "adaptive"):
            raise ConfigError(f"level_mode must be fixed or adaptive, got {self.level_mode!r}")
        for name in ("sessions", "duration_ops", "ops_per_txn", "accounts", "keys", "adapt_every", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.skew < 0:
            raise ConfigError("skew must be >= 0")
        for pct in (self.write_pct, self.shift_write_pct):
            if pct is not None and not 0 <= pct <= 100:
                raise ConfigError("write_pct must be within [0, 100]")
        if self.benchmark == "smallbank":
            unknown = set(self.template_mix) - set(SMALLBANK_TEMPLATES)
            if unknown:
                raise ConfigError(f"unknown templates in template_mix: {sorted(unknown)}")
            if any(w < 0 for w in self.template_mix.values()) or sum(self.template_mix.values()) != 100:
                raise ConfigError("template_mix weights must be non-negative and sum to 100")
            if self.template_mix.get("Amg", 0) and self.accounts < 2:
                raise ConfigError("Amg needs at least two accounts")
        try:
            IsolationLevel.parse(self.level)
            for _, lvl in self.transitions:
                IsolationLevel.parse(lvl)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "WorkloadConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "WorkloadConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


@dataclass
class RunMetrics:
    committed: int = 0
    aborted: dict = field(default_factory=dict)
    terminal_aborts: int = 0
    retries: int = 0
    per_level: dict = field(default_factory=dict)
    transitions: int = 0
    validation_waits: dict = field(default_factory=dict)
    watchdog_stalls: int = 0
    steps: int = 0

    def note_wait(self, ticks: int) -> None:
        bucket = 0 if ticks == 0 else 1 << (ticks - 1).bit_length()
        self.validation_waits[bucket] = self.validation_waits.get(bucket, 0) + 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class RunResult:
    history: list
    metrics: RunMetrics
    engine: Engine
    coordinator: Coordinator
    governor: TransitionGovernor

    @property
    def transitions(self):
        return self.governor.transitions


def _civ_mode(cfg: WorkloadConfig) -> CivMode:
    if not cfg.civ_enabled:
        return CivMode.NAIVE
    return CivMode.FULL if cfg.civ_recheck else CivMode.NO_RECHECK


def _attempt(fn: Callable):
    """Retry ``fn`` while it raises ``Blocked``, yielding BLOCKED in between."""
    while True:
        try:
            return fn()
        except Blocked:
            yield BLOCKED


class _Sim:
    def __init__(self, cfg: WorkloadConfig):
        self.cfg = cfg
        counter = EventCounter()
        if cfg.benchmark == "smallbank":
            registry = generate_smallbank_templates()
            relations = {CHECKING: cfg.accounts, SAVINGS: cfg.accounts}
            initial = lambda key: INITIAL_BALANCE  # noqa: E731
            self.n_keys = cfg.accounts
        else:
            registry, self.ycsb = generate_ycsb_templates(cfg.ops_per_txn, cfg.write_pct, cfg.seed)
            relations = {USERTABLE: cfg.keys}
            initial = lambda key: 0  # noqa: E731
            self.n_keys = cfg.keys
        self.engine = Engine(relations, initial, counter, wait_budget=cfg.engine_wait_budget)
        self.governor = TransitionGovernor(IsolationLevel.parse(cfg.level), counter, _civ_mode(cfg))
        co_cfg = CoordinatorConfig(cfg.vlt_buckets, cfg.lease_ticks, cfg.gc_period_ticks, cfg.retry_budget, cfg.cc_enabled)
        self.co = Coordinator(self.engine, registry, co_cfg, self.governor)
        self.metrics = RunMetrics()
        self.issued = 0
        self.finished = 0
        self.pending_transitions = sorted((int(n), IsolationLevel.parse(lvl)) for n, lvl in cfg.transitions)
        self.adapter = None
        if cfg.level_mode == "adaptive":
            weights = load_weights(cfg.weights) if cfg.weights else None
            self.adapter = Adapter(cfg.batch_size, cfg.seed, weights,
                                   HeuristicThresholds(cfg.density_threshold, cfg.write_ratio_threshold),
                                   relations=sorted(relations))
            self._next_adapt = cfg.adapt_every
        self.live: dict[int, Optional[RuntimeTransaction]] = {}

    # -- request generation ----------------------------------------------------------

    def _next_request(self, rng: random.Random, zipf: ZipfSampler):
        if self.cfg.benchmark == "smallbank":
            names = [n for n in SMALLBANK_TEMPLATES if self.cfg.template_mix.get(n, 0) > 0]
            name = rng.choices(names, weights=[self.cfg.template_mix[n] for n in names])[0]
            a = zipf()
            if name == "Amg":
                b = zipf()
                while b == a:
                    b = zipf()
                return name, (a, b), rng.randint(1, 100)
            return name, (a,), rng.randint(1, 100)
        pct = None
        if self.cfg.shift_at is not None and self.issued > self.cfg.shift_at:
            pct = self.cfg.shift_write_pct
        return YCSB_TEMPLATE, self.ycsb(zipf, pct), None

    # -- procedures ----------------------------------------------------------------

    def _think(self) -> Iterator[str]:
        for _ in range(self.cfg.think_ticks):
            yield PROGRESS

    def _body(self, txn: RuntimeTransaction, args: tuple, amount, rng: random.Random) -> Iterator[str]:
        co = self.co

        def op(i, value=None, params=None):
            result = yield from _attempt(lambda: co.execute(txn, i, params, value))
            yield PROGRESS
            yield from self._think()
            return result

        name = txn.template.name
        if name == YCSB_TEMPLATE:
            for idx, key_id in args:
                value = rng.randint(0, 1 << 30) if idx == 1 else None
                yield from op(idx, value, (key_id, key_id))
        elif name == "Bal":
            yield from op(0)
            yield from op(1)
        elif name == "DC":
            chk = yield from op(0)
            yield from op(1, chk + amount)
        elif name == "TS":
            sav = yield from op(0)
            yield from op(1, sav + amount)
        elif name == "WC":
            chk = yield from op(0)
            sav = yield from op(1)
            penalty = 1 if chk + sav < amount else 0
            yield from op(2, chk - amount - penalty)
        elif name == "Amg":
            chk = yield from op(0)
            sav = yield from op(1)
            yield from op(2, 0)
            yield from op(3, 0)
            dest = yield from op(4)
            yield from op(5, dest + chk + sav)
        else:
            raise ConfigError(f"no procedure for template {name!r}")

    # -- sessions --------------------------------------------------------------------

    def session(self, sid: int) -> Iterator[str]:
        cfg = self.cfg
        rng = random.Random(cfg.seed * 1_000_003 + sid)
        zipf = ZipfSampler(self.n_keys, cfg.skew, rng)
        while self.issued < cfg.duration_ops:
            self.issued += 1
            name, args, amount = self._next_request(rng, zipf)
            attempts = 0
            while True:
                txn = self.co.begin(name, args if name != YCSB_TEMPLATE else ())
                self.live[sid] = txn
                try:
                    yield from self._body(txn, args, amount, rng)
                    while self.co.validate(txn) is Validation.WAIT:
                        yield BLOCKED
                    # The engine commit is a separate round trip; validation locks stay held across it.
                    yield PROGRESS
                    self.co.commit(txn)
                except TransactionAborted as exc:
                    self.metrics.aborted[exc.reason] = self.metrics.aborted.get(exc.reason, 0) + 1
                    self.metrics.note_wait(txn.validation_waits)
                    self._done()
                    yield PROGRESS
                    attempts += 1
                    if attempts > cfg.retry_budget:
                        self.metrics.terminal_aborts += 1
                        break
                    self.metrics.retries += 1
                    continue
                lvl = txn.level.value
                self.metrics.per_level[lvl] = self.metrics.per_level.get(lvl, 0) + 1
                self.metrics.committed += 1
                self.metrics.note_wait(txn.validation_waits)
                self._done()
                yield PROGRESS
                break
            self.live[sid] = None
            self.finished += 1

    def _done(self) -> None:
        if self.adapter is not None and len(self.co.history) >= self._next_adapt:
            self._next_adapt += self.cfg.adapt_every
            self.adapter.adapt_step(self.co.history, self.governor)

    def _fire_transitions(self) -> None:
        while self.pending_transitions and self.finished >= self.pending_transitions[0][0]:
            if not self.governor.steady:
                return
            _, level = self.pending_transitions.pop(0)
            self.governor.request_transition(level)

    def run(self) -> RunResult:
        sched = random.Random(self.cfg.seed)
        sessions = {sid: self.session(sid) for sid in range(self.cfg.sessions)}
        idle = 0
        while sessions:
            self._fire_transitions()
            sid = sched.choice(list(sessions))
            self.metrics.steps += 1
            try:
                token = next(sessions[sid])
            except StopIteration:
                del sessions[sid]
                idle = 0
                continue
            idle = idle + 1 if token == BLOCKED else 0
            if idle > self.cfg.stall_limit:
                self.metrics.watchdog_stalls += 1
                self._break_stall()
                idle = 0
        self.metrics.transitions = len(self.governor.transitions)
        return RunResult(self.co.history, self.metrics, self.engine, self.co, self.governor)

    def _break_stall(self) -> None:
        # Abort the youngest in-flight transaction; its session retries it.
        txns = [t for t in self.live.values() if t is not None and not t.done]
        if txns:
            victim = max(txns, key=lambda t: t.txn_id)
            self.co.rollback(victim, "user")



def simulate(cfg: WorkloadConfig) -> RunResult:
    return _Sim(cfg.validate()).run()


def run(cfg: WorkloadConfig, history_path=None) -> tuple:
    """Run a workload; write the history log if a path is given. Returns (path, metrics)."""
    result = simulate(cfg)
    if history_path is not None:
        write_history(history_path, result.history)
    return history_path, result.metrics


def balance_total(engine: Engine, accounts: int) -> int:
    return sum(engine.latest_value(Key(rel, i)) for rel in (CHECKING, SAVINGS) for i in range(accounts))


# -- scripted scenarios ----------------------------------------------------------------


@dataclass
class ScenarioResult:
    outcomes: dict
    serializable: bool
    history: list
    witness: Optional[tuple] = None

    @property
    def message(self) -> str:
        t1 = self.outcomes.get("T1", "committed")
        return f"T1 {t1}, " + ("serializable" if self.serializable else "cycle found")


def _finish(co: Coordinator, txn: RuntimeTransaction) -> str:
    try:
        if co.validate(txn) is Validation.WAIT:
            raise RuntimeError("scripted transaction unexpectedly waits")
        co.commit(txn)
        return "committed"
    except TransactionAborted:
        return "aborted"


def _scenario_result(co: Coordinator, outcomes: dict) -> ScenarioResult:
    verdict = check_history(co.history)
    return ScenarioResult(outcomes, verdict.serializable, list(co.history), verdict.witness_cycle)


def scenario_example3(civ_enabled: bool = True, transition: bool = True,
                      old: IsolationLevel = IsolationLevel.SER, new: IsolationLevel = IsolationLevel.RC,
                      customer: int = 7) -> ScenarioResult:
    """WC (T1) and TS (T2) start under ``old``; T2 commits, the switch to ``new``
    is requested, Bal (T3) runs under ``new``, then T1 writes and commits."""
    engine = Engine(initial_value=lambda key: INITIAL_BALANCE)
    gov = TransitionGovernor(old, engine.counter, CivMode.FULL if civ_enabled else CivMode.NAIVE)
    co = Coordinator(engine, generate_smallbank_templates(), governor=gov)
    args = (customer,)
    outcomes = {}
    t1 = co.begin("WC", args)
    chk = co.execute(t1, 0)
    co.execute(t1, 1)
    t2 = co.begin("TS", args)
    sav = co.execute(t2, 0)
    co.execute(t2, 1, value=sav + 10)
    outcomes["T2"] = _finish(co, t2)
    if transition:
        gov.request_transition(new)
    t3 = co.begin("Bal", args)
    co.execute(t3, 0)
    co.execute(t3, 1)
    outcomes["T3"] = _finish(co, t3)
    try:
        co.execute(t1, 2, value=chk - 50)
        outcomes["T1"] = _finish(co, t1)
    except TransactionAborted:
        outcomes["T1"] = "aborted"
    return _scenario_result(co, outcomes)


def scenario_example1(level: IsolationLevel = IsolationLevel.SI, cc_enabled: bool = False,
                      customer: int = 3) -> ScenarioResult:
    """Bal -rw-> WC -rw-> TS -wr-> Bal on one customer, at a single level."""
    engine = Engine(initial_value=lambda key: INITIAL_BALANCE)
    co = Coordinator(engine, generate_smallbank_templates(), CoordinatorConfig(cc_enabled=cc_enabled))
    args = (customer,)
    outcomes = {}
    wc = co.begin("WC", args, level)
    chk = co.execute(wc, 0)
    co.execute(wc, 1)
    ts = co.begin("TS", args, level)
    sav = co.execute(ts, 0)
    co.execute(ts, 1, value=sav + 10)
    outcomes["TS"] = _finish(co, ts)
    bal = co.begin("Bal", args, level)
    co.execute(bal, 0)
    co.execute(bal, 1)
    outcomes["Bal"] = _finish(co, bal)
    try:
        co.execute(wc, 2, value=chk - 50)
        outcomes["WC"] = _finish(co, wc)
    except TransactionAborted:
        outcomes["WC"] = "aborted"
    return _scenario_result(co, outcomes)


def write_skew_registry():
    from .analyzer import TemplateRegistry
    from .core import TransactionTemplate

    return TemplateRegistry([
        TransactionTemplate.build("SkewX", 1, [("r", "x", 0), ("r", "y", 0), ("w", "x", 0)]),
        TransactionTemplate.build("SkewY", 1, [("r", "x", 0), ("r", "y", 0), ("w", "y", 0)]),
    ])


def scenario_write_skew(level: IsolationLevel = IsolationLevel.SI, cc_enabled: bool = False) -> ScenarioResult:
    """Two transactions read x and y; one writes x, the other y."""
    engine = Engine(initial_value=lambda key: 50)
    co = Coordinator(engine, write_skew_registry(), CoordinatorConfig(cc_enabled=cc_enabled))
    outcomes = {}
    a = co.begin("SkewX", (0,), level)
    b = co.begin("SkewY", (0,), level)
    try:
        xa, ya = co.execute(a, 0), co.execute(a, 1)
        xb, yb = co.execute(b, 0), co.execute(b, 1)
        co.execute(a, 2, value=xa + ya - 100)
        co.execute(b, 2, value=xb + yb - 100)
    except TransactionAborted:
        pass
    for label, txn in (("T1", a), ("T2", b)):
        outcomes[label] = txn.outcome.value.lower() if txn.done else _finish(co, txn)
    return _scenario_result(co, outcomes)

import json
import random
from collections import Counter

import pytest

from isoflex.core import IsolationLevel, read_history
from isoflex.engine import Engine
from isoflex.executor import Coordinator
from isoflex.governor import TransitionGovernor
from isoflex.harness import (
    INITIAL_BALANCE,
    ConfigError,
    WorkloadConfig,
    balance_total,
    run,
    simulate,
)
from isoflex.oracle import check_history
from isoflex.workloads import ZipfSampler, generate_smallbank_templates, generate_ycsb_templates


def test_config_validation():
    with pytest.raises(ConfigError):
        WorkloadConfig(template_mix={"Amg": 50, "Bal": 40}).validate()
    with pytest.raises(ConfigError):
        WorkloadConfig(skew=-1).validate()
    with pytest.raises(ConfigError):
        WorkloadConfig(sessions=0).validate()
    with pytest.raises(ConfigError):
        WorkloadConfig.from_dict({"sessionz": 3})
    with pytest.raises(ConfigError):
        WorkloadConfig(level="RR").validate()
    assert WorkloadConfig.from_dict({"benchmark": "ycsb", "write_pct": 100}).write_pct == 100


def test_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"duration_ops": 5, "sessions": 2}))
    assert WorkloadConfig.load(path).duration_ops == 5
    path.write_text("[1]")
    with pytest.raises(ConfigError):
        WorkloadConfig.load(path)


@pytest.mark.parametrize("bench", ["smallbank", "ycsb"])
@pytest.mark.parametrize("level", ["RC", "SI", "SER"])
def test_accounting_identity(bench, level):
    cfg = WorkloadConfig(benchmark=bench, sessions=6, duration_ops=80, accounts=20, keys=50, skew=0.9, level=level, seed=2)
    m = simulate(cfg).metrics
    assert m.committed + m.terminal_aborts == cfg.duration_ops
    assert sum(m.aborted.values()) == m.retries + m.terminal_aborts
    assert m.watchdog_stalls == 0


def test_single_session_is_serial_and_reproducible(tmp_path):
    cfg = WorkloadConfig(sessions=1, duration_ops=100, accounts=10, seed=4, level="RC")
    a, b = simulate(cfg), simulate(cfg)
    assert check_history(a.history).serializable
    assert a.history == b.history
    path, metrics = run(cfg, tmp_path / "h.jsonl")
    assert read_history(path) == a.history and metrics.committed == 100


def test_balance_conservation_under_transfers():
    cfg = WorkloadConfig(sessions=8, duration_ops=200, accounts=15, skew=0.9, seed=3, level="RC",
                         template_mix={"Amg": 60, "Bal": 40, "DC": 0, "TS": 0, "WC": 0})
    result = simulate(cfg)
    assert check_history(result.history).serializable
    assert balance_total(result.engine, 15) == 2 * 15 * INITIAL_BALANCE


def test_ycsb_templates():
    for pct in (0, 10, 100):
        _, sampler = generate_ycsb_templates(10, pct, seed=1)
        steps = [s for _ in range(50) for s, _ in sampler(lambda: 0)]
        writes = sum(steps)
        if pct == 0:
            assert writes == 0
        elif pct == 100:
            assert writes == len(steps)
        else:
            assert 0 < writes < len(steps)
    with pytest.raises(ValueError):
        generate_ycsb_templates(10, 101)


def test_smallbank_bal_is_read_only():
    reg = generate_smallbank_templates()
    assert all(s.mode.value == "Read" for s in reg["Bal"].steps)


def test_zipf_distribution():
    rng = random.Random(0)
    z = ZipfSampler(10, 1.0, rng)
    counts = Counter(z() for _ in range(100_000))
    harmonic = sum(1 / k for k in range(1, 11))
    for k in range(10):
        assert abs(counts[k] / 100_000 - (1 / (k + 1)) / harmonic) < 0.01
    uniform = Counter(ZipfSampler(4, 0.0, rng)() for _ in range(40_000))
    assert all(abs(c / 40_000 - 0.25) < 0.02 for c in uniform.values())


def test_think_ticks_do_not_change_accounting():
    cfg = WorkloadConfig(sessions=4, duration_ops=40, accounts=10, think_ticks=3, seed=1)
    m = simulate(cfg).metrics
    assert m.committed + m.terminal_aborts == 40


def test_executing_txns_do_not_wait_on_barrier():
    engine = Engine()
    gov = TransitionGovernor(IsolationLevel.SI, engine.counter)
    co = Coordinator(engine, generate_smallbank_templates(), governor=gov)
    holder = co.begin("WC", (1,))
    for i, v in ((0, None), (1, None), (2, 1)):
        co.execute(holder, i, value=v)
    co.validate(holder)  # inside validation when the transition starts
    other = co.begin("DC", (2,))
    gov.request_transition(IsolationLevel.RC)
    co.execute(other, 0)
    co.execute(other, 1, value=3)  # statements still run during the barrier
    assert co.validate(other).value == "Wait"
    co.commit(holder)
    assert co.validate(other).value == "Success"
    co.commit(other)

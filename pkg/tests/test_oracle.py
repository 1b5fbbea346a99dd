import random

import pytest
from hypothesis import given, settings, strategies as st

from isoflex.core import DependencyKind, HistoryRecord, IsolationLevel, Key, Mode, Op, Outcome
from isoflex.harness import WorkloadConfig, scenario_write_skew, simulate
from isoflex.oracle import (
    DsgEdge,
    InconsistentHistory,
    brute_force_serializable,
    build_dsg,
    check_history,
    check_serializable,
    find_vulnerable_violations,
    random_history,
)

X, Y = Key("t", 1), Key("t", 2)
R, W = Mode.READ, Mode.WRITE


def rec(txn, begin, end, *ops, committed=True):
    outcome = Outcome.COMMITTED if committed else Outcome.ABORTED
    reason = None if committed else "user"
    return HistoryRecord(txn, "T", IsolationLevel.SI, begin, end, outcome, reason, tuple(Op(*o) for o in ops))


def test_single_txn():
    g = build_dsg([rec(1, 1, 2, (W, X, 1))])
    assert g.vertices == (1,) and g.edges == ()
    assert check_serializable(g).serializable


def test_empty_graph():
    assert check_history([]).serializable


def test_wr_edge():
    g = build_dsg([rec(1, 1, 2, (W, X, 1)), rec(2, 3, 4, (R, X, 1))])
    assert g.edges == (DsgEdge(1, 2, DependencyKind.WR, X),)


def test_aborted_contribute_nothing():
    g = build_dsg([rec(1, 1, 2, (W, X, 1)), rec(2, 3, 4, (R, X, 1), (W, Y, 1), committed=False)])
    assert g.vertices == (1,) and g.edges == ()


def test_write_skew_script():
    res = scenario_write_skew(IsolationLevel.SI, cc_enabled=False)
    g = build_dsg(res.history)
    rw = {(e.src, e.dst) for e in g.edges if e.kind is DependencyKind.RW}
    assert rw == {(1, 2), (2, 1)}
    verdict = check_serializable(g)
    assert not verdict.serializable and len(verdict.witness_cycle) == 2


def test_three_cycle_witness_edges_exist():
    # Bal(1) -rw-> WC(2) on x, WC(2) -rw-> TS(3) on y, TS(3) -wr-> Bal(1) on y
    history = [
        rec(3, 2, 3, (R, Y, 0), (W, Y, 1)),
        rec(1, 4, 5, (R, X, 0), (R, Y, 1)),
        rec(2, 1, 6, (R, X, 0), (R, Y, 0), (W, X, 1)),
    ]
    g = build_dsg(history)
    verdict = check_serializable(g)
    assert not verdict.serializable and len(verdict.witness_cycle) == 3
    edges = {(e.src, e.dst, e.kind) for e in g.edges}
    cyc = verdict.witness_cycle
    for (a, kind), (b, _) in zip(cyc, cyc[1:] + cyc[:1]):
        assert (a, b, kind) in edges


def test_inconsistent_histories():
    with pytest.raises(InconsistentHistory):
        build_dsg([rec(1, 1, 2, (W, X, 2))])
    with pytest.raises(InconsistentHistory):
        build_dsg([rec(1, 1, 2, (R, X, 3))])
    with pytest.raises(InconsistentHistory):
        build_dsg([rec(1, 1, 2, (W, X, 1)), rec(2, 3, 4, (W, X, 1))])


def test_vulnerable_violations():
    # reader 1 reads x@0, writer 2 installs x@1 and commits first
    history = [rec(1, 1, 5, (R, X, 0)), rec(2, 2, 3, (W, X, 1))]
    assert find_vulnerable_violations(history, IsolationLevel.RC) == [(1, 2, X)]
    # no RW into txn 1, so nothing is vulnerable under SI
    assert find_vulnerable_violations(history, IsolationLevel.SI) == []
    assert find_vulnerable_violations(history, IsolationLevel.SER) == []


def test_write_skew_with_pivot_flags_si():
    res = scenario_write_skew(IsolationLevel.SI, cc_enabled=False)
    assert find_vulnerable_violations(res.history, IsolationLevel.SI)


def test_cc_on_run_has_no_violations():
    cfg = WorkloadConfig(sessions=8, duration_ops=150, accounts=40, skew=0.9, seed=5, level="RC")
    history = simulate(cfg).history
    assert find_vulnerable_violations(history, IsolationLevel.RC) == []
    assert check_history(history).serializable


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_brute_force(seed):
    history = random_history(random.Random(seed))
    assert check_history(history).serializable == brute_force_serializable(history)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["RC", "SI"]))
def test_no_violations_implies_serializable(seed, level):
    cfg = WorkloadConfig(sessions=4, duration_ops=40, accounts=20, skew=0.9, seed=seed, level=level, cc_enabled=False)
    history = simulate(cfg).history
    if not find_vulnerable_violations(history, IsolationLevel.parse(level)):
        assert check_history(history).serializable

import pytest
from hypothesis import given, settings, strategies as st

from isoflex.core import Blocked, IsolationLevel, Key, TransactionAborted
from isoflex.engine import Engine, KeyNotFound, TxnStatus

RC, SI, SER = IsolationLevel.RC, IsolationLevel.SI, IsolationLevel.SER
X, Y = Key("t", 1), Key("t", 2)


def test_si_reads_its_snapshot():
    e = Engine()
    reader = e.begin(SI)
    writer = e.begin(RC)
    e.write(writer, X, 5)
    e.commit(writer)
    assert e.read(reader, X) == (0, 0)


def test_rc_reads_latest_committed():
    e = Engine()
    reader = e.begin(RC)
    assert e.read(reader, X) == (0, 0)
    writer = e.begin(RC)
    e.write(writer, X, 5)
    e.commit(writer)
    assert e.read(reader, X) == (5, 1)


def test_si_first_committer_wins():
    e = Engine()
    a, b = e.begin(SI), e.begin(SI)
    e.write(b, X, 1)
    e.commit(b)
    with pytest.raises(TransactionAborted) as info:
        e.write(a, X, 2)
    assert info.value.reason == "engine_ww_conflict"
    assert a.status is TxnStatus.ABORTED


def test_rc_blind_write_waits_then_proceeds():
    e = Engine()
    a, b = e.begin(RC), e.begin(RC)
    e.write(a, X, 1)
    with pytest.raises(Blocked):
        e.write(b, X, 2)
    e.commit(a)
    e.write(b, X, 2)
    e.commit(b)
    assert [v.value for v in e.chain(X)] == [0, 1, 2]


def test_rc_lost_update_is_refused():
    e = Engine()
    a, b = e.begin(RC), e.begin(RC)
    e.read(a, X)
    e.write(b, X, 1)
    e.commit(b)
    with pytest.raises(TransactionAborted):
        e.write(a, X, 7)


def test_write_skew_under_ser_aborts_one():
    e = Engine()
    a, b = e.begin(SER), e.begin(SER)
    for t in (a, b):
        e.read(t, X)
        e.read(t, Y)
    e.write(a, X, 1)
    e.write(b, Y, 1)
    e.commit(a)
    with pytest.raises(TransactionAborted) as info:
        e.commit(b)
    assert info.value.reason == "engine_ssi"


def test_write_skew_under_si_commits_both():
    e = Engine()
    a, b = e.begin(SI), e.begin(SI)
    for t in (a, b):
        e.read(t, X)
        e.read(t, Y)
    e.write(a, X, 1)
    e.write(b, Y, 1)
    e.commit(a)
    e.commit(b)


def test_read_own_write_and_versions():
    e = Engine()
    t = e.begin(SI)
    e.write(t, X, 9)
    assert e.read(t, X) == (9, 1)
    e.commit(t)
    assert t.installed == {X: 1}
    assert e.get_latest_version(X) == 1


def test_key_range_enforced():
    e = Engine({"t": 3})
    t = e.begin(RC)
    with pytest.raises(KeyNotFound):
        e.read(t, Key("t", 3))
    with pytest.raises(KeyNotFound):
        e.read(t, Key("other", 0))


def test_wait_budget_breaks_deadlock():
    e = Engine(wait_budget=3)
    a, b = e.begin(RC), e.begin(RC)
    e.write(a, X, 1)
    e.write(b, Y, 1)
    outcomes = []
    for _ in range(10):
        for t, key in ((a, Y), (b, X)):
            if not t.active:
                continue
            try:
                e.write(t, key, 2)
            except Blocked:
                pass
            except TransactionAborted as exc:
                outcomes.append(exc.reason)
    assert outcomes and outcomes[0] == "engine_ww_conflict"


def test_abort_releases_write_lock():
    e = Engine()
    a, b = e.begin(RC), e.begin(RC)
    e.write(a, X, 1)
    with pytest.raises(Blocked):
        e.write(b, X, 2)
    e.abort(a)
    e.write(b, X, 2)
    e.commit(b)
    assert e.latest_value(X) == 2


def test_dump_is_deterministic():
    e = Engine()
    t = e.begin(RC)
    e.write(t, X, 4)
    e.commit(t)
    assert e.dump([X]) == "t/1: v0=0@0 v1=4@2/t1\n"


def test_certifier_prunes():
    e = Engine(prune_every=4)
    for i in range(20):
        t = e.begin(SER)
        e.read(t, X)
        e.write(t, X, i)
        e.commit(t)
    assert e.certifier_size() < 20


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(list(IsolationLevel)), st.integers(0, 2), st.booleans()), min_size=1, max_size=25))
def test_serial_execution_never_aborts_and_chains_grow(script):
    e = Engine()
    expected = {}
    for level, k, do_write in script:
        key = Key("t", k)
        t = e.begin(level)
        _, version = e.read(t, key)
        assert version == expected.get(key, 0)
        if do_write:
            e.write(t, key, version + 1)
        e.commit(t)
        if do_write:
            expected[key] = version + 1
    for key, v in expected.items():
        chain = e.chain(key)
        assert [c.version for c in chain] == list(range(v + 1))
        assert [c.commit_seq for c in chain] == sorted(c.commit_seq for c in chain)

import pytest
from hypothesis import given, strategies as st

from isoflex.core import Key
from isoflex.locktable import LockMode, LockVerdict, ValidationLockTable, fnv1a64

SH, EX = LockMode.SHARED, LockMode.EXCLUSIVE
K = Key("checking", 1)


def test_fnv1a_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_older_requester_waits():
    vlt = ValidationLockTable()
    assert vlt.try_lock(K, 5, SH) is LockVerdict.GRANTED
    assert vlt.try_lock(K, 3, EX) is LockVerdict.WAIT


def test_younger_requester_dies():
    vlt = ValidationLockTable()
    assert vlt.try_lock(K, 3, SH) is LockVerdict.GRANTED
    assert vlt.try_lock(K, 5, EX) is LockVerdict.ERROR


def test_shared_locks_share():
    vlt = ValidationLockTable()
    assert vlt.try_lock(K, 3, SH) is LockVerdict.GRANTED
    assert vlt.try_lock(K, 5, SH) is LockVerdict.GRANTED
    assert vlt.entry(K).lock_num == 2


def test_release_grants_fifo():
    vlt = ValidationLockTable()
    vlt.try_lock(K, 9, EX)
    assert vlt.try_lock(K, 4, SH) is LockVerdict.WAIT
    assert vlt.try_lock(K, 2, SH) is LockVerdict.WAIT
    assert vlt.try_lock(K, 4, SH) is LockVerdict.WAIT  # asking again keeps its place
    vlt.release(K, 9)
    entry = vlt.entry(K)
    assert entry.holders == {4, 2} and entry.lock_type is SH
    assert vlt.try_lock(K, 4, SH) is LockVerdict.GRANTED


def test_release_stops_at_incompatible_head():
    vlt = ValidationLockTable()
    vlt.try_lock(K, 9, SH)
    vlt.try_lock(K, 4, EX)
    vlt.try_lock(K, 2, SH)
    vlt.release(K, 9)
    entry = vlt.entry(K)
    assert entry.holders == {4} and entry.wait_list == [(2, SH)]


def test_waiter_can_withdraw():
    vlt = ValidationLockTable()
    vlt.try_lock(K, 9, EX)
    vlt.try_lock(K, 4, EX)
    vlt.release(K, 4)
    assert vlt.entry(K).wait_list == []


def test_version_cache_only_moves_forward():
    vlt = ValidationLockTable()
    assert vlt.cached_version(K) is None
    vlt.set_cached_version(K, 3)
    vlt.set_cached_version(K, 2)
    assert vlt.cached_version(K) == 3
    vlt.set_cached_version(Key("x", 0), 1, create=False)
    assert vlt.entry(Key("x", 0)) is None


def test_gc_evicts_only_idle_expired_entries():
    vlt = ValidationLockTable(buckets=4, lease_ticks=10)
    vlt.try_lock(K, 1, SH, now=0)
    vlt.set_cached_version(Key("x", 0), 1, now=0)
    assert vlt.gc_sweep(now=100) == 1
    assert vlt.entry(K) is not None
    vlt.release(K, 1, now=100)
    assert vlt.gc_sweep(now=105) == 0
    assert vlt.gc_sweep(now=111) == 1
    assert len(vlt) == 0


def test_upgrade_is_refused():
    vlt = ValidationLockTable()
    vlt.try_lock(K, 1, SH)
    with pytest.raises(ValueError):
        vlt.try_lock(K, 1, EX)


requests = st.lists(st.tuples(st.integers(1, 8), st.sampled_from([SH, EX])), min_size=1, max_size=30)


@given(requests)
def test_wait_die_never_lets_younger_wait(script):
    vlt = ValidationLockTable()
    for txn, mode in script:
        entry = vlt.entry(K)
        before = set()
        if entry is not None:
            before = set(entry.holders) | {t for t, _ in entry.wait_list}
        queued = entry is not None and entry.waiting(txn)
        held = entry is not None and txn in entry.holders
        if held and mode is EX and entry.lock_type is SH:
            continue
        verdict = vlt.try_lock(K, txn, mode)
        if verdict is LockVerdict.WAIT and not queued:
            assert all(txn < other for other in before)
        entry = vlt.entry(K)
        assert entry.lock_type is not LockMode.EXCLUSIVE or entry.lock_num == 1
        assert not (entry.holders & {t for t, _ in entry.wait_list})


@given(st.lists(st.tuples(st.text(max_size=5), st.integers(0, 10**9)), max_size=40), st.integers(1, 64))
def test_bucket_index_in_range_and_stable(keys, buckets):
    vlt = ValidationLockTable(buckets=buckets)
    for rel, i in keys:
        key = Key(rel, i)
        idx = vlt.bucket_of(key)
        assert 0 <= idx < buckets and idx == vlt.bucket_of(Key(rel, i))

"""Validation lock table: hashed buckets of per-key lock entries.

Each entry carries the validation lock state, a FIFO wait list, the cached
latest committed version of the key and a lease used for garbage collection.
Conflicts are arbitrated by WAIT-DIE with the transaction id as age (smaller
is older): an older requester waits, a younger one dies.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Optional

from .core import Key


class LockMode(enum.Enum):
    NONE = "None"
    SHARED = "Shared"
    EXCLUSIVE = "Exclusive"


class LockVerdict(enum.Enum):
    GRANTED = "Granted"
    WAIT = "Wait"
    ERROR = "Error"


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def key_hash(key: Key) -> int:
    return fnv1a64(f"{key.relation}\x00{key.id}".encode())


@dataclass(eq=False)
class LockEntry:
    key: Key
    lock_type: LockMode = LockMode.NONE
    holders: set = field(default_factory=set)
    wait_list: list = field(default_factory=list)  # [(txn_id, mode)]
    latest_version: Optional[int] = None
    lease: int = 0

    @property
    def lock_num(self) -> int:
        return len(self.holders)

    def compatible(self, mode: LockMode) -> bool:
        return self.lock_type is LockMode.NONE or (
            self.lock_type is LockMode.SHARED and mode is LockMode.SHARED
        )

    def waiting(self, txn_id: int) -> bool:
        return any(t == txn_id for t, _ in self.wait_list)


class _Bucket:
    __slots__ = ("lock", "entries", "last_sweep")

    def __init__(self):
        self.lock = threading.Lock()
        self.entries: list[LockEntry] = []
        self.last_sweep = 0


class ValidationLockTable:
    def __init__(self, buckets: int = 4096, lease_ticks: int = 1000):
        if buckets < 1:
            raise ValueError("need at least one bucket")
        self.n_buckets = buckets
        self.lease_ticks = lease_ticks
        self._buckets = [_Bucket() for _ in range(buckets)]
        self._hash_cache: dict[Key, int] = {}

    def bucket_of(self, key: Key) -> int:
        idx = self._hash_cache.get(key)
        if idx is None:
            idx = self._hash_cache[key] = key_hash(key) % self.n_buckets
        return idx

    def _find(self, bucket: _Bucket, key: Key) -> Optional[LockEntry]:
        for entry in bucket.entries:
            if entry.key == key:
                return entry
        return None

    def _touch(self, bucket: _Bucket, key: Key, now: int) -> LockEntry:
        """Find or create the entry, refresh its lease, evict stale neighbours."""
        entry = self._find(bucket, key)
        if entry is None:
            entry = LockEntry(key)
            bucket.entries.append(entry)
        entry.lease = now + self.lease_ticks
        if len(bucket.entries) > 1:
            bucket.entries = [e for e in bucket.entries if not _evictable(e, now)]
        return entry

    def entry(self, key: Key) -> Optional[LockEntry]:
        bucket = self._buckets[self.bucket_of(key)]
        with bucket.lock:
            return self._find(bucket, key)

    def __len__(self) -> int:
        return sum(len(b.entries) for b in self._buckets)

    def entries(self) -> list[LockEntry]:
        out = []
        for b in self._buckets:
            with b.lock:
                out.extend(b.entries)
        return out

    # -- locking --------------------------------------------------------------

    def try_lock(self, key: Key, txn_id: int, mode: LockMode, now: int = 0) -> LockVerdict:
        if mode is LockMode.NONE:
            raise ValueError("cannot request a NONE lock")
        bucket = self._buckets[self.bucket_of(key)]
        with bucket.lock:
            entry = self._touch(bucket, key, now)
            if txn_id in entry.holders:
                if entry.lock_type is LockMode.EXCLUSIVE or mode is LockMode.SHARED:
                    return LockVerdict.GRANTED
                raise ValueError(f"txn {txn_id} cannot upgrade its shared lock on {key}")
            if entry.waiting(txn_id):
                return LockVerdict.WAIT
            if entry.compatible(mode) and not entry.wait_list:
                entry.holders.add(txn_id)
                entry.lock_type = mode
                return LockVerdict.GRANTED
            rivals = set(entry.holders)
            rivals.update(t for t, _ in entry.wait_list)
            if all(txn_id < other for other in rivals):
                entry.wait_list.append((txn_id, mode))
                return LockVerdict.WAIT
            return LockVerdict.ERROR

    def release(self, key: Key, txn_id: int, now: int = 0) -> None:
        """Drop ``txn_id``'s hold or queued request, then grant FIFO from the wait list."""
        bucket = self._buckets[self.bucket_of(key)]
        with bucket.lock:
            entry = self._find(bucket, key)
            if entry is None:
                return
            entry.lease = now + self.lease_ticks
            if txn_id in entry.holders:
                entry.holders.discard(txn_id)
            else:
                entry.wait_list = [(t, m) for t, m in entry.wait_list if t != txn_id]
            if not entry.holders:
                entry.lock_type = LockMode.NONE
            while entry.wait_list:
                head_id, head_mode = entry.wait_list[0]
                if not entry.compatible(head_mode):
                    break
                entry.wait_list.pop(0)
                entry.holders.add(head_id)
                entry.lock_type = head_mode

    # -- version cache ----------------------------------------------------------

    def cached_version(self, key: Key, now: int = 0) -> Optional[int]:
        bucket = self._buckets[self.bucket_of(key)]
        with bucket.lock:
            return self._touch(bucket, key, now).latest_version

    def set_cached_version(self, key: Key, version: int, now: int = 0, create: bool = True) -> None:
        bucket = self._buckets[self.bucket_of(key)]
        with bucket.lock:
            if create:
                entry = self._touch(bucket, key, now)
            else:
                entry = self._find(bucket, key)
                if entry is None:
                    return
            if entry.latest_version is None or version > entry.latest_version:
                entry.latest_version = version

    # -- garbage collection --------------------------------------------------------

    def gc_sweep(self, now: int) -> int:
        evicted = 0
        for bucket in self._buckets:
            with bucket.lock:
                if not bucket.entries:
                    continue
                kept = [e for e in bucket.entries if not _evictable(e, now)]
                evicted += len(bucket.entries) - len(kept)
                bucket.entries = kept
                bucket.last_sweep = now
        return evicted


def _evictable(entry: LockEntry, now: int) -> bool:
    return entry.lock_type is LockMode.NONE and not entry.wait_list and entry.lease < now

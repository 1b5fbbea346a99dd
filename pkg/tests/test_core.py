import json

import pytest
from hypothesis import given, strategies as st

from isoflex.core import (
    ABORT_REASONS,
    EventCounter,
    HistoryRecord,
    IsolationLevel,
    Key,
    MalformedRecord,
    Mode,
    Op,
    Outcome,
    TransactionTemplate,
    parse_history_record,
    read_history,
    serialize_history_record,
    write_history,
)

GOLDEN = (
    '{"txn_id":4,"template":"WC","level":"SI","begin_seq":10,"end_seq":15,"outcome":"Committed",'
    '"abort_reason":null,"ops":[{"mode":"Read","relation":"checking","id":3,"version":2},'
    '{"mode":"Write","relation":"checking","id":3,"version":3}]}'
)


def _golden_record():
    return HistoryRecord(
        4, "WC", IsolationLevel.SI, 10, 15, Outcome.COMMITTED, None,
        (Op(Mode.READ, Key("checking", 3), 2), Op(Mode.WRITE, Key("checking", 3), 3)),
    )


def test_serialize_matches_golden_bytes():
    assert serialize_history_record(_golden_record()) == GOLDEN


def test_parse_golden():
    assert parse_history_record(GOLDEN) == _golden_record()


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d.update(level="RR"), "level"),
        (lambda d: d.update(outcome="Maybe"), "outcome"),
        (lambda d: d.update(end_seq=10), "end_seq"),
        (lambda d: d.update(abort_reason="user"), "abort_reason"),
        (lambda d: d.update(txn_id=-1), "txn_id"),
        (lambda d: d["ops"][0].update(mode="Scan"), "ops[0]"),
    ],
)
def test_parse_rejects_bad_fields(mutate, where):
    data = json.loads(GOLDEN)
    mutate(data)
    with pytest.raises(MalformedRecord) as info:
        parse_history_record(json.dumps(data))
    assert info.value.position == where


def test_parse_rejects_extra_and_missing_fields():
    data = json.loads(GOLDEN)
    data["extra"] = 1
    with pytest.raises(MalformedRecord):
        parse_history_record(json.dumps(data))
    data = json.loads(GOLDEN)
    del data["ops"]
    with pytest.raises(MalformedRecord):
        parse_history_record(json.dumps(data))


def test_aborted_record_needs_known_reason():
    data = json.loads(GOLDEN)
    data["outcome"] = "Aborted"
    data["abort_reason"] = "bad_luck"
    with pytest.raises(MalformedRecord):
        parse_history_record(json.dumps(data))
    data["abort_reason"] = "wait_die"
    assert parse_history_record(json.dumps(data)).abort_reason == "wait_die"


def test_not_json():
    with pytest.raises(MalformedRecord):
        parse_history_record("{nope")


keys = st.builds(Key, st.sampled_from(["checking", "savings", "usertable"]), st.integers(0, 10**6))
ops = st.builds(Op, st.sampled_from(list(Mode)), keys, st.integers(0, 10**6))


@st.composite
def records(draw):
    begin = draw(st.integers(0, 10**9))
    end = begin + draw(st.integers(1, 10**6))
    outcome = draw(st.sampled_from(list(Outcome)))
    reason = None if outcome is Outcome.COMMITTED else draw(st.sampled_from(sorted(ABORT_REASONS)))
    return HistoryRecord(
        draw(st.integers(0, 10**9)),
        draw(st.text(min_size=1, max_size=12)),
        draw(st.sampled_from(list(IsolationLevel))),
        begin,
        end,
        outcome,
        reason,
        tuple(draw(st.lists(ops, max_size=8))),
    )


@given(records())
def test_roundtrip(rec):
    line = serialize_history_record(rec)
    assert parse_history_record(line) == rec
    assert serialize_history_record(parse_history_record(line)) == line


def test_history_file_roundtrip(tmp_path):
    path = tmp_path / "h.jsonl"
    write_history(path, [_golden_record()] * 3)
    assert read_history(path) == [_golden_record()] * 3


def test_template_validation():
    with pytest.raises(ValueError):
        TransactionTemplate.build("X", 1, [("r", "t", 1)])
    with pytest.raises(ValueError):
        TransactionTemplate.build("", 1, [("r", "t", 0)])
    with pytest.raises(ValueError):
        TransactionTemplate("X", 1, ())
    tpl = TransactionTemplate.build("X", 2, [("r", "a", 0), ("w", "b", 1)])
    assert tpl.relations(Mode.READ) == {"a"} and tpl.relations(Mode.WRITE) == {"b"}


def test_level_parse_and_order():
    assert IsolationLevel.parse("si") is IsolationLevel.SI
    with pytest.raises(ValueError):
        IsolationLevel.parse("rr")
    assert sorted([IsolationLevel.SER, IsolationLevel.RC, IsolationLevel.SI]) == list(IsolationLevel)


def test_counter_strictly_increases():
    c = EventCounter()
    seen = [c.tick() for _ in range(100)]
    assert seen == sorted(set(seen)) and c.now == seen[-1]


def test_key_str():
    assert str(Key("savings", 7)) == "savings/7"

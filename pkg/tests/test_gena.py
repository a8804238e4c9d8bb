import pytest
from hypothesis import given, settings, strategies as st

from strategies import hostile_text, name
from upot import gena
from upot.errors import EventingError, MissingCallback, UnknownSid


class Clock:
    def __init__(self):
        self.now = 1000.0

    def __call__(self):
        return self.now


def test_parse_callback_keeps_http_urls_in_order():
    urls = gena.parse_callback("<http://10.0.0.5:8080/cb1><ftp://x/><http://10.0.0.5/cb2>")
    assert urls == ["http://10.0.0.5:8080/cb1", "http://10.0.0.5/cb2"]


@pytest.mark.parametrize("value,expected", [
    (None, 1800), ("Second-300", 300), ("second-infinite", 1800), ("Second-0", 1800),
    ("garbage", 1800), ("Second-999999", 86400),
])
def test_parse_timeout(value, expected):
    assert gena.parse_timeout(value) == expected


def test_subscribe_renew_unsubscribe():
    clock = Clock()
    table = gena.SubscriptionTable(clock=clock)
    sub, new = gena.handle_subscribe(table, {"CALLBACK": "<http://h/cb>", "NT": "upnp:event",
                                             "TIMEOUT": "Second-60"}, "svc")
    assert new and sub.sid.startswith("uuid:") and sub.timeout_seconds == 60
    clock.now += 50
    renewed, new = gena.handle_subscribe(table, {"SID": sub.sid, "TIMEOUT": "Second-60"}, "svc")
    assert renewed is sub and not new
    clock.now += 50
    assert table.get(sub.sid) is sub
    gena.handle_unsubscribe(table, {"SID": sub.sid})
    with pytest.raises(UnknownSid):
        gena.handle_unsubscribe(table, {"SID": sub.sid})


def test_expired_sid_behaves_as_unknown():
    clock = Clock()
    table = gena.SubscriptionTable(clock=clock)
    sub = table.subscribe(["http://h/cb"], 30, "svc")
    clock.now += 31
    with pytest.raises(UnknownSid):
        table.renew(sub.sid, 30)
    assert len(table) == 0


def test_distinct_sids():
    table = gena.SubscriptionTable()
    sids = {table.subscribe(["http://h/cb"], 30, "svc").sid for _ in range(50)}
    assert len(sids) == 50


@pytest.mark.parametrize("headers,error", [
    ({"NT": "upnp:event"}, MissingCallback),
    ({"CALLBACK": "<mailto:x>", "NT": "upnp:event"}, MissingCallback),
    ({"CALLBACK": "<http://h/>", "NT": "upnp:other"}, EventingError),
    ({"SID": "uuid:x", "CALLBACK": "<http://h/>"}, EventingError),
    ({"SID": "uuid:unknown"}, UnknownSid),
])
def test_subscribe_errors(headers, error):
    with pytest.raises(error):
        gena.handle_subscribe(gena.SubscriptionTable(), headers, "svc")


def test_unsubscribe_requires_sid():
    with pytest.raises(UnknownSid):
        gena.handle_unsubscribe(gena.SubscriptionTable(), {})


def test_notify_wire_format():
    sub = gena.Subscription("uuid:s1", ["http://10.0.0.5:8080/cb?x=1"], 1800, "svc")
    raw = gena.build_notify(sub, [("BinaryState", "1")], seq=0)
    assert raw.startswith(b"NOTIFY /cb?x=1 HTTP/1.1\r\n")
    path, headers, props = gena.parse_notify(raw)
    assert headers["NT"] == "upnp:event" and headers["NTS"] == "upnp:propchange"
    assert headers["SID"] == "uuid:s1" and headers["SEQ"] == "0"
    assert headers["HOST"] == "10.0.0.5:8080"
    assert props.changes == [("BinaryState", "1")]


def test_notifier_keeps_per_sid_order():
    seen = []
    notifier = gena.Notifier(workers=3, send=lambda sub, seq, body: seen.append((sub.sid, seq)) or 200)
    subs = [gena.Subscription(f"uuid:{i}", ["http://h/"], 10, "svc") for i in range(5)]
    for seq in range(20):
        for sub in subs:
            notifier.enqueue(sub, seq, b"")
    notifier.flush()
    notifier.close()
    for sub in subs:
        assert [s for sid, s in seen if sid == sub.sid] == list(range(20))
    assert notifier.delivered == 100


def test_deliver_gives_up_on_dead_callback():
    sub = gena.Subscription("uuid:s", ["http://127.0.0.1:9/cb"], 10, "svc")
    assert gena.deliver(sub, 0, b"<x/>", timeout=0.5) is None


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(name, hostile_text), max_size=6), st.integers(0, 2**32 - 1))
def test_notify_round_trip(changes, seq):
    sub = gena.Subscription("uuid:s", ["http://127.0.0.1:4000/cb"], 1800, "svc")
    _, headers, props = gena.parse_notify(gena.build_notify(sub, changes, seq=seq))
    assert props.changes == changes
    assert int(headers["SEQ"]) == seq

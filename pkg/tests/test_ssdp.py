import dataclasses
import random
import socket
import time

import pytest
from hypothesis import given, settings, strategies as st

import fuzz
from upot import ssdp
from upot.errors import BadManValue, MalformedStartLine, MissingHeader, SocketBindFailure
from upot.interactions import InteractionLog

SEARCH = (b'M-SEARCH * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\n'
          b'MAN: "ssdp:discover"\r\nMX: 2\r\nST: upnp:rootdevice\r\n\r\n')


def wemo_identity(host="10.0.0.11", port=49153):
    services = tuple(f"urn:Belkin:service:svc{i}:1" for i in range(12))
    return ssdp.InstanceIdentity(
        uuid="uuid:Socket-1_0-221517K0101769",
        device_types=("urn:Belkin:device:controllee:1",),
        service_types=services,
        http_endpoint=(host, port),
        root_description_path="/setup.xml",
        server="Unspecified, UPnP/1.0, Unspecified",
    )


def test_parse_search_request_reference_datagram():
    req = ssdp.parse_search_request(SEARCH)
    assert req.mx == 2
    assert req.st == "upnp:rootdevice"
    assert req.man == '"ssdp:discover"'
    assert req.host == "239.255.255.250:1900"


def test_header_names_are_case_insensitive():
    raw = SEARCH.replace(b"HOST", b"host").replace(b"ST:", b"st:").replace(b"MX", b"Mx")
    assert ssdp.parse_search_request(raw).st == "upnp:rootdevice"


def test_missing_man_is_rejected():
    raw = SEARCH.replace(b'MAN: "ssdp:discover"\r\n', b"")
    with pytest.raises(MissingHeader):
        ssdp.parse_search_request(raw)


@pytest.mark.parametrize("header", [b"HOST", b"MX", b"ST"])
def test_every_mandatory_header_is_required(header):
    lines = [l for l in SEARCH.split(b"\r\n") if not l.startswith(header + b":")]
    with pytest.raises(MissingHeader):
        ssdp.parse_search_request(b"\r\n".join(lines))


def test_mx_is_clamped_to_five():
    assert ssdp.parse_search_request(SEARCH.replace(b"MX: 2", b"MX: 30")).mx == 5


@pytest.mark.parametrize("value", [b"0", b"-1", b"two", b""])
def test_bad_mx_rejected(value):
    with pytest.raises(ssdp.BadMxValue):
        ssdp.parse_search_request(SEARCH.replace(b"MX: 2", b"MX: " + value))


def test_unquoted_man_rejected():
    with pytest.raises(BadManValue):
        ssdp.parse_search_request(SEARCH.replace(b'"ssdp:discover"', b"ssdp:discover"))


def test_wrong_start_line_rejected():
    with pytest.raises(MalformedStartLine):
        ssdp.parse_search_request(SEARCH.replace(b"M-SEARCH *", b"GET /"))


def test_extra_headers_are_kept_but_ignored():
    raw = SEARCH.replace(b"\r\n\r\n", b"\r\nCPFN.UPNP.ORG: probe\r\n\r\n")
    req = ssdp.parse_search_request(raw)
    assert req.extra == [("CPFN.UPNP.ORG", "probe")]
    assert ssdp.parse_search_request(req.serialize()) == req


def test_match_target_rules():
    ident = wemo_identity()
    assert ssdp.match_target("upnp:rootdevice", ident)
    assert ssdp.match_target("ssdp:all", ident)
    assert ssdp.match_target(ident.uuid, ident)
    assert not ssdp.match_target("uuid:WRONG", ident)
    for kind in ident.device_types + ident.service_types:
        assert ssdp.match_target(kind, ident)
    assert not ssdp.match_target("urn:Belkin:service:nope:1", ident)


def test_build_search_response_matches_reference_capture():
    resp = ssdp.build_search_response(wemo_identity(), "upnp:rootdevice")
    wire = resp.serialize()
    assert wire.startswith(b"HTTP/1.1 200 OK\r\n")
    assert b"LOCATION: http://10.0.0.11:49153/setup.xml\r\n" in wire
    assert b"CACHE-CONTROL: max-age=1800\r\n" in wire
    assert resp.usn == "uuid:Socket-1_0-221517K0101769::upnp:rootdevice"
    assert ssdp.parse_search_response(wire) == resp


def test_ssdp_all_yields_two_plus_types():
    ident = wemo_identity()
    responses = ssdp.build_search_responses(ident, "ssdp:all")
    assert len(responses) == 2 + 1 + 12
    assert len({r.usn for r in responses}) == len(responses)
    for r in responses:
        assert r.usn.startswith("uuid:")
        assert r.usn == r.st or r.usn.endswith("::" + r.st)


def test_non_matching_target_raises_on_build():
    with pytest.raises(ValueError):
        ssdp.build_search_response(wemo_identity(), "urn:other:device:x:1")


def test_alive_and_byebye_bursts():
    ident = wemo_identity()
    alive = ssdp.build_advertisements(ident, ssdp.ALIVE)
    bye = ssdp.build_advertisements(ident, ssdp.BYEBYE)
    assert len(alive) == 15
    assert sorted(a.usn for a in alive) == sorted(b.usn for b in bye)
    for ad in bye:
        wire = ad.serialize()
        assert b"LOCATION" not in wire
        assert ssdp.parse_advertisement(wire) == ad
    for ad in alive:
        assert ssdp.parse_advertisement(ad.serialize()) == ad


def _responder(log=None, **kw):
    return ssdp.SsdpResponder(address="127.0.0.1", port=0, log=log, **kw)


def test_plan_delays_stay_within_mx():
    responder = _responder(rng=random.Random(7))
    try:
        responder.register(wemo_identity())
        for mx in (1, 2, 5, 9):
            raw = SEARCH.replace(b"MX: 2", f"MX: {mx}".encode()).replace(b"upnp:rootdevice", b"ssdp:all")
            _, plans = responder.plan(raw, ("127.0.0.1", 5000))
            assert len(plans) == 15
            assert all(0 <= d <= min(mx, 5) for d, _, _ in plans)
    finally:
        responder.stop()


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet=st.characters(min_codepoint=33, max_codepoint=126), min_size=1, max_size=40))
def test_random_targets_only_answered_when_matching(target):
    ident = wemo_identity()
    responses = ssdp.build_search_responses(ident, target)
    assert bool(responses) == ssdp.match_target(target, ident)


def test_garbage_datagram_logged_and_unanswered():
    log = InteractionLog(keep=True)
    responder = _responder(log=log, scheduler=lambda d, fn: pytest.fail("no response expected"))
    try:
        responder.register(wemo_identity())
        assert responder.handle(b"\x00\xffnot ssdp", ("127.0.0.1", 4000)) == []
        log.flush()
        assert len(log.records) == 1
        assert log.records[0].outcome == "rejected"
        assert log.records[0].layer == "ssdp"
    finally:
        responder.stop()
        log.close()


def test_each_inbound_datagram_yields_one_record():
    log = InteractionLog(keep=True)
    sent = []
    responder = _responder(log=log, scheduler=lambda d, fn: sent.append(d))
    try:
        responder.register(wemo_identity())
        responder.register(dataclasses.replace(wemo_identity(port=49154), uuid="uuid:two"))
        responder.handle(SEARCH, ("127.0.0.1", 4000))
        responder.handle(SEARCH.replace(b"upnp:rootdevice", b"uuid:nobody"), ("127.0.0.1", 4000))
        responder.handle(b"junk", ("127.0.0.1", 4000))
        log.flush()
        assert len(log.records) == 3
        assert sorted(log.records[0].instances()) == ["uuid:Socket-1_0-221517K0101769", "uuid:two"]
        assert log.records[1].instances() == []
        assert len(sent) == 2
    finally:
        responder.stop()
        log.close()


def test_live_single_instance_answers_once():
    responder = _responder().start()
    try:
        responder.register(wemo_identity(host="127.0.0.1"))
        found = ssdp.send_search(st="upnp:rootdevice", mx=1, target=("127.0.0.1", responder.port), timeout=1.5)
        assert len(found) == 1
        assert found[0][0].location == "http://127.0.0.1:49153/setup.xml"
    finally:
        responder.stop()


def test_live_three_instances_answer_ssdp_all():
    responder = _responder().start()
    try:
        for i in range(3):
            ident = wemo_identity(host="127.0.0.1", port=50000 + i)
            ident.uuid = f"uuid:dev-{i}"
            responder.register(ident)
        found = ssdp.send_search(st="ssdp:all", mx=1, target=("127.0.0.1", responder.port), timeout=1.5)
        uuids = {r.usn.split("::")[0] for r, _ in found}
        assert uuids == {"uuid:dev-0", "uuid:dev-1", "uuid:dev-2"}
        assert len(found) == 3 * 15
    finally:
        responder.stop()


def test_advertisements_reach_notify_target():
    listener = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    listener.bind(("127.0.0.1", 0))
    listener.settimeout(2)
    responder = _responder(notify_target=listener.getsockname())
    try:
        ident = wemo_identity(host="127.0.0.1")
        responder.register(ident)
        assert responder.send_advertisements(ident, ssdp.ALIVE) == 15
        got = [ssdp.parse_advertisement(listener.recvfrom(65535)[0]) for _ in range(15)]
        assert {a.kind for a in got} == {ssdp.ALIVE}
    finally:
        responder.stop()
        listener.close()


def test_bind_failure_is_reported():
    # not a local address, so the bind must fail
    with pytest.raises(SocketBindFailure):
        ssdp.SsdpResponder(address="203.0.113.1", port=0)


def test_stop_cancels_pending_responses():
    responder = _responder().start()
    responder.register(wemo_identity(host="127.0.0.1"))
    client = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    client.bind(("127.0.0.1", 0))
    client.settimeout(0.3)
    try:
        for _ in range(20):
            client.sendto(SEARCH.replace(b"MX: 2", b"MX: 5"), ("127.0.0.1", responder.port))
        time.sleep(0.2)
        started = time.monotonic()
        responder.stop()
        assert time.monotonic() - started < 2
        assert not responder._timers
    finally:
        client.close()


@settings(max_examples=500, deadline=None)
@given(st.randoms(use_true_random=False))
def test_codec_round_trips(rnd):
    req = fuzz.search_request(rnd)
    assert ssdp.parse_search_request(req.serialize()) == req
    resp = fuzz.search_response(rnd)
    assert ssdp.parse_search_response(resp.serialize()) == resp
    ad = fuzz.advertisement(rnd)
    assert ssdp.parse_advertisement(ad.serialize()) == ad

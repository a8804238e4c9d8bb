"""SSDP discovery: message codecs, target matching and the shared responder."""

import logging
import random
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from email.utils import formatdate
from typing import List, Optional, Tuple

from .errors import (
    BadManValue,
    MalformedStartLine,
    MissingHeader,
    SocketBindFailure,
    SocketSendFailure,
    SsdpError,
)

logger = logging.getLogger(__name__)

SSDP_ADDR = "239.255.255.250"
SSDP_PORT = 1900
MAX_AGE = 1800
MX_CAP = 5
# answers are scheduled this far ahead of the MX deadline so they still
# arrive inside it after timer and send overhead
SEND_MARGIN = 0.1
DISCOVER = '"ssdp:discover"'
SEARCH_LINE = "M-SEARCH * HTTP/1.1"
NOTIFY_LINE = "NOTIFY * HTTP/1.1"
RESPONSE_LINE = "HTTP/1.1 200 OK"
ALIVE, BYEBYE = "ssdp:alive", "ssdp:byebye"


class BadMxValue(SsdpError):
    pass


@dataclass
class SsdpSearchRequest:
    host: str
    man: str
    mx: int
    st: str
    user_agent: Optional[str] = None
    extra: List[Tuple[str, str]] = field(default_factory=list)

    def serialize(self):
        lines = [SEARCH_LINE, f"HOST: {self.host}", f"MAN: {self.man}", f"MX: {self.mx}",
                 f"ST: {self.st}"]
        if self.user_agent is not None:
            lines.append(f"USER-AGENT: {self.user_agent}")
        lines += [f"{k}: {v}" for k, v in self.extra]
        return ("\r\n".join(lines) + "\r\n\r\n").encode("utf-8")


@dataclass
class SsdpSearchResponse:
    location: str
    cache_control_max_age: int
    server: str
    usn: str
    st: str
    date: Optional[str] = None

    def serialize(self):
        lines = [RESPONSE_LINE, f"CACHE-CONTROL: max-age={self.cache_control_max_age}"]
        if self.date is not None:
            lines.append(f"DATE: {self.date}")
        lines += ["EXT:", f"LOCATION: {self.location}", f"SERVER: {self.server}",
                  f"ST: {self.st}", f"USN: {self.usn}"]
        return ("\r\n".join(lines) + "\r\n\r\n").encode("utf-8")


@dataclass
class SsdpAdvertisement:
    kind: str
    nt: str
    usn: str
    location: Optional[str] = None
    cache_control_max_age: Optional[int] = None
    server: Optional[str] = None
    host: str = f"{SSDP_ADDR}:{SSDP_PORT}"

    def serialize(self):
        lines = [NOTIFY_LINE, f"HOST: {self.host}"]
        if self.kind == ALIVE:
            lines += [f"CACHE-CONTROL: max-age={self.cache_control_max_age}",
                      f"LOCATION: {self.location}"]
        lines += [f"NT: {self.nt}", f"NTS: {self.kind}"]
        if self.kind == ALIVE and self.server is not None:
            lines.append(f"SERVER: {self.server}")
        lines.append(f"USN: {self.usn}")
        return ("\r\n".join(lines) + "\r\n\r\n").encode("utf-8")


def _split(raw):
    """Start line and ordered (NAME, value) headers of an HTTPU message."""
    text = raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw
    head = text.replace("\r\n", "\n").split("\n\n", 1)[0]
    lines = head.split("\n")
    headers = []
    for line in lines[1:]:
        if not line.strip():
            continue
        name, sep, value = line.partition(":")
        if not sep:
            continue
        headers.append((name.strip().upper(), value.strip()))
    return lines[0].strip(), headers


def _header(headers, name, required=True):
    for key, value in headers:
        if key == name:
            return value
    if required:
        raise MissingHeader(name)
    return None


_SEARCH_KNOWN = {"HOST", "MAN", "MX", "ST", "USER-AGENT"}


def parse_search_request(raw):
    start, headers = _split(raw)
    if start != SEARCH_LINE:
        raise MalformedStartLine(start[:80])
    host = _header(headers, "HOST")
    man = _header(headers, "MAN")
    mx_text = _header(headers, "MX")
    st = _header(headers, "ST")
    if man != DISCOVER:
        raise BadManValue(man)
    try:
        mx = int(mx_text)
    except ValueError:
        raise BadMxValue(mx_text) from None
    if mx < 1:
        raise BadMxValue(mx_text)
    if not st:
        raise MissingHeader("ST")
    extra = [(k, v) for k, v in headers if k not in _SEARCH_KNOWN]
    return SsdpSearchRequest(host=host, man=man, mx=min(mx, MX_CAP), st=st,
                             user_agent=_header(headers, "USER-AGENT", required=False),
                             extra=extra)


def _max_age(value):
    for part in value.split(","):
        key, _, num = part.strip().partition("=")
        if key.strip().lower() == "max-age":
            return int(num.strip())
    raise SsdpError(f"no max-age in {value!r}")


def parse_search_response(raw):
    start, headers = _split(raw)
    if not start.startswith("HTTP/1.1 200"):
        raise MalformedStartLine(start[:80])
    return SsdpSearchResponse(
        location=_header(headers, "LOCATION"),
        cache_control_max_age=_max_age(_header(headers, "CACHE-CONTROL")),
        server=_header(headers, "SERVER", required=False) or "",
        usn=_header(headers, "USN"),
        st=_header(headers, "ST"),
        date=_header(headers, "DATE", required=False),
    )


def parse_advertisement(raw):
    start, headers = _split(raw)
    if start != NOTIFY_LINE:
        raise MalformedStartLine(start[:80])
    kind = _header(headers, "NTS")
    if kind not in (ALIVE, BYEBYE):
        raise SsdpError(f"unsupported NTS {kind!r}")
    cache = _header(headers, "CACHE-CONTROL", required=False)
    return SsdpAdvertisement(
        kind=kind,
        nt=_header(headers, "NT"),
        usn=_header(headers, "USN"),
        location=_header(headers, "LOCATION", required=kind == ALIVE),
        cache_control_max_age=_max_age(cache) if cache is not None else None,
        server=_header(headers, "SERVER", required=False),
        host=_header(headers, "HOST"),
    )


@dataclass
class InstanceIdentity:
    """What discovery needs to know about one honeypot instance."""

    uuid: str
    device_types: Tuple[str, ...]
    service_types: Tuple[str, ...]
    http_endpoint: Tuple[str, int]
    root_description_path: str = "/setup.xml"
    server: str = "Unspecified, UPnP/1.0, Unspecified"
    type_udns: dict = field(default_factory=dict)

    def location(self, host=None):
        h = host or self.http_endpoint[0]
        return f"http://{h}:{self.http_endpoint[1]}{self.root_description_path}"


def notification_targets(identity):
    """(NT, USN) pairs the instance announces, in advertisement order."""
    targets = [
        ("upnp:rootdevice", f"{identity.uuid}::upnp:rootdevice"),
        (identity.uuid, identity.uuid),
    ]
    for kind in (*identity.device_types, *identity.service_types):
        udn = identity.type_udns.get(kind, identity.uuid)
        targets.append((kind, f"{udn}::{kind}"))
    return targets


def match_target(st, identity):
    return (
        st in ("ssdp:all", "upnp:rootdevice", identity.uuid)
        or st in identity.device_types
        or st in identity.service_types
    )


def _response(identity, st, usn, host, date):
    return SsdpSearchResponse(
        location=identity.location(host),
        cache_control_max_age=MAX_AGE,
        server=identity.server,
        usn=usn,
        st=st,
        date=date,
    )


def build_search_responses(identity, st, host=None, date=None):
    """Every response the instance owes a search for ``st`` (empty if no match)."""
    if not match_target(st, identity):
        return []
    date = date if date is not None else formatdate(usegmt=True)
    if st == "ssdp:all":
        return [_response(identity, nt, usn, host, date) for nt, usn in notification_targets(identity)]
    for nt, usn in notification_targets(identity):
        if nt == st:
            return [_response(identity, st, usn, host, date)]
    return []


def build_search_response(identity, st, host=None, date=None):
    responses = build_search_responses(identity, st, host, date)
    if not responses:
        raise ValueError(f"{st!r} does not match instance {identity.uuid}")
    return responses[0]


def build_advertisements(identity, kind, host=None, notify_host=None):
    ads = []
    for nt, usn in notification_targets(identity):
        if kind == ALIVE:
            ad = SsdpAdvertisement(kind=ALIVE, nt=nt, usn=usn, location=identity.location(host),
                                   cache_control_max_age=MAX_AGE, server=identity.server)
        else:
            ad = SsdpAdvertisement(kind=BYEBYE, nt=nt, usn=usn)
        if notify_host:
            ad.host = notify_host
        ads.append(ad)
    return ads


def local_address_for(peer_host):
    """Local interface address that routes towards ``peer_host``."""
    probe = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        probe.connect((peer_host, 9))
        return probe.getsockname()[0]
    except OSError:
        return "127.0.0.1"
    finally:
        probe.close()


def _is_multicast(address):
    try:
        return 224 <= int(address.split(".")[0]) <= 239
    except ValueError:
        return False


class SsdpResponder:
    """One UDP listener answering searches for every registered instance.

    ``address``/``port`` default to the SSDP multicast group; tests bind a
    unicast loopback address and port 0 instead.  ``rng`` drives the MX
    response delay; ``scheduler`` (delay, callable) defaults to a timer
    thread per response and may be replaced for deterministic tests.
    """

    def __init__(self, address=SSDP_ADDR, port=SSDP_PORT, log=None, rng=None,
                 interface="0.0.0.0", scheduler=None, notify_target=None):
        self.address = address
        self.log = log
        self.rng = rng or random.Random()
        self.interface = interface
        self.scheduler = scheduler or self._timer
        self._instances = {}
        self._reg_lock = threading.Lock()
        self._send_lock = threading.Lock()
        self._timers = set()
        self._stopping = threading.Event()
        self.sock = self._bind(address, port)
        self.port = self.sock.getsockname()[1]
        self.notify_target = notify_target or (address, self.port)
        self._thread = None

    def _bind(self, address, port):
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
        try:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            if _is_multicast(address):
                if hasattr(socket, "SO_REUSEPORT"):
                    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
                sock.bind(("", port))
                mreq = struct.pack("4s4s", socket.inet_aton(address),
                                   socket.inet_aton(self.interface))
                sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
                sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, 2)
                sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 0)
            else:
                sock.bind((address, port))
        except OSError as exc:
            sock.close()
            raise SocketBindFailure(f"{address}:{port}: {exc}") from exc
        sock.settimeout(0.2)
        return sock

    # registry

    def register(self, identity):
        with self._reg_lock:
            self._instances = {**self._instances, identity.uuid: identity}

    def unregister(self, uuid):
        with self._reg_lock:
            rest = dict(self._instances)
            rest.pop(uuid, None)
            self._instances = rest

    @property
    def instances(self):
        return list(self._instances.values())

    # request handling

    def plan(self, datagram, peer):
        """Decide the answers to one datagram.

        Returns (request, [(delay_seconds, payload_bytes, uuid)]); request is
        None when the datagram was rejected.
        """
        request = parse_search_request(datagram)
        host = None
        plans = []
        for identity in self._instances.values():
            if not match_target(request.st, identity):
                continue
            if host is None and identity.http_endpoint[0] in ("0.0.0.0", ""):
                host = local_address_for(peer[0])
            h = host if identity.http_endpoint[0] in ("0.0.0.0", "") else None
            for resp in build_search_responses(identity, request.st, host=h):
                delay = self.rng.uniform(0, max(0.0, request.mx - SEND_MARGIN))
                plans.append((delay, resp.serialize(), identity.uuid))
        return request, plans

    def handle(self, datagram, peer):
        started = time.perf_counter()
        try:
            request, plans = self.plan(datagram, peer)
        except SsdpError as exc:
            logger.debug("rejected datagram from %s: %s", peer, exc)
            self._log("", peer, _summary(datagram), f"rejected: {type(exc).__name__}",
                      "rejected", datagram, started)
            return []
        for delay, payload, _ in plans:
            self.scheduler(delay, lambda p=payload: self._send(p, peer))
        uuids = ",".join(dict.fromkeys(u for _, _, u in plans))
        self._log(uuids, peer, f"M-SEARCH ST={request.st} MX={request.mx}",
                  f"{len(plans)} responses", "served", datagram, started)
        return plans

    def _log(self, instance, peer, summary, status, outcome, raw, started):
        if self.log is None:
            return
        latency = (time.perf_counter() - started) * 1e6
        self.log.record(instance=instance, layer="ssdp", peer=peer, request=summary,
                        status=status, outcome=outcome, raw=raw, latency_us=latency)

    def _timer(self, delay, fn):
        if self._stopping.is_set():
            return
        timer = threading.Timer(delay, self._fire, args=(fn,))
        timer.daemon = True
        with self._send_lock:
            self._timers.add(timer)
        timer.start()

    def _fire(self, fn):
        timer = threading.current_thread()
        with self._send_lock:
            self._timers.discard(timer)
        if not self._stopping.is_set():
            fn()

    def _send(self, payload, addr):
        try:
            self.sock.sendto(payload, addr)
        except OSError as exc:
            logger.warning("send to %s failed: %s", addr, exc)

    # advertisements

    def send_advertisements(self, identity, kind=ALIVE):
        host = None
        if identity.http_endpoint[0] in ("0.0.0.0", ""):
            host = local_address_for(self.notify_target[0])
        notify_host = f"{self.notify_target[0]}:{self.notify_target[1]}"
        count = 0
        for ad in build_advertisements(identity, kind, host=host, notify_host=notify_host):
            try:
                self.sock.sendto(ad.serialize(), self.notify_target)
            except OSError as exc:
                raise SocketSendFailure(str(exc)) from exc
            count += 1
        return count

    # lifecycle

    def serve_forever(self):
        while not self._stopping.is_set():
            try:
                datagram, peer = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                if self._stopping.is_set():
                    break
                raise
            try:
                self.handle(datagram, peer)
            except Exception:
                logger.exception("unexpected error handling datagram from %s", peer)

    def start(self):
        self._thread = threading.Thread(target=self.serve_forever, name="ssdp", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._stopping.set()
        if self._thread is not None:
            self._thread.join()
        with self._send_lock:
            timers = list(self._timers)
            self._timers.clear()
        for timer in timers:
            timer.cancel()
        self.sock.close()


def _summary(datagram):
    line = datagram.split(b"\n", 1)[0][:80]
    return line.decode("utf-8", errors="replace").strip()


def send_search(st="upnp:rootdevice", mx=2, target=(SSDP_ADDR, SSDP_PORT), timeout=None,
                user_agent=None):
    """Send one M-SEARCH and collect parsed responses until ``timeout``.

    Unparseable replies are skipped.  Returns [(response, sender_addr)].
    """
    host = f"{target[0]}:{target[1]}"
    request = SsdpSearchRequest(host=host, man=DISCOVER, mx=mx, st=st, user_agent=user_agent)
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
    if _is_multicast(target[0]):
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, 2)
    deadline = time.monotonic() + (timeout if timeout is not None else mx + 0.5)
    found = []
    try:
        sock.sendto(request.serialize(), target)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            sock.settimeout(remaining)
            try:
                data, addr = sock.recvfrom(65535)
            except socket.timeout:
                break
            try:
                found.append((parse_search_response(data), addr))
            except (SsdpError, ValueError):
                logger.debug("ignoring unparseable reply from %s", addr)
    finally:
        sock.close()
    return found

"""GENA eventing: subscriptions, property-set codec and NOTIFY delivery."""

import http.client
import logging
import queue
import re
import threading
import time
import uuid as uuidlib
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple
from urllib.parse import urlsplit

import defusedxml.ElementTree as SafeET
from defusedxml import DefusedXmlException

from .errors import EventingError, MissingCallback, UnknownSid
from .soap import xml_text

logger = logging.getLogger(__name__)

EVENT_NS = "urn:schemas-upnp-org:event-1-0"
DEFAULT_TIMEOUT = 1800
MAX_TIMEOUT = 86400

_CALLBACK_RE = re.compile(r"<([^>]*)>")


@dataclass
class EventPropertySet:
    changes: List[Tuple[str, str]] = field(default_factory=list)


@dataclass
class Subscription:
    sid: str
    callback_urls: List[str]
    timeout_seconds: int
    service: object
    seq: int = 0
    expires_at: float = 0.0
    released: bool = False
    pending: list = field(default_factory=list, repr=False)


def parse_callback(value):
    urls = [u.strip() for u in _CALLBACK_RE.findall(value or "")]
    return [u for u in urls if urlsplit(u).scheme == "http" and urlsplit(u).hostname]


def parse_timeout(value):
    if not value:
        return DEFAULT_TIMEOUT
    value = value.strip().lower()
    if value.startswith("second-"):
        tail = value[len("second-"):]
        if tail == "infinite":
            return DEFAULT_TIMEOUT
        if tail.isdigit() and int(tail) > 0:
            return min(int(tail), MAX_TIMEOUT)
    return DEFAULT_TIMEOUT


def build_propertyset(changes):
    parts = [f'<?xml version="1.0" encoding="utf-8"?>\n<e:propertyset xmlns:e="{EVENT_NS}">']
    for name, value in changes:
        parts.append(f"<e:property><{name}>{xml_text(value)}</{name}></e:property>")
    parts.append("</e:propertyset>\n")
    return "".join(parts).encode("utf-8")


def parse_propertyset(body):
    try:
        root = SafeET.fromstring(body)
    except (ET.ParseError, DefusedXmlException) as exc:
        raise EventingError(f"unparseable property set: {exc}") from exc
    if root.tag != f"{{{EVENT_NS}}}propertyset":
        raise EventingError(f"unexpected document element {root.tag!r}")
    changes = []
    for prop in root.findall(f"{{{EVENT_NS}}}property"):
        for var in prop:
            changes.append((var.tag.rsplit("}", 1)[-1], var.text or ""))
    return EventPropertySet(changes)


def notify_headers(sub, seq, url, body):
    parts = urlsplit(url)
    return {
        "HOST": parts.netloc,
        "CONTENT-TYPE": 'text/xml; charset="utf-8"',
        "CONTENT-LENGTH": str(len(body)),
        "NT": "upnp:event",
        "NTS": "upnp:propchange",
        "SID": sub.sid,
        "SEQ": str(seq),
    }


def build_notify(sub, changes, seq=None, url=None):
    """Full NOTIFY request bytes for one property-set delivery."""
    if isinstance(changes, EventPropertySet):
        changes = changes.changes
    seq = sub.seq if seq is None else seq
    url = url or sub.callback_urls[0]
    body = build_propertyset(changes)
    parts = urlsplit(url)
    path = parts.path or "/"
    if parts.query:
        path += "?" + parts.query
    head = [f"NOTIFY {path} HTTP/1.1"]
    head += [f"{k}: {v}" for k, v in notify_headers(sub, seq, url, body).items()]
    return ("\r\n".join(head) + "\r\n\r\n").encode("latin-1") + body


def parse_notify(raw):
    """(path, headers, EventPropertySet) of a NOTIFY request."""
    head, sep, body = raw.partition(b"\r\n\r\n")
    if not sep:
        raise EventingError("no header/body separator")
    lines = head.decode("latin-1").split("\r\n")
    method, path, _ = lines[0].split(" ", 2)
    if method != "NOTIFY":
        raise EventingError(f"method {method}")
    headers = {}
    for line in lines[1:]:
        key, _, value = line.partition(":")
        headers[key.strip().upper()] = value.strip()
    return path, headers, parse_propertyset(body)


class SubscriptionTable:
    """Live subscriptions of one instance, keyed by SID.

    Expired subscriptions are swept lazily on every access and
    periodically by the owner; an expired SID behaves as unknown.
    """

    def __init__(self, clock=time.monotonic):
        self.clock = clock
        self._subs = {}
        self.lock = threading.RLock()

    def sweep(self, now=None):
        now = self.clock() if now is None else now
        with self.lock:
            dead = [sid for sid, sub in self._subs.items() if sub.expires_at <= now]
            for sid in dead:
                del self._subs[sid]
        return len(dead)

    def get(self, sid):
        self.sweep()
        with self.lock:
            sub = self._subs.get(sid)
        if sub is None:
            raise UnknownSid(sid)
        return sub

    def subscribe(self, callback_urls, timeout, service):
        if not callback_urls:
            raise MissingCallback("no usable callback URL")
        self.sweep()
        sub = Subscription(
            sid=f"uuid:{uuidlib.uuid4()}",
            callback_urls=list(callback_urls),
            timeout_seconds=timeout,
            service=service,
            expires_at=self.clock() + timeout,
        )
        with self.lock:
            self._subs[sub.sid] = sub
        return sub

    def renew(self, sid, timeout):
        sub = self.get(sid)
        with self.lock:
            sub.timeout_seconds = timeout
            sub.expires_at = self.clock() + timeout
        return sub

    def unsubscribe(self, sid):
        self.sweep()
        with self.lock:
            if self._subs.pop(sid, None) is None:
                raise UnknownSid(sid)

    def for_service(self, service):
        self.sweep()
        with self.lock:
            return [s for s in self._subs.values() if s.service == service]

    def __len__(self):
        self.sweep()
        return len(self._subs)


def handle_subscribe(table, headers, service):
    """Apply a SUBSCRIBE request: new subscription or renewal.

    Returns (subscription, is_new).  Raises MissingCallback, UnknownSid or
    EventingError (bad NT, or SID combined with CALLBACK/NT).
    """
    h = {k.upper(): v for k, v in headers.items()}
    timeout = parse_timeout(h.get("TIMEOUT"))
    sid = h.get("SID")
    if sid:
        if "CALLBACK" in h or "NT" in h:
            raise EventingError("SID combined with CALLBACK or NT")
        return table.renew(sid.strip(), timeout), False
    if h.get("NT", "").strip() != "upnp:event":
        raise EventingError(f"NT must be upnp:event, got {h.get('NT')!r}")
    urls = parse_callback(h.get("CALLBACK"))
    if not urls:
        raise MissingCallback(h.get("CALLBACK") or "CALLBACK header absent")
    return table.subscribe(urls, timeout, service), True


def handle_unsubscribe(table, headers):
    h = {k.upper(): v for k, v in headers.items()}
    sid = (h.get("SID") or "").strip()
    if not sid:
        raise UnknownSid("")
    if "CALLBACK" in h or "NT" in h:
        raise EventingError("SID combined with CALLBACK or NT")
    table.unsubscribe(sid)


def deliver(sub, seq, body, timeout=2.0):
    """POST one NOTIFY; first reachable callback URL wins, one retry each."""
    for url in sub.callback_urls:
        parts = urlsplit(url)
        path = parts.path or "/"
        if parts.query:
            path += "?" + parts.query
        for _attempt in range(2):
            conn = http.client.HTTPConnection(parts.hostname, parts.port or 80, timeout=timeout)
            try:
                conn.request("NOTIFY", path, body=body, headers=notify_headers(sub, seq, url, body))
                resp = conn.getresponse()
                resp.read()
                return resp.status
            except (OSError, http.client.HTTPException) as exc:
                logger.debug("NOTIFY %s seq %d to %s failed: %s", sub.sid, seq, url, exc)
            finally:
                conn.close()
    return None


class Notifier:
    """Delivers NOTIFYs off the request path.

    Each SID hashes onto one worker so its events leave in sequence order.
    ``send`` may be replaced (tests capture instead of POSTing).
    """

    def __init__(self, workers=4, send: Optional[Callable] = None):
        self.send = send or deliver
        self.delivered = 0
        self.failed = 0
        self._queues = [queue.Queue() for _ in range(workers)]
        self._threads = [
            threading.Thread(target=self._run, args=(q,), name=f"gena-{i}", daemon=True)
            for i, q in enumerate(self._queues)
        ]
        for t in self._threads:
            t.start()

    def enqueue(self, sub, seq, body):
        self._queues[hash(sub.sid) % len(self._queues)].put((sub, seq, body))

    def _run(self, q):
        while True:
            job = q.get()
            try:
                if job is None:
                    return
                sub, seq, body = job
                try:
                    status = self.send(sub, seq, body)
                except Exception:
                    logger.exception("NOTIFY delivery crashed")
                    status = None
                if status is None:
                    self.failed += 1
                else:
                    self.delivered += 1
            finally:
                q.task_done()

    def flush(self):
        for q in self._queues:
            q.join()

    def close(self):
        for q in self._queues:
            q.put(None)
        for t in self._threads:
            t.join(timeout=5)

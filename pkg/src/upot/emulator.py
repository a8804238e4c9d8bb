"""Honeypot instances: serve a DeviceBundle as a live UPnP device.

A bundle is interpreted directly; action dispatch is driven only by the
parsed SCPDs, so any vendor's device works without device-specific code.
"""

import errno
import http.server
import logging
import socket
import threading
import time
import uuid as uuidlib
from dataclasses import replace
from typing import Optional

from . import bundle as bundlelib
from . import datatypes, gena, soap
from .description import READ, argument_variable, classify_action
from .errors import (
    BundleError,
    BundleInvalid,
    ControlError,
    DescriptionError,
    EventingError,
    MissingCallback,
    PortInUse,
    UnknownSid,
)
from .ssdp import InstanceIdentity

logger = logging.getLogger(__name__)

MAX_BODY = 1 << 20


class StateStore:
    """Current value of every declared state variable, keyed (service key, name)."""

    def __init__(self, entries, snapshot):
        self.defs = {}
        self.values = {}
        self.lock = threading.RLock()
        for entry in entries:
            for var in entry.description.state_variables:
                key = (entry.key, var.name)
                self.defs[key] = var
                value = snapshot.get(bundlelib.snapshot_key(entry.key, var.name))
                if value is None:
                    value = datatypes.default_for(var)
                elif not datatypes.check_value(var, value):
                    logger.warning("snapshot value %r of %s/%s violates its definition",
                                   value, entry.key, var.name)
                self.values[key] = value

    def get(self, service_key, name):
        with self.lock:
            return self.values[(service_key, name)]

    def validates(self, service_key, name, value):
        var = self.defs.get((service_key, name))
        return var is not None and datatypes.check_value(var, value)

    def write(self, service_key, changes):
        """Store validated values; raises ValueError leaving the store untouched."""
        with self.lock:
            for name, value in changes:
                if not self.validates(service_key, name, value):
                    raise ValueError(f"{name}={value!r}")
            for name, value in changes:
                self.values[(service_key, name)] = value

    def violations(self):
        with self.lock:
            return [
                (key, value) for key, value in self.values.items()
                if not datatypes.check_value(self.defs[key], value)
            ]

    def snapshot(self):
        with self.lock:
            return {bundlelib.snapshot_key(s, n): v for (s, n), v in self.values.items()}

    def copy_values(self):
        with self.lock:
            return dict(self.values)


def _strip_version(service_type):
    head, sep, tail = service_type.rpartition(":")
    return head if sep and tail.isdigit() else service_type


def rebrand(bundle, new_uuid):
    """Copy of ``bundle`` presenting a different root UDN.

    The root UDN is rewritten in every document; embedded UDNs are derived
    from the new one so a fleet cloned from one bundle stays distinct.
    """
    if not new_uuid.startswith("uuid:"):
        new_uuid = f"uuid:{new_uuid}"
    root = bundlelib.root_description(bundle)
    mapping = {}
    for i, dev in enumerate(bundlelib.iter_devices(root)):
        if i == 0:
            mapping[dev.udn] = new_uuid
        else:
            mapping[dev.udn] = f"uuid:{uuidlib.uuid5(uuidlib.UUID(int=0), new_uuid + dev.udn)}"
    documents = {}
    for path, data in bundle.documents.items():
        if path == bundle.manifest.root_path or path.endswith(".xml"):
            for old, new in mapping.items():
                data = data.replace(old.encode(), new.encode())
        documents[path] = data
    manifest = replace(bundle.manifest, uuid=new_uuid)
    return replace(bundle, manifest=manifest, documents=documents)


class _Server(http.server.ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128


class Instance:
    """One running honeypot built from a bundle.

    ``log`` is an InteractionLog (or None); ``responder`` an SsdpResponder
    to register with.  ``latency`` optionally returns extra seconds to wait
    before each response.  ``notify_send`` replaces real NOTIFY delivery.
    """

    def __init__(self, bundle, host="127.0.0.1", port=0, log=None, responder=None, uuid=None,
                 latency=None, notify_send=None, checkpoint_path=None, checkpoint_interval=None,
                 sweep_interval=30.0, clock=time.monotonic):
        if uuid is not None:
            bundle = rebrand(bundle, uuid)
        try:
            self.root, self.entries = bundlelib.validate_bundle(bundle)
        except (BundleError, DescriptionError) as exc:
            raise BundleInvalid(str(exc)) from exc
        self.bundle = bundle
        self.log = log
        self.responder = responder
        self.latency = latency
        self.checkpoint_path = checkpoint_path
        self.checkpoint_interval = checkpoint_interval
        self.sweep_interval = sweep_interval
        self.store = StateStore(self.entries, bundle.snapshot)
        self.subscriptions = gena.SubscriptionTable(clock=clock)
        self.state_lock = threading.RLock()
        self.description_paths = {bundle.manifest.root_path, *(e.scpd_path for e in self.entries)}
        self.control_paths = {e.control_path: e for e in self.entries}
        self.event_paths = {e.event_path: e for e in self.entries}
        self._stop = threading.Event()
        self._threads = []
        self.server = self._bind(host, port)
        self.notifier = gena.Notifier(send=notify_send)
        self.host, self.port = host, self.server.server_address[1]
        device_types, service_types, owners = bundlelib.bundle_identity_types(bundle)
        self.identity = InstanceIdentity(
            uuid=bundle.manifest.uuid,
            device_types=tuple(device_types),
            service_types=tuple(service_types),
            http_endpoint=(host, self.port),
            root_description_path=bundle.manifest.root_path,
            server=bundle.manifest.server,
            type_udns=owners,
        )

    def _bind(self, host, port):
        handler = type("Handler", (_Handler,), {"instance": self})
        try:
            return _Server((host, port), handler)
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise PortInUse(f"{host}:{port}") from exc
            raise

    @property
    def uuid(self):
        return self.identity.uuid

    @property
    def base_url(self):
        return f"http://{self.host}:{self.port}"

    @property
    def location(self):
        return self.base_url + self.bundle.manifest.root_path

    def start(self):
        t = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.2},
                             name=f"http-{self.port}", daemon=True)
        t.start()
        self._threads.append(t)
        t = threading.Thread(target=self._housekeeping, name=f"sweep-{self.port}", daemon=True)
        t.start()
        self._threads.append(t)
        if self.responder is not None:
            self.responder.register(self.identity)
        return self

    def _housekeeping(self):
        last_checkpoint = time.monotonic()
        while not self._stop.wait(min(self.sweep_interval, self.checkpoint_interval or 1e9)):
            self.subscriptions.sweep()
            if self.checkpoint_interval and time.monotonic() - last_checkpoint >= self.checkpoint_interval:
                self.checkpoint()
                last_checkpoint = time.monotonic()

    def checkpoint(self):
        if self.checkpoint_path:
            bundlelib.write_snapshot(self.checkpoint_path, self.store.snapshot())

    def stop(self):
        if self._stop.is_set():
            return
        self._stop.set()
        if self.responder is not None:
            self.responder.unregister(self.uuid)
        self.server.shutdown()
        self.server.server_close()
        for t in self._threads:
            t.join(timeout=5)
        self.notifier.close()
        self.checkpoint()

    # control

    def dispatch_action(self, inv, entry):
        """Execute an invocation against the state store.

        Reads fill out-arguments from the store; writes validate and store
        in-arguments, then fill out-arguments; faults 401/402/501 otherwise.
        """
        if _strip_version(inv.service_type) != _strip_version(entry.ref.service_type):
            return soap.ActionResult.fault(401)
        service = entry.description
        action = service.action(inv.action_name)
        if action is None:
            return soap.ActionResult.fault(401)
        given = [name for name, _ in inv.arguments]
        expected = [a.name for a in action.in_arguments]
        if sorted(given) != sorted(expected) or len(set(given)) != len(given):
            return soap.ActionResult.fault(402)
        values = dict(inv.arguments)
        kind = classify_action(action)
        with self.state_lock:
            if kind != READ:
                changes = []
                for arg in action.in_arguments:
                    target = argument_variable(service, arg)
                    if not self.store.validates(entry.key, target, values[arg.name]):
                        return soap.ActionResult.fault(402)
                    changes.append((target, values[arg.name]))
                try:
                    self.store.write(entry.key, changes)
                except ValueError:
                    return soap.ActionResult.fault(402)
                self._emit(entry, changes)
            try:
                out = [
                    (arg.name, self.store.get(entry.key, argument_variable(service, arg)))
                    for arg in action.out_arguments
                ]
            except KeyError:
                return soap.ActionResult.fault(501)
        return soap.ActionResult(action_name=action.name, out_arguments=out)

    # eventing

    def _evented(self, entry):
        return {v.name for v in entry.description.state_variables if v.send_events}

    def _emit(self, entry, changes):
        evented = self._evented(entry)
        latest = {}
        for name, value in changes:
            if name in evented:
                latest.pop(name, None)
                latest[name] = value
        if not latest:
            return
        body = gena.build_propertyset(list(latest.items()))
        for sub in self.subscriptions.for_service(entry.key):
            self._queue_event(sub, body)

    def _queue_event(self, sub, body):
        seq = sub.seq
        sub.seq += 1
        if sub.released:
            self.notifier.enqueue(sub, seq, body)
        else:
            sub.pending.append((seq, body))

    def subscribe(self, entry, headers):
        with self.state_lock:
            sub, new = gena.handle_subscribe(self.subscriptions, headers, entry.key)
            if new:
                initial = [
                    (v.name, self.store.get(entry.key, v.name))
                    for v in entry.description.state_variables if v.send_events
                ]
                self._queue_event(sub, gena.build_propertyset(initial))
        return sub, new

    def release(self, sub):
        """Let queued events (the initial one first) flow to the subscriber."""
        with self.state_lock:
            sub.released = True
            pending, sub.pending = sub.pending, []
            for seq, body in pending:
                self.notifier.enqueue(sub, seq, body)


class _Handler(http.server.BaseHTTPRequestHandler):
    instance: Optional[Instance] = None
    protocol_version = "HTTP/1.1"
    timeout = 30
    # headers and body go out as separate writes; without this a keep-alive
    # client waits out its delayed ACK on every response
    disable_nagle_algorithm = True

    def version_string(self):
        return self.instance.bundle.manifest.server

    def log_message(self, format, *args):
        logger.debug("%s %s", self.address_string(), format % args)

    def handle_one_request(self):
        try:
            self.headers = None
            self.requestline = ""
            self.raw_requestline = self.rfile.readline(65537)
            self._started = time.perf_counter()
            self._body = b""
            self._logged = False
            if len(self.raw_requestline) > 65536:
                self.requestline = self.raw_requestline[:200].decode("latin-1", "replace").strip()
                self.request_version = "HTTP/1.1"
                self.command = None
                self._reply(414, b"", layer="presentation", outcome="rejected")
                self.close_connection = True
                return
            if not self.raw_requestline:
                self.close_connection = True
                return
            if not self.parse_request():
                self._record("presentation", "rejected", "400")
                return
            self._route()
            self.wfile.flush()
        except (socket.timeout, ConnectionError) as exc:
            logger.debug("connection dropped: %s", exc)
            self.close_connection = True

    # plumbing

    def _path(self):
        path = self.path
        if path.startswith(("http://", "https://")):
            path = bundlelib.url_path(path)
        return path

    def _read_body(self):
        try:
            length = int(self.headers.get("Content-Length") or 0)
        except ValueError:
            length = 0
        if length < 0 or length > MAX_BODY:
            self.close_connection = True
            return None
        self._body = self.rfile.read(length) if length else b""
        return self._body

    def _raw(self):
        if self.headers is None:
            return self.raw_requestline
        return self.raw_requestline + bytes(self.headers) + self._body

    def _record(self, layer, outcome, status):
        inst = self.instance
        if inst.log is None or self._logged:
            return
        self._logged = True
        inst.log.record(
            instance=inst.uuid,
            layer=layer,
            peer=self.client_address,
            request=getattr(self, "requestline", "")[:200],
            status=status,
            outcome=outcome,
            raw=self._raw(),
            latency_us=(time.perf_counter() - self._started) * 1e6,
        )

    def _reply(self, status, body, content_type="text/html", headers=(), layer="presentation",
               outcome="served", head_only=False):
        if self.instance.latency is not None:
            time.sleep(max(0.0, self.instance.latency()))
        self.send_response(status)
        if content_type:
            self.send_header("Content-Type", content_type)
        for key, value in headers:
            self.send_header(key, value)
        self.send_header("Content-Length", str(len(body)))
        # logged before anything reaches the peer, so a client that has its
        # answer can rely on the record existing
        self._record(layer, outcome, str(status))
        self.end_headers()
        if not head_only and body:
            self.wfile.write(body)
        self.wfile.flush()

    def send_error(self, code, message=None, explain=None):
        self._record("presentation", "rejected", str(code))
        super().send_error(code, message, explain)

    def _not_found(self, layer, head_only=False):
        body = b"" if head_only else b"<html><body><h1>404 Not Found</h1></body></html>"
        self._reply(404, body, layer=layer, outcome="rejected", head_only=head_only)

    def _route(self):
        method = self.command.upper()
        if method in ("GET", "HEAD"):
            self._get(head_only=method == "HEAD")
        elif method in ("POST", "M-POST"):
            self._post()
        elif method == "SUBSCRIBE":
            self._subscribe()
        elif method == "UNSUBSCRIBE":
            self._unsubscribe()
        else:
            self._read_body()
            self._reply(501, b"", layer="presentation", outcome="rejected")

    # description + presentation

    def _get(self, head_only):
        inst = self.instance
        path = self._path()
        documents = inst.bundle.documents
        layer = "description" if path in inst.description_paths else "presentation"
        if path in documents:
            ctype = bundlelib.content_type(inst.bundle, path)
            self._reply(200, documents[path], content_type=ctype, layer=layer, head_only=head_only)
            return
        if path.split("?")[0] in inst.control_paths:
            self._reply(405, b"", layer="control", outcome="rejected", head_only=head_only)
            return
        self._not_found(layer, head_only=head_only)

    # control

    def _post(self):
        inst = self.instance
        path = self._path()
        body = self._read_body()
        entry = inst.control_paths.get(path)
        if entry is None:
            self._not_found("control")
            return
        if body is None:
            self._fault(402, "Invalid Args")
            return
        try:
            inv = soap.parse_action_request(self.command, dict(self.headers.items()), body)
        except ControlError as exc:
            logger.debug("bad control request: %s", exc)
            self._fault(401 if not isinstance(exc, soap.UnknownContentType) else 402)
            return
        try:
            result = inst.dispatch_action(inv, entry)
        except Exception:
            logger.exception("action %s failed", inv.action_name)
            result = soap.ActionResult.fault(501)
        if result.is_fault:
            self._fault(result.error_code, result.error_description)
            return
        payload = soap.action_response_body(inv.service_type, inv.action_name, result.out_arguments)
        self._reply(200, payload, content_type=soap.CONTENT_TYPE, headers=[("EXT", "")],
                    layer="control")

    def _fault(self, code, description=None):
        body = soap.fault_body(code, description or soap.FAULT_TEXT.get(code, ""))
        self._reply(500, body, content_type=soap.CONTENT_TYPE, headers=[("EXT", "")],
                    layer="control", outcome="fault")

    # eventing

    def _subscribe(self):
        inst = self.instance
        self._read_body()
        entry = inst.event_paths.get(self._path())
        if entry is None:
            self._not_found("eventing")
            return
        try:
            sub, _ = inst.subscribe(entry, dict(self.headers.items()))
        except (MissingCallback, UnknownSid):
            self._reply(412, b"", layer="eventing", outcome="rejected")
            return
        except EventingError:
            self._reply(400, b"", layer="eventing", outcome="rejected")
            return
        self._reply(200, b"", content_type="", layer="eventing",
                    headers=[("SID", sub.sid), ("TIMEOUT", f"Second-{sub.timeout_seconds}")])
        inst.release(sub)

    def _unsubscribe(self):
        inst = self.instance
        self._read_body()
        if inst.event_paths.get(self._path()) is None:
            self._not_found("eventing")
            return
        try:
            gena.handle_unsubscribe(inst.subscriptions, dict(self.headers.items()))
        except UnknownSid:
            self._reply(412, b"", layer="eventing", outcome="rejected")
            return
        except EventingError:
            self._reply(400, b"", layer="eventing", outcome="rejected")
            return
        self._reply(200, b"", content_type="", layer="eventing")


def instantiate(bundle, host="127.0.0.1", port=0, **kwargs):
    """Create and start an Instance for ``bundle``."""
    return Instance(bundle, host=host, port=port, **kwargs).start()

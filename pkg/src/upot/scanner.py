"""State scanner: discover a UPnP device, crawl it and snapshot its state.

The scanner only ever issues HTTP GETs and SOAP calls to read-classified
actions, and it consults nothing but the parsed descriptions, so it works
on devices of any vendor.
"""

import logging
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional
from urllib.parse import urljoin

from . import bundle as bundlelib
from . import datatypes, soap, ssdp
from .description import READ, argument_variable, classify_action, parse_device_description
from .errors import ControlError, ControlUnreachable, DescriptionError, RootFetchFailed

logger = logging.getLogger(__name__)

MAX_DEPTH = 8
USER_AGENT = "Linux/3.14 UPnP/1.0 upot-scanner/0.1"


@dataclass
class ScanReport:
    fetched_count: int = 0
    failed_urls: List[str] = field(default_factory=list)
    invoked_actions: List[tuple] = field(default_factory=list)
    unresolved_variables: List[str] = field(default_factory=list)

    @property
    def attempted(self):
        return self.fetched_count + len(self.failed_urls)

    def to_text(self):
        lines = [
            f"fetched: {self.fetched_count}",
            f"failed: {len(self.failed_urls)}",
        ]
        lines += [f"  failed_url: {u}" for u in self.failed_urls]
        lines.append(f"invoked: {len(self.invoked_actions)}")
        lines += [f"  {name}: {outcome}" for name, outcome in self.invoked_actions]
        lines.append(f"unresolved: {len(self.unresolved_variables)}")
        lines += [f"  {v}" for v in self.unresolved_variables]
        return "\n".join(lines) + "\n"


@dataclass
class Discovered:
    location: str
    usn: str
    st: str = ""
    server: str = ""

    @property
    def uuid(self):
        return self.usn.split("::", 1)[0]


class HttpClient:
    """Minimal HTTP client: per-request timeout, one retry on transport errors.

    Proxy settings from the environment are ignored; targets are local.
    """

    def __init__(self, timeout=5.0, retries=1, user_agent=USER_AGENT):
        self.timeout = timeout
        self.retries = retries
        self.user_agent = user_agent
        self._opener = urllib.request.build_opener(urllib.request.ProxyHandler({}))

    def _do(self, request):
        last = None
        for _ in range(self.retries + 1):
            try:
                with self._opener.open(request, timeout=self.timeout) as resp:
                    return resp.status, dict(resp.headers.items()), resp.read()
            except urllib.error.HTTPError as exc:
                body = exc.read()
                return exc.code, dict(exc.headers.items()) if exc.headers else {}, body
            except (urllib.error.URLError, OSError) as exc:
                last = exc
        raise ConnectionError(f"{request.full_url}: {last}")

    def get(self, url):
        req = urllib.request.Request(url, headers={"User-Agent": self.user_agent})
        return self._do(req)

    def post(self, url, headers, body):
        req = urllib.request.Request(url, data=body, method="POST",
                                     headers={**headers, "User-Agent": self.user_agent})
        return self._do(req)


def _header(headers, name):
    for key, value in headers.items():
        if key.lower() == name.lower():
            return value
    return None


def discover(st="upnp:rootdevice", timeout=3.0, target=(ssdp.SSDP_ADDR, ssdp.SSDP_PORT), mx=2):
    """M-SEARCH and collect responders, deduplicated by USN.

    An empty list is a valid result, not an error.
    """
    seen = {}
    for resp, _ in ssdp.send_search(st=st, mx=mx, target=target, timeout=timeout,
                                    user_agent=USER_AGENT):
        if resp.usn not in seen:
            seen[resp.usn] = Discovered(location=resp.location, usn=resp.usn, st=resp.st,
                                        server=resp.server)
    return list(seen.values())


def _walk(root):
    """Devices of the tree, depth-capped, each UDN visited once."""
    visited = set()
    stack = [(root, 0)]
    while stack:
        dev, depth = stack.pop(0)
        if dev.udn in visited:
            continue
        visited.add(dev.udn)
        yield dev
        if depth < MAX_DEPTH:
            stack.extend((child, depth + 1) for child in dev.embedded_devices)


def resource_urls(root, location):
    """Absolute URLs of every SCPD, icon and presentation page."""
    base = root.url_base or location
    urls = []
    for dev in _walk(root):
        urls += [urljoin(base, ref.scpd_url) for ref in dev.services]
        urls += [urljoin(base, icon.url) for icon in dev.icons]
        urls += [urljoin(base, url) for url in dev.presentation_urls]
    return list(dict.fromkeys(urls))


def crawl(location, client=None, workers=4, budget=None):
    """Fetch the root description and everything it references.

    Returns (bundle, report); the bundle's snapshot is empty until
    ``scan_state`` runs.  Only a failed root fetch is fatal.
    """
    client = client or HttpClient()
    report = ScanReport()
    deadline = time.monotonic() + budget if budget else None
    try:
        status, headers, body = client.get(location)
    except ConnectionError as exc:
        raise RootFetchFailed(str(exc)) from exc
    if status != 200:
        raise RootFetchFailed(f"{location}: HTTP {status}")
    try:
        root = parse_device_description(body)
    except DescriptionError as exc:
        raise RootFetchFailed(f"{location}: {exc}") from exc
    report.fetched_count += 1
    root_path = bundlelib.url_path(location)
    documents = {root_path: body}
    content_types = {root_path: _header(headers, "Content-Type") or bundlelib.guess_content_type(root_path)}
    server = _header(headers, "Server") or bundlelib.DEFAULT_SERVER

    def fetch(url):
        if deadline is not None and time.monotonic() > deadline:
            return url, None, "crawl budget exhausted"
        try:
            return url, client.get(url), None
        except ConnectionError as exc:
            return url, None, str(exc)

    urls = [u for u in resource_urls(root, location) if bundlelib.url_path(u) != root_path]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(fetch, urls))
    for url, result, error in results:
        path = bundlelib.url_path(url)
        if result is None or result[0] != 200:
            reason = error or f"HTTP {result[0]}"
            logger.info("fetch of %s failed: %s", url, reason)
            report.failed_urls.append(path)
            continue
        status, headers, body = result
        documents[path] = body
        content_types[path] = _header(headers, "Content-Type") or bundlelib.guess_content_type(path)
        report.fetched_count += 1
    bundle = bundlelib.assemble(documents, root_path, server=server, content_types=content_types,
                                failed_urls=report.failed_urls, source_location=location)
    bundle.snapshot = {}
    return bundle, report


def scan_state(bundle, client=None, report=None, location=None, strict=True):
    """Invoke every read action and record the values it reports.

    Variables no read action reports get their defaults and are listed as
    unresolved.  Action faults are recorded, never fatal; with ``strict``
    ControlUnreachable is raised when read actions exist but none succeed.
    """
    client = client or HttpClient()
    report = report if report is not None else ScanReport()
    location = location or bundle.manifest.source_location
    root = bundlelib.root_description(bundle)
    base = root.url_base or location
    entries = bundlelib.bundle_services(bundle, root)
    snapshot = {}
    attempted = succeeded = 0
    for entry in entries:
        service = entry.description
        control_url = urljoin(base, entry.ref.control_url)
        for action in service.actions:
            if classify_action(action) != READ or not action.out_arguments:
                continue
            attempted += 1
            label = f"{entry.key}#{action.name}"
            inv = soap.ActionInvocation(entry.ref.service_type, action.name, [])
            headers, body = soap.build_action_request(inv)
            try:
                status, _, payload = client.post(control_url, headers, body)
                result = soap.parse_action_response_body(payload, action)
            except (ConnectionError, ControlError) as exc:
                report.invoked_actions.append((label, f"error: {exc}"))
                continue
            if result.is_fault:
                report.invoked_actions.append((label, f"fault {result.error_code}"))
                continue
            succeeded += 1
            report.invoked_actions.append((label, "ok"))
            values = dict(result.out_arguments)
            for arg in action.out_arguments:
                if arg.name not in values:
                    continue
                key = bundlelib.snapshot_key(entry.key, argument_variable(service, arg))
                snapshot.setdefault(key, values[arg.name])
    for entry in entries:
        for var in entry.description.state_variables:
            key = bundlelib.snapshot_key(entry.key, var.name)
            if key not in snapshot:
                snapshot[key] = datatypes.default_for(var)
                report.unresolved_variables.append(key)
    bundle.snapshot = snapshot
    if strict and attempted and not succeeded:
        raise ControlUnreachable(f"none of {attempted} read actions succeeded")
    return bundle


def scan(location, client=None, workers=4, budget=None, strict=True):
    """crawl + scan_state; returns (bundle, report)."""
    client = client or HttpClient()
    bundle, report = crawl(location, client=client, workers=workers, budget=budget)
    scan_state(bundle, client=client, report=report, location=location, strict=strict)
    return bundle, report


def select(found, uuid: Optional[str] = None):
    if uuid is None:
        return found
    if not uuid.startswith("uuid:"):
        uuid = f"uuid:{uuid}"
    return [d for d in found if d.uuid == uuid]

"""Device bundles: a portable clone of one UPnP device.

On-disk layout (one directory per bundle)::

    manifest.json      UTF-8 JSON, schema below
    documents/...      every crawled document, raw bytes, mirroring URL paths
    snapshot.txt       one ``<service key>/<variable>=<value>`` line per variable

manifest.json keys:

    format            "upot-bundle/1"
    uuid              root device UDN ("uuid:...")
    device_types      device types in tree order, deduplicated
    service_types     service types in tree order, deduplicated
    root_path         URL path of the root description, e.g. "/setup.xml"
    source_location   URL the root description was crawled from
    server            SERVER header observed on the original device
    scan_timestamp    ISO 8601 UTC time of the scan
    url_map           crawl path -> stored path (relative to the bundle dir)
    content_types     crawl path -> Content-Type observed at crawl time
    failed_urls       crawl paths whose fetch failed
    checksums         stored path -> sha256 hex, including snapshot.txt
    curated_list      service key -> service type/id, URLs, actions, variables

Snapshot values escape backslash, newline and carriage return as ``\\\\``,
``\\n`` and ``\\r``; the first unescaped ``=`` separates key from value.
"""

import datetime
import hashlib
import json
import mimetypes
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional
from urllib.parse import quote, urljoin, urlsplit

from . import datatypes
from .description import (
    iter_devices,
    iter_services,
    parse_device_description,
    parse_service_description,
)
from .errors import BundleInvalid, DescriptionError, IoFailure, ManifestCorrupt

FORMAT = "upot-bundle/1"
DEFAULT_SERVER = "Unspecified, UPnP/1.0, Unspecified"
ORIGIN = "http://origin.invalid"


@dataclass
class Manifest:
    uuid: str
    device_types: List[str]
    service_types: List[str]
    root_path: str
    url_map: Dict[str, str] = field(default_factory=dict)
    content_types: Dict[str, str] = field(default_factory=dict)
    failed_urls: List[str] = field(default_factory=list)
    server: str = DEFAULT_SERVER
    source_location: str = ""
    scan_timestamp: str = ""


@dataclass
class DeviceBundle:
    manifest: Manifest
    documents: Dict[str, bytes] = field(default_factory=dict)
    snapshot: Dict[str, str] = field(default_factory=dict)
    curated_list: Dict[str, dict] = field(default_factory=dict)


@dataclass
class ServiceEntry:
    """One service of a bundle with its parsed SCPD and resolved paths."""

    key: str
    device: object
    ref: object
    description: object
    scpd_path: str
    control_path: str
    event_path: str


def now_iso():
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def url_path(url):
    parts = urlsplit(url)
    path = parts.path or "/"
    return path + ("?" + parts.query if parts.query else "")


def crawl_path(device, root_path, url):
    """Device-relative path of a URL declared in a description."""
    base = device.url_base or (ORIGIN + root_path)
    return url_path(urljoin(base, url))


def stored_path_for(crawl, taken=()):
    parts = urlsplit(crawl)
    segments = [s if s not in (".", "..") else "_" for s in parts.path.split("/") if s]
    if not segments or parts.path.endswith("/"):
        segments.append("index")
    name = "/".join(quote(s, safe=" ._-~+,;=@") for s in segments)
    if parts.query:
        name += "@" + quote(parts.query, safe="")
    candidate = f"documents/{name}"
    n = 1
    while candidate in taken:
        n += 1
        candidate = f"documents/{name}~{n}"
    return candidate


def service_keys(root):
    """(device, ServiceRef, key) for every service; keys are unique per bundle."""
    pairs = list(iter_services(root))
    counts = {}
    for _, ref in pairs:
        counts[ref.service_id] = counts.get(ref.service_id, 0) + 1
    return [
        (dev, ref, ref.service_id if counts[ref.service_id] == 1 else f"{dev.udn}/{ref.service_id}")
        for dev, ref in pairs
    ]


def snapshot_key(service_key, variable):
    return f"{service_key}/{variable}"


def split_snapshot_key(key):
    service_key, _, variable = key.rpartition("/")
    return service_key, variable


def curate(ref, description, scpd_path):
    return {
        "service_type": ref.service_type,
        "service_id": ref.service_id,
        "scpd_path": scpd_path,
        "actions": [
            {
                "name": a.name,
                "arguments": [
                    {"name": g.name, "direction": g.direction,
                     "related_state_variable": g.related_state_variable}
                    for g in a.arguments
                ],
            }
            for a in description.actions
        ],
        "state_variables": [
            {
                "name": v.name,
                "data_type": v.data_type,
                "default_value": v.default_value,
                "allowed_values": v.allowed_values,
                "allowed_range": None if v.allowed_range is None else {
                    "minimum": v.allowed_range.minimum,
                    "maximum": v.allowed_range.maximum,
                    "step": v.allowed_range.step,
                },
                "send_events": v.send_events,
            }
            for v in description.state_variables
        ],
    }


def describe_root(root):
    device_types = list(dict.fromkeys(d.device_type for d in iter_devices(root)))
    service_types = list(dict.fromkeys(ref.service_type for _, ref in iter_services(root)))
    return device_types, service_types


def referenced_paths(root, root_path):
    """Crawl paths of every document a root description points at."""
    paths = []
    for dev in iter_devices(root):
        for ref in dev.services:
            paths.append(crawl_path(root, root_path, ref.scpd_url))
        for icon in dev.icons:
            paths.append(crawl_path(root, root_path, icon.url))
        for url in dev.presentation_urls:
            paths.append(crawl_path(root, root_path, url))
    return list(dict.fromkeys(p for p in paths if p != root_path))


def guess_content_type(path):
    if path.split("?")[0].endswith(".xml"):
        return 'text/xml; charset="utf-8"'
    ctype, _ = mimetypes.guess_type(path.split("?")[0])
    return ctype or "application/octet-stream"


def root_description(bundle):
    return parse_device_description(bundle.documents[bundle.manifest.root_path])


def bundle_services(bundle, root=None):
    """ServiceEntry for every service whose SCPD is present in the bundle."""
    root = root or root_description(bundle)
    entries = []
    for dev, ref, key in service_keys(root):
        scpd = crawl_path(root, bundle.manifest.root_path, ref.scpd_url)
        if scpd not in bundle.documents:
            continue
        entries.append(ServiceEntry(
            key=key,
            device=dev,
            ref=ref,
            description=parse_service_description(bundle.documents[scpd]),
            scpd_path=scpd,
            control_path=crawl_path(root, bundle.manifest.root_path, ref.control_url),
            event_path=crawl_path(root, bundle.manifest.root_path, ref.event_sub_url),
        ))
    return entries


def build_curated_list(entries):
    return {e.key: curate(e.ref, e.description, e.scpd_path) for e in entries}


def default_snapshot(entries):
    return {
        snapshot_key(e.key, v.name): datatypes.default_for(v)
        for e in entries
        for v in e.description.state_variables
    }


def assemble(documents, root_path, snapshot=None, server=DEFAULT_SERVER, content_types=None,
             failed_urls=(), source_location="", scan_timestamp=None):
    """Build a complete bundle from raw documents keyed by crawl path.

    Variables missing from ``snapshot`` start at their defaults.
    """
    if root_path not in documents:
        raise BundleInvalid(f"root description {root_path} missing")
    root = parse_device_description(documents[root_path])
    device_types, service_types = describe_root(root)
    manifest = Manifest(
        uuid=root.udn,
        device_types=device_types,
        service_types=service_types,
        root_path=root_path,
        server=server,
        source_location=source_location or f"http://127.0.0.1{root_path}",
        scan_timestamp=scan_timestamp or now_iso(),
        failed_urls=list(failed_urls),
    )
    taken = set()
    for path in documents:
        manifest.url_map[path] = stored_path_for(path, taken)
        taken.add(manifest.url_map[path])
        manifest.content_types[path] = (content_types or {}).get(path) or guess_content_type(path)
    bundle = DeviceBundle(manifest=manifest, documents=dict(documents))
    entries = bundle_services(bundle, root)
    bundle.curated_list = build_curated_list(entries)
    bundle.snapshot = default_snapshot(entries)
    for key, value in (snapshot or {}).items():
        if key not in bundle.snapshot:
            raise BundleInvalid(f"snapshot key {key} names no declared variable")
        bundle.snapshot[key] = value
    validate_bundle(bundle)
    return bundle


def validate_bundle(bundle):
    m = bundle.manifest
    if m.root_path not in bundle.documents:
        raise BundleInvalid(f"root description {m.root_path} missing")
    try:
        root = root_description(bundle)
        entries = bundle_services(bundle, root)
    except DescriptionError as exc:
        raise BundleInvalid(f"unparseable description: {exc}") from exc
    for _, ref, _ in service_keys(root):
        scpd = crawl_path(root, m.root_path, ref.scpd_url)
        if scpd not in bundle.documents and scpd not in m.failed_urls:
            raise BundleInvalid(f"SCPD {scpd} neither stored nor recorded as failed")
    declared = {snapshot_key(e.key, v.name) for e in entries for v in e.description.state_variables}
    for key in bundle.snapshot:
        if key not in declared:
            raise BundleInvalid(f"snapshot key {key} names no declared variable")
    for path in bundle.documents:
        if path not in m.url_map:
            raise BundleInvalid(f"document {path} missing from url_map")
    return root, entries


# --- persistence -----------------------------------------------------------

def _escape(text):
    return text.replace("\\", "\\\\").replace("\n", "\\n").replace("\r", "\\r").replace("=", "\\=")


def _unescape(text):
    out = []
    chars = iter(text)
    for c in chars:
        if c == "\\":
            nxt = next(chars, "")
            out.append({"n": "\n", "r": "\r"}.get(nxt, nxt))
        else:
            out.append(c)
    return "".join(out)


def _split_line(line):
    i = 0
    while i < len(line):
        if line[i] == "\\":
            i += 2
            continue
        if line[i] == "=":
            return line[:i], line[i + 1:]
        i += 1
    raise ManifestCorrupt(f"snapshot line without '=': {line[:60]!r}")


def dump_snapshot(snapshot):
    lines = [f"{_escape(k)}={_escape(v)}" for k, v in snapshot.items()]
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def load_snapshot(data):
    snapshot = {}
    for line in data.decode("utf-8").split("\n"):
        if not line:
            continue
        key, value = _split_line(line)
        snapshot[_unescape(key)] = _unescape(value)
    return snapshot


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def save_bundle(bundle, path):
    m = bundle.manifest
    snapshot_bytes = dump_snapshot(bundle.snapshot)
    checksums = {"snapshot.txt": _sha256(snapshot_bytes)}
    try:
        os.makedirs(path, exist_ok=True)
        for crawl, stored in m.url_map.items():
            data = bundle.documents[crawl]
            target = os.path.join(path, stored)
            os.makedirs(os.path.dirname(target), exist_ok=True)
            with open(target, "wb") as fh:
                fh.write(data)
            checksums[stored] = _sha256(data)
        with open(os.path.join(path, "snapshot.txt"), "wb") as fh:
            fh.write(snapshot_bytes)
        doc = {
            "format": FORMAT,
            "uuid": m.uuid,
            "device_types": m.device_types,
            "service_types": m.service_types,
            "root_path": m.root_path,
            "source_location": m.source_location,
            "server": m.server,
            "scan_timestamp": m.scan_timestamp,
            "url_map": m.url_map,
            "content_types": m.content_types,
            "failed_urls": m.failed_urls,
            "checksums": checksums,
            "curated_list": bundle.curated_list,
        }
        with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, ensure_ascii=False)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def _read(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError:
        return None
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def load_bundle(path):
    raw = _read(os.path.join(path, "manifest.json"))
    if raw is None:
        if not os.path.isdir(path):
            raise IoFailure(f"{path}: no such bundle directory")
        raise ManifestCorrupt(f"{path}: manifest.json missing")
    try:
        doc = json.loads(raw.decode("utf-8"))
        if doc.get("format") != FORMAT:
            raise ManifestCorrupt(f"unsupported bundle format {doc.get('format')!r}")
        manifest = Manifest(
            uuid=doc["uuid"],
            device_types=list(doc["device_types"]),
            service_types=list(doc["service_types"]),
            root_path=doc["root_path"],
            url_map=dict(doc["url_map"]),
            content_types=dict(doc["content_types"]),
            failed_urls=list(doc["failed_urls"]),
            server=doc["server"],
            source_location=doc["source_location"],
            scan_timestamp=doc["scan_timestamp"],
        )
        checksums = dict(doc["checksums"])
        curated = doc["curated_list"]
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise ManifestCorrupt(f"{path}: unreadable manifest: {exc}") from exc
    documents = {}
    for crawl, stored in manifest.url_map.items():
        data = _read(os.path.join(path, stored))
        if data is None:
            raise ManifestCorrupt(f"{stored}: listed in url_map but missing")
        if checksums.get(stored) != _sha256(data):
            raise ManifestCorrupt(f"{stored}: checksum mismatch")
        documents[crawl] = data
    snap = _read(os.path.join(path, "snapshot.txt"))
    if snap is None:
        raise ManifestCorrupt("snapshot.txt: missing")
    if checksums.get("snapshot.txt") != _sha256(snap):
        raise ManifestCorrupt("snapshot.txt: checksum mismatch")
    try:
        snapshot = load_snapshot(snap)
    except UnicodeDecodeError as exc:
        raise ManifestCorrupt(f"snapshot.txt: {exc}") from exc
    return DeviceBundle(manifest=manifest, documents=documents, snapshot=snapshot, curated_list=curated)


def write_snapshot(path, snapshot):
    """Replace a saved bundle's snapshot and its manifest checksum."""
    data = dump_snapshot(snapshot)
    manifest_path = os.path.join(path, "manifest.json")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            doc = json.load(fh)
        doc["checksums"]["snapshot.txt"] = _sha256(data)
        tmp = os.path.join(path, "snapshot.txt.tmp")
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, os.path.join(path, "snapshot.txt"))
        with open(manifest_path + ".tmp", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, ensure_ascii=False)
            fh.write("\n")
        os.replace(manifest_path + ".tmp", manifest_path)
    except (OSError, ValueError, KeyError) as exc:
        raise IoFailure(f"{path}: checkpoint failed: {exc}") from exc


def bundle_identity_types(bundle):
    """(device_types, service_types, {type: owning UDN}) from the root description."""
    root = root_description(bundle)
    owners = {}
    for dev in iter_devices(root):
        owners.setdefault(dev.device_type, dev.udn)
        for ref in dev.services:
            owners.setdefault(ref.service_type, dev.udn)
    device_types, service_types = describe_root(root)
    return device_types, service_types, owners


def content_type(bundle, path) -> Optional[str]:
    return bundle.manifest.content_types.get(path) or guess_content_type(path)

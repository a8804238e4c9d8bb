"""Response-time benchmark for UPnP control endpoints.

Targets are root-description URLs.  Each target's descriptions are fetched
once to find its read actions; the measured requests are SOAP action
invocations on fresh TCP connections, the way a control point issues them.

Two load shapes are supported.  Closed loop (the default) keeps
``concurrency`` requests in flight.  Paced load (``rate`` > 0) schedules
``rate`` requests per second per target, and latency is counted from the
scheduled send time so backlog is not hidden.
"""

import http.client
import json
import math
import os
import socket
import subprocess
import sys
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field
from typing import Dict, List
from urllib.parse import urljoin, urlsplit

from . import soap
from .description import READ, classify_action, iter_devices, parse_device_description, parse_service_description
from .errors import DescriptionError, UpotError
from .scanner import HttpClient

DEFAULT_ACTION_COUNT = 10
METRICS = ("min", "max", "mean", "p95")


class TargetUnreachable(UpotError):
    pass


@dataclass
class BenchSpec:
    targets: List[str]
    actions: List[str] = field(default_factory=list)
    repetitions: int = 10
    concurrency: int = 1
    warmup: int = 0
    rate: float = 0.0
    timeout: float = 10.0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.warmup < 0 or self.rate < 0:
            raise ValueError("warmup and rate must be >= 0")


@dataclass
class TargetStats:
    count: int
    errors: int
    min: float
    max: float
    mean: float
    p95: float


@dataclass
class BenchReport:
    fleet_size: int
    concurrency: int
    per_target: Dict[str, TargetStats]
    unreachable: Dict[str, str] = field(default_factory=dict)
    wall_seconds: float = 0.0
    latency_sum_seconds: float = 0.0
    samples: Dict[str, List[float]] = field(default_factory=dict, repr=False)
    errors: Dict[str, int] = field(default_factory=dict, repr=False)

    @property
    def max_latency(self):
        return max((s.max for s in self.per_target.values()), default=float("nan"))

    @property
    def max_mean_latency(self):
        return max((s.mean for s in self.per_target.values()), default=float("nan"))

    def rows(self):
        for target, stats in self.per_target.items():
            for metric in METRICS:
                yield self.fleet_size, target, metric, getattr(stats, metric)

    def to_table(self, delimiter="\t", header=True):
        lines = [delimiter.join(("fleet_size", "target", "metric", "value_ms"))] if header else []
        lines += [delimiter.join((str(n), t, m, f"{v:.3f}")) for n, t, m, v in self.rows()]
        return "\n".join(lines) + "\n"

    def to_text(self):
        out = [f"fleet size {self.fleet_size}, concurrency {self.concurrency}, "
               f"wall {self.wall_seconds:.2f}s"]
        for target, s in self.per_target.items():
            out.append(f"{target}: n={s.count} errors={s.errors} min={s.min:.2f}ms "
                       f"mean={s.mean:.2f}ms p95={s.p95:.2f}ms max={s.max:.2f}ms")
        for target, reason in self.unreachable.items():
            out.append(f"{target}: unreachable ({reason})")
        return "\n".join(out) + "\n"


@dataclass
class Call:
    label: str
    host: str
    port: int
    path: str
    headers: dict
    body: bytes


def _matches(selector, service_type, service_id, action):
    if "#" not in selector:
        return selector == action
    scope, _, name = selector.partition("#")
    return name == action and scope in (service_type, service_id)


def resolve_calls(location, selectors=(), client=None, limit=DEFAULT_ACTION_COUNT):
    """SOAP calls for a target: selected actions, or its first read actions."""
    client = client or HttpClient()
    try:
        status, _, body = client.get(location)
        if status != 200:
            raise TargetUnreachable(f"{location}: HTTP {status}")
        root = parse_device_description(body)
    except (ConnectionError, DescriptionError) as exc:
        raise TargetUnreachable(f"{location}: {exc}") from exc
    base = root.url_base or location
    calls = []
    for dev in iter_devices(root):
        for ref in dev.services:
            try:
                status, _, body = client.get(urljoin(base, ref.scpd_url))
                scpd = parse_service_description(body) if status == 200 else None
            except (ConnectionError, DescriptionError):
                scpd = None
            if scpd is None:
                continue
            control = urlsplit(urljoin(base, ref.control_url))
            for action in scpd.actions:
                if selectors:
                    if not any(_matches(s, ref.service_type, ref.service_id, action.name) for s in selectors):
                        continue
                    if action.in_arguments:
                        raise ValueError(f"{action.name} takes arguments; only read actions can be benchmarked")
                elif classify_action(action) != READ or not action.out_arguments:
                    continue
                inv = soap.ActionInvocation(ref.service_type, action.name, [])
                headers, body = soap.build_action_request(inv)
                calls.append(Call(f"{ref.service_id}#{action.name}", control.hostname,
                                  control.port or 80, control.path or "/", headers, body))
    if not selectors:
        calls = calls[:limit]
    if not calls:
        raise TargetUnreachable(f"{location}: no benchmarkable actions")
    return calls


def invoke(call, timeout):
    """One request on a fresh connection; returns True on HTTP 200."""
    conn = http.client.HTTPConnection(call.host, call.port, timeout=timeout)
    try:
        conn.request("POST", call.path, body=call.body, headers=call.headers)
        resp = conn.getresponse()
        resp.read()
        return resp.status == 200
    except OSError:
        return False
    finally:
        conn.close()


def percentile(sorted_values, q):
    """Nearest-rank percentile of an ascending list."""
    rank = max(1, math.ceil(q * len(sorted_values)))
    return sorted_values[rank - 1]


def _stats(latencies, errors):
    if not latencies:
        nan = float("nan")
        return TargetStats(0, errors, nan, nan, nan, nan)
    ms = sorted(x * 1000.0 for x in latencies)
    return TargetStats(len(ms), errors, ms[0], ms[-1], sum(ms) / len(ms), percentile(ms, 0.95))


def run_bench(spec, fleet_size=None, client=None):
    resolved = {}
    unreachable = {}
    for target in spec.targets:
        try:
            resolved[target] = resolve_calls(target, spec.actions, client=client)
        except TargetUnreachable as exc:
            unreachable[target] = str(exc)

    jobs = []
    for rep in range(spec.warmup + spec.repetitions):
        for target, calls in resolved.items():
            jobs += [(target, call, rep >= spec.warmup) for call in calls]

    samples = {t: [] for t in resolved}
    errors = {t: 0 for t in resolved}
    lock = threading.Lock()

    def run(job, scheduled=None):
        target, call, measured = job
        start = time.perf_counter() if scheduled is None else scheduled
        ok = invoke(call, spec.timeout)
        elapsed = time.perf_counter() - start
        if measured:
            with lock:
                if ok:
                    samples[target].append(elapsed)
                else:
                    errors[target] += 1

    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=spec.concurrency) as pool:
        if spec.rate > 0:
            for scheduled, job in _paced(jobs, spec.rate, len(resolved), started):
                delay = scheduled - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
                pool.submit(run, job, scheduled)
        else:
            list(pool.map(run, jobs))
    wall = time.perf_counter() - started
    return BenchReport(
        fleet_size=fleet_size if fleet_size is not None else len(spec.targets),
        concurrency=spec.concurrency,
        per_target={t: _stats(samples[t], errors[t]) for t in resolved},
        unreachable=unreachable,
        wall_seconds=wall,
        latency_sum_seconds=sum(sum(v) for v in samples.values()),
        samples=samples,
        errors=errors,
    )


def merge_reports(reports):
    """Pool the raw samples of several runs against the same targets."""
    first = reports[0]
    samples, errors, unreachable = {}, {}, {}
    for report in reports:
        for target, values in report.samples.items():
            samples.setdefault(target, []).extend(values)
            errors[target] = errors.get(target, 0) + report.errors.get(target, 0)
        unreachable.update(report.unreachable)
    return BenchReport(
        fleet_size=first.fleet_size,
        concurrency=first.concurrency,
        per_target={t: _stats(v, errors[t]) for t, v in samples.items()},
        unreachable=unreachable,
        wall_seconds=sum(r.wall_seconds for r in reports),
        latency_sum_seconds=sum(r.latency_sum_seconds for r in reports),
        samples=samples,
        errors=errors,
    )


def _paced(jobs, rate, n_targets, t0):
    """Arrival schedule: each target sends ``rate`` requests/s, phases staggered."""
    index = {}
    order = {}
    out = []
    for job in jobs:
        target = job[0]
        slot = order.setdefault(target, len(order))
        k = index.get(target, 0)
        index[target] = k + 1
        out.append((t0 + (k + slot / max(1, n_targets)) / rate, job))
    out.sort(key=lambda pair: pair[0])
    return out


# fleet sweeps


def _free_ports(n, host="127.0.0.1"):
    socks, ports = [], []
    for _ in range(n):
        s = socket.socket()
        s.bind((host, 0))
        socks.append(s)
        ports.append(s.getsockname()[1])
    for s in socks:
        s.close()
    return ports


class Fleet:
    """A ``serve`` subprocess hosting ``size`` instances of one bundle."""

    def __init__(self, bundle_path, size, host="127.0.0.1", workdir=None, startup_timeout=60.0,
                 latency_ms=None):
        self.bundle_path = os.path.abspath(bundle_path)
        self.size = size
        self.latency_ms = latency_ms
        self.host = host
        self.workdir = workdir or tempfile.mkdtemp(prefix="upot-fleet-")
        self.startup_timeout = startup_timeout
        self.proc = None
        self.locations = []

    def start(self):
        ssdp_port = _free_ports(1)[0]
        config = {
            "instances": [
                {"name": f"hp{i}", "bundle_path": self.bundle_path, "bind_address": self.host,
                 "http_port": 0, "uuid_policy": "randomize"}
                for i in range(self.size)
            ],
            "ssdp": {"address": self.host, "port": ssdp_port},
            "log": {"sink": os.path.join(self.workdir, f"interactions-{self.size}.ndjson")},
        }
        if self.latency_ms:
            for entry in config["instances"]:
                entry["latency_ms"] = list(self.latency_ms)
        config_path = os.path.join(self.workdir, f"fleet-{self.size}.json")
        ready_path = os.path.join(self.workdir, f"fleet-{self.size}.ready")
        with open(config_path, "w") as fh:
            json.dump(config, fh)
        # a ready file left by an earlier fleet in the same workdir is stale
        if os.path.exists(ready_path):
            os.remove(ready_path)
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "upot", "serve", config_path, "--ready-file", ready_path],
            stdout=subprocess.DEVNULL, stderr=subprocess.PIPE,
        )
        deadline = time.monotonic() + self.startup_timeout
        while not os.path.exists(ready_path):
            if self.proc.poll() is not None:
                raise UpotError(f"fleet exited early: {self.proc.stderr.read().decode(errors='replace')}")
            if time.monotonic() > deadline:
                self.stop()
                raise UpotError("fleet did not become ready")
            time.sleep(0.05)
        with open(ready_path) as fh:
            self.locations = [entry["location"] for entry in json.load(fh)["instances"]]
        return self

    def stop(self):
        if self.proc is not None and self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=15)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        if self.proc is not None and self.proc.stderr:
            self.proc.stderr.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def sweep(bundle_path, sizes, subset=None, actions=(), repetitions=10, concurrency=None,
          warmup=1, rate=0.0, latency_ms=None, workdir=None, rounds=1):
    """Bench fleets of each size; returns {size: BenchReport}.

    With ``subset`` only the first ``subset`` instances receive traffic,
    otherwise all of them do.  ``concurrency`` defaults to one worker per
    target.  ``latency_ms`` (low, high) pads every instance's responses.

    With ``rounds`` > 1 every fleet stays up for the whole sweep and the
    sizes are measured in turn, round after round, with ``repetitions``
    per round; samples are pooled per target.  Drift in host speed then
    lands on every fleet size alike instead of on whichever size happened
    to be measured during a slow spell.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    runs = {size: [] for size in sizes}
    with ExitStack() as stack:
        fleets = {}
        for round_no in range(rounds):
            for size in sizes:
                if size not in fleets:
                    fleets[size] = stack.enter_context(
                        Fleet(bundle_path, size, workdir=workdir, latency_ms=latency_ms))
                targets = fleets[size].locations[: subset or size]
                spec = BenchSpec(targets=targets, actions=list(actions), repetitions=repetitions,
                                 concurrency=concurrency or len(targets),
                                 warmup=warmup if round_no == 0 else 0, rate=rate)
                runs[size].append(run_bench(spec, fleet_size=size))
                if rounds == 1:
                    stack.pop_all().close()
                    fleets.clear()
    return {size: merge_reports(reports) for size, reports in runs.items()}


def sweep_table(reports, delimiter="\t"):
    chunks = [report.to_table(delimiter, header=i == 0) for i, report in enumerate(reports.values())]
    return "".join(chunks)

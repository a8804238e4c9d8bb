"""Command-line entry point.

Exit status: 0 on success, 1 for invalid input (config, bundle, arguments),
2 for runtime failures.
"""

import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
from datetime import datetime

from . import bench, bundle as bundlelib, deploy, samples, scanner, ssdp
from .description import classify_action
from .errors import (
    BundleError,
    ConfigError,
    ControlUnreachable,
    DescriptionError,
    InstanceFailed,
    RootFetchFailed,
    SinkMissing,
    UpotError,
)
from .interactions import LAYERS, InteractionRecord

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

logger = logging.getLogger("upot")


def _hostport(text):
    host, sep, port = text.rpartition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"{text!r} is not host:port")
    try:
        return host, int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not host:port") from None


def _timestamp(text):
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text).timestamp()
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is neither epoch seconds nor ISO 8601") from None


def _sizes(text):
    try:
        sizes = [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated list of integers") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("fleet sizes must be positive")
    return sizes


# scan


def cmd_scan(args):
    if args.location:
        locations = [args.location]
    else:
        found = scanner.discover(st=args.st, timeout=args.timeout, target=args.ssdp_target, mx=args.mx)
        chosen = scanner.select(found, args.uuid)
        if not chosen:
            what = f"device {args.uuid}" if args.uuid else "UPnP devices"
            print(f"no {what} answered within {args.timeout:g}s; nothing scanned")
            return EXIT_OK
        locations = list(dict.fromkeys(d.location for d in chosen))
        if len(locations) > 1:
            if args.uuid is None and not args.all:
                print("several devices answered; pick one with --uuid or pass --all:")
                for d in chosen:
                    print(f"  {d.uuid}  {d.location}")
                return EXIT_INVALID
    status = EXIT_OK
    for i, location in enumerate(locations):
        out = args.output if len(locations) == 1 else os.path.join(args.output, f"device-{i}")
        try:
            result, report = scanner.scan(location, budget=args.budget, strict=False)
        except RootFetchFailed as exc:
            print(f"{location}: root description unavailable: {exc}", file=sys.stderr)
            status = EXIT_RUNTIME
            continue
        invoked_ok = sum(1 for _, outcome in report.invoked_actions if outcome == "ok")
        if report.invoked_actions and not invoked_ok:
            print(f"warning: {ControlUnreachable.__name__}: no read action answered; "
                  "state falls back to defaults", file=sys.stderr)
        bundlelib.save_bundle(result, out)
        print(f"scanned {location} -> {out}")
        sys.stdout.write(report.to_text())
    return status


# serve


def cmd_serve(args):
    config = deploy.load_config(args.config)
    fleet = deploy.Deployment(config)
    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)
    fleet.start()
    try:
        summary = {
            "ssdp": {"address": config.ssdp.address, "port": fleet.responder.port},
            "instances": [
                {"name": inst.name, "uuid": inst.uuid, "location": inst.location}
                for inst in fleet.instances
            ],
        }
        for entry in summary["instances"]:
            print(f"{entry['name']}  {entry['uuid']}  {entry['location']}", flush=True)
        if args.ready_file:
            tmp = args.ready_file + ".tmp"
            with open(tmp, "w") as fh:
                json.dump(summary, fh)
            os.replace(tmp, args.ready_file)
        while not stop.wait(0.5):
            pass
    finally:
        fleet.stop()
    print(f"stopped; {fleet.log.accepted} records logged, {fleet.log.dropped} dropped", flush=True)
    return EXIT_OK


# bench


def _config_targets(path, subset):
    config = deploy.load_config(path)
    targets = []
    for spec in config.instances:
        if spec.http_port == 0:
            raise ConfigError(f"{spec.name}.http_port: benchmarking needs fixed ports")
        manifest = bundlelib.load_bundle(spec.bundle_path).manifest
        host = "127.0.0.1" if spec.bind_address in ("0.0.0.0", "") else spec.bind_address
        targets.append(f"http://{host}:{spec.http_port}{manifest.root_path}")
    return targets[:subset] if subset else targets, len(targets)


def cmd_bench(args):
    if args.bundle:
        reports = bench.sweep(args.bundle, args.fleet_sizes, subset=args.subset, actions=args.action,
                              repetitions=args.repetitions, concurrency=args.concurrency,
                              warmup=args.warmup, rate=args.rate, rounds=args.rounds)
        for report in reports.values():
            sys.stdout.write(report.to_text())
        table = bench.sweep_table(reports, args.delimiter)
    else:
        if args.config:
            targets, fleet_size = _config_targets(args.config, args.subset)
        else:
            targets, fleet_size = args.target, len(args.target)
        if not targets:
            print("no targets: pass --target, --config or --bundle", file=sys.stderr)
            return EXIT_INVALID
        spec = bench.BenchSpec(targets=targets, actions=args.action, repetitions=args.repetitions,
                               concurrency=args.concurrency or 1, warmup=args.warmup, rate=args.rate)
        report = bench.run_bench(spec, fleet_size=fleet_size)
        sys.stdout.write(report.to_text())
        table = report.to_table(args.delimiter)
        reports = {fleet_size: report}
    if args.table:
        with open(args.table, "w") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)
    if all(not r.per_target for r in reports.values()):
        return EXIT_RUNTIME
    return EXIT_OK


# logs


def _matches(rec, args):
    if args.instance:
        wanted = args.instance if args.instance.startswith("uuid:") else f"uuid:{args.instance}"
        if wanted not in rec.instances():
            return False
    if args.layer and rec.layer != args.layer:
        return False
    if args.peer and rec.peer != args.peer and rec.peer.rpartition(":")[0] != args.peer:
        return False
    if args.since is not None and rec.timestamp < args.since:
        return False
    if args.until is not None and rec.timestamp > args.until:
        return False
    return True


def _emit(rec, as_json):
    if as_json:
        print(rec.to_json(), flush=True)
    else:
        ts = datetime.fromtimestamp(rec.timestamp).isoformat(timespec="milliseconds")
        print(f"{ts} {rec.layer:<12} {rec.outcome:<8} {rec.status:<4} {rec.peer:<21} "
              f"{rec.instance} {rec.request}", flush=True)


def tail(path, follow=False, poll=0.1, stop=None):
    """Yield records from an NDJSON sink; with ``follow``, keep waiting for more."""
    with open(path, encoding="utf-8") as fh:
        pending = ""
        while True:
            chunk = fh.readline()
            if chunk:
                pending += chunk
                if not pending.endswith("\n"):
                    continue
                line, pending = pending.strip(), ""
                if line:
                    try:
                        yield InteractionRecord.from_json(line)
                    except (ValueError, KeyError) as exc:
                        logger.warning("skipping malformed record: %s", exc)
                continue
            if not follow or (stop is not None and stop.is_set()):
                return
            time.sleep(poll)


def cmd_logs(args):
    path = args.sink
    if args.config:
        path = deploy.load_config(args.config).log.sink
        if path is None:
            raise ConfigError("log.sink: not configured")
    if not path or not os.path.exists(path):
        raise SinkMissing(f"{path}: no such log sink")
    try:
        for rec in tail(path, follow=args.follow):
            if _matches(rec, args):
                _emit(rec, args.json)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


# bundle-inspect


def cmd_bundle_inspect(args):
    b = bundlelib.load_bundle(args.path)
    root, entries = bundlelib.validate_bundle(b)
    m = b.manifest
    if args.json:
        print(json.dumps({
            "uuid": m.uuid, "server": m.server, "root_path": m.root_path,
            "source_location": m.source_location, "scan_timestamp": m.scan_timestamp,
            "documents": sorted(b.documents), "failed_urls": m.failed_urls,
            "curated_list": b.curated_list, "snapshot": b.snapshot,
        }, indent=2))
        return EXIT_OK
    print(f"uuid:      {m.uuid}")
    print(f"device:    {root.friendly_name} ({root.manufacturer} {root.model_name})")
    print(f"server:    {m.server}")
    print(f"root:      {m.root_path}")
    print(f"source:    {m.source_location or '-'} at {m.scan_timestamp}")
    print(f"documents: {len(b.documents)}")
    for path in sorted(b.documents):
        print(f"  {path}  {m.content_types.get(path, '')}")
    if m.failed_urls:
        print(f"failed:    {', '.join(m.failed_urls)}")
    print(f"services:  {len(entries)}")
    for entry in entries:
        kinds = ", ".join(f"{a.name}[{classify_action(a)}]" for a in entry.description.actions)
        print(f"  {entry.key}  {entry.ref.service_type}")
        print(f"    actions: {kinds or '-'}")
    print(f"snapshot:  {len(b.snapshot)} variables")
    if args.snapshot:
        for key in sorted(b.snapshot):
            print(f"  {key} = {b.snapshot[key]!r}")
    return EXIT_OK


def cmd_sample(args):
    b = samples.sample_bundle(args.name)
    bundlelib.save_bundle(b, args.output)
    print(f"wrote {args.name} bundle to {args.output}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="upot", description="Clone UPnP devices and serve the clones as low-interaction honeypots.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="discover and clone a device into a bundle")
    p.add_argument("-o", "--output", required=True, help="bundle directory to write")
    p.add_argument("--location", help="root description URL; skips discovery")
    p.add_argument("--uuid", help="clone only the device with this UUID")
    p.add_argument("--all", action="store_true", help="clone every responder into OUTPUT/device-N")
    p.add_argument("--st", default="upnp:rootdevice", help="search target (default: %(default)s)")
    p.add_argument("--mx", type=int, default=2, help="M-SEARCH MX seconds (default: %(default)s)")
    p.add_argument("--timeout", type=float, default=3.0, help="discovery wait seconds (default: %(default)s)")
    p.add_argument("--ssdp-target", type=_hostport, default=(ssdp.SSDP_ADDR, ssdp.SSDP_PORT),
                   metavar="HOST:PORT", help="where to send M-SEARCH (default: the SSDP group)")
    p.add_argument("--budget", type=float, help="total seconds allowed for fetching documents")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("serve", help="run the honeypot fleet described by a config file")
    p.add_argument("config", help="deployment config (JSON)")
    p.add_argument("--ready-file", help="write instance locations here once serving")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="measure action response times")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--target", action="append", default=[], metavar="URL",
                     help="root description URL (repeatable)")
    src.add_argument("--config", help="bench the instances of a deployment config")
    src.add_argument("--bundle", help="launch fleets of this bundle and sweep fleet sizes")
    p.add_argument("--fleet-sizes", type=_sizes, default=[1, 5, 10, 15, 20],
                   help="comma-separated fleet sizes for --bundle (default: 1,5,10,15,20)")
    p.add_argument("--subset", type=int, help="send traffic to the first K instances only")
    p.add_argument("--action", action="append", default=[],
                   help="action to invoke, NAME or SERVICE#NAME (repeatable; default: up to 10 read actions)")
    p.add_argument("--repetitions", type=int, default=10, help="rounds over the action list (default: %(default)s)")
    p.add_argument("--concurrency", type=int, help="requests in flight (default: 1, or one per target with --bundle)")
    p.add_argument("--warmup", type=int, default=1, help="unmeasured rounds first (default: %(default)s)")
    p.add_argument("--rate", type=float, default=0.0,
                   help="paced load: requests per second per target (default: closed loop)")
    p.add_argument("--rounds", type=int, default=1,
                   help="with --bundle: keep all fleets up and measure them in this many interleaved rounds")
    p.add_argument("--table", help="write the delimited table here instead of stdout")
    p.add_argument("--delimiter", default="\t", help="table delimiter (default: tab)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("logs", help="print or follow interaction records")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--sink", help="NDJSON log file")
    src.add_argument("--config", help="read the sink path from a deployment config")
    p.add_argument("--instance", help="only records for this UUID")
    p.add_argument("--layer", choices=LAYERS, help="only records of this layer")
    p.add_argument("--peer", help="only records from this IP or IP:port")
    p.add_argument("--since", type=_timestamp, help="epoch seconds or ISO 8601")
    p.add_argument("--until", type=_timestamp, help="epoch seconds or ISO 8601")
    p.add_argument("-f", "--follow", action="store_true", help="keep printing new records")
    p.add_argument("--json", action="store_true", help="print raw NDJSON records")
    p.set_defaults(func=cmd_logs)

    p = sub.add_parser("bundle-inspect", help="validate a bundle and summarise it")
    p.add_argument("path", help="bundle directory")
    p.add_argument("--snapshot", action="store_true", help="list every state variable value")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_bundle_inspect)

    p = sub.add_parser("sample", help="write one of the built-in synthetic bundles")
    p.add_argument("name", choices=sorted(samples.SAMPLES))
    p.add_argument("output", help="bundle directory to write")
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except InstanceFailed as exc:
        invalid = isinstance(exc.cause, (ConfigError, BundleError, DescriptionError))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if invalid else EXIT_RUNTIME
    except (ConfigError, BundleError, DescriptionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (UpotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

"""Declarative fleet deployment.

A deployment config is a JSON document:

    {
      "instances": [
        {"name": "plug-1",                 # optional, defaults to instances[i]
         "bundle_path": "bundles/wemo",    # relative paths resolve against the config file
         "bind_address": "127.0.0.1",
         "http_port": 49153,               # 0 picks a free port
         "uuid_policy": "preserve",        # or "randomize"
         "state_path": "state/plug-1",     # optional: live state is checkpointed here
         "latency_ms": [2, 8]}             # optional: uniform response padding
      ],
      "ssdp": {"address": "239.255.255.250", "port": 1900, "advertise": false,
               "interface": "0.0.0.0"},
      "log": {"sink": "interactions.ndjson", "raw_cap": 4096},
      "checkpoint_interval": 300           # optional, seconds
    }

Unknown keys anywhere are rejected, and every error names the offending
field.
"""

import json
import logging
import os
import random
import threading
import uuid as uuidlib
from dataclasses import dataclass, field
from typing import List, Optional

from . import bundle as bundlelib
from . import ssdp
from .emulator import Instance, rebrand
from .errors import ConfigError, InstanceFailed, UpotError
from .interactions import DEFAULT_RAW_CAP, InteractionLog

logger = logging.getLogger(__name__)

UUID_POLICIES = ("preserve", "randomize")


@dataclass
class InstanceConfig:
    name: str
    bundle_path: str
    bind_address: str = "127.0.0.1"
    http_port: int = 0
    uuid_policy: str = "preserve"
    state_path: Optional[str] = None
    latency_ms: Optional[tuple] = None


@dataclass
class SsdpConfig:
    address: str = ssdp.SSDP_ADDR
    port: int = ssdp.SSDP_PORT
    advertise: bool = False
    interface: str = "0.0.0.0"


@dataclass
class LogConfig:
    sink: Optional[str] = None
    raw_cap: int = DEFAULT_RAW_CAP


@dataclass
class DeploymentConfig:
    instances: List[InstanceConfig]
    ssdp: SsdpConfig = field(default_factory=SsdpConfig)
    log: LogConfig = field(default_factory=LogConfig)
    checkpoint_interval: Optional[float] = None


def _check_keys(where, obj, allowed):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown key")


def _typed(where, value, kinds, what):
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError(f"{where}: expected {what}")
    if not isinstance(value, kinds):
        raise ConfigError(f"{where}: expected {what}")
    return value


def _port(where, value):
    _typed(where, value, (int,), "an integer port")
    if not 0 <= value <= 65535:
        raise ConfigError(f"{where}: port {value} out of range")
    return value


def _path(base_dir, value):
    return value if os.path.isabs(value) else os.path.normpath(os.path.join(base_dir, value))


def parse_config(doc, base_dir="."):
    """Validate a decoded config document into a DeploymentConfig."""
    _check_keys("config", doc, ("instances", "ssdp", "log", "checkpoint_interval"))
    raw_instances = doc.get("instances")
    if not isinstance(raw_instances, list) or not raw_instances:
        raise ConfigError("instances: expected a non-empty list")
    instances = []
    for i, item in enumerate(raw_instances):
        where = f"instances[{i}]"
        _check_keys(where, item, ("name", "bundle_path", "bind_address", "http_port",
                                  "uuid_policy", "state_path", "latency_ms"))
        if "bundle_path" not in item:
            raise ConfigError(f"{where}.bundle_path: required")
        inst = InstanceConfig(
            name=_typed(f"{where}.name", item.get("name", where), (str,), "a string"),
            bundle_path=_path(base_dir, _typed(f"{where}.bundle_path", item["bundle_path"], (str,), "a string")),
            bind_address=_typed(f"{where}.bind_address", item.get("bind_address", "127.0.0.1"), (str,), "a string"),
            http_port=_port(f"{where}.http_port", item.get("http_port", 0)),
            uuid_policy=item.get("uuid_policy", "preserve"),
        )
        if inst.uuid_policy not in UUID_POLICIES:
            raise ConfigError(f"{where}.uuid_policy: {inst.uuid_policy!r} is not one of {UUID_POLICIES}")
        if item.get("state_path") is not None:
            inst.state_path = _path(base_dir, _typed(f"{where}.state_path", item["state_path"], (str,), "a string"))
        if item.get("latency_ms") is not None:
            lat = item["latency_ms"]
            if (not isinstance(lat, list) or len(lat) != 2
                    or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in lat)
                    or not 0 <= lat[0] <= lat[1]):
                raise ConfigError(f"{where}.latency_ms: expected [low, high] with 0 <= low <= high")
            inst.latency_ms = (float(lat[0]), float(lat[1]))
        instances.append(inst)

    names = {}
    endpoints = {}
    for inst in instances:
        if inst.name in names:
            raise ConfigError(f"instances.name: {inst.name!r} used twice")
        names[inst.name] = inst
        if inst.http_port == 0:
            continue
        key = (inst.bind_address, inst.http_port)
        if key in endpoints:
            raise ConfigError(f"instances.http_port: {endpoints[key].name} and {inst.name} "
                              f"both bind {key[0]}:{key[1]}")
        endpoints[key] = inst

    raw_ssdp = doc.get("ssdp", {})
    _check_keys("ssdp", raw_ssdp, ("address", "port", "advertise", "interface"))
    ssdp_cfg = SsdpConfig(
        address=_typed("ssdp.address", raw_ssdp.get("address", ssdp.SSDP_ADDR), (str,), "a string"),
        port=_port("ssdp.port", raw_ssdp.get("port", ssdp.SSDP_PORT)),
        advertise=_typed("ssdp.advertise", raw_ssdp.get("advertise", False), (bool,), "a boolean"),
        interface=_typed("ssdp.interface", raw_ssdp.get("interface", "0.0.0.0"), (str,), "a string"),
    )

    raw_log = doc.get("log", {})
    _check_keys("log", raw_log, ("sink", "raw_cap"))
    sink = raw_log.get("sink")
    if sink is not None:
        sink = _path(base_dir, _typed("log.sink", sink, (str,), "a string"))
    raw_cap = _typed("log.raw_cap", raw_log.get("raw_cap", DEFAULT_RAW_CAP), (int,), "an integer")
    if raw_cap < 0:
        raise ConfigError("log.raw_cap: must be >= 0")

    interval = doc.get("checkpoint_interval")
    if interval is not None:
        _typed("checkpoint_interval", interval, (int, float), "a number")
        if interval <= 0:
            raise ConfigError("checkpoint_interval: must be > 0")
    return DeploymentConfig(instances=instances, ssdp=ssdp_cfg,
                            log=LogConfig(sink=sink, raw_cap=raw_cap), checkpoint_interval=interval)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def _latency(bounds, rng):
    low, high = bounds
    return lambda: rng.uniform(low, high) / 1000.0


class Deployment:
    """Supervisor for one SSDP responder, every instance and the log sink.

    Startup is fail-fast: if any instance cannot start, everything already
    running is torn down and the error propagates.
    """

    def __init__(self, config, notify_send=None, rng=None, readvertise_interval=ssdp.MAX_AGE / 2):
        self.config = config
        self.notify_send = notify_send
        self.rng = rng or random.Random()
        self.readvertise_interval = readvertise_interval
        self.log = None
        self.responder = None
        self.instances = []
        self._stop = threading.Event()
        self._advertiser = None

    def _bundle_for(self, spec):
        if spec.state_path and os.path.exists(os.path.join(spec.state_path, "manifest.json")):
            return bundlelib.load_bundle(spec.state_path), True
        bundle = bundlelib.load_bundle(spec.bundle_path)
        if spec.uuid_policy == "randomize":
            bundle = rebrand(bundle, str(uuidlib.UUID(int=self.rng.getrandbits(128), version=4)))
        return bundle, False

    def _prepare(self):
        bundles = []
        owners = {}
        for spec in self.config.instances:
            try:
                bundle, resumed = self._bundle_for(spec)
            except UpotError as exc:
                raise InstanceFailed(spec.name, exc) from exc
            uuid = bundle.manifest.uuid
            if uuid in owners:
                raise ConfigError(f"instances.uuid_policy: {owners[uuid]} and {spec.name} both present "
                                  f"{uuid}; use uuid_policy=randomize")
            owners[uuid] = spec.name
            if spec.state_path and not resumed:
                bundlelib.save_bundle(bundle, spec.state_path)
            bundles.append(bundle)
        return bundles

    def start(self):
        bundles = self._prepare()
        cfg = self.config
        self.log = InteractionLog(cfg.log.sink, raw_cap=cfg.log.raw_cap, keep=False)
        try:
            self.responder = ssdp.SsdpResponder(address=cfg.ssdp.address, port=cfg.ssdp.port,
                                                log=self.log, interface=cfg.ssdp.interface)
            for spec, bundle in zip(cfg.instances, bundles):
                latency = _latency(spec.latency_ms, self.rng) if spec.latency_ms else None
                try:
                    inst = Instance(bundle, host=spec.bind_address, port=spec.http_port, log=self.log,
                                    responder=self.responder, latency=latency,
                                    notify_send=self.notify_send, checkpoint_path=spec.state_path,
                                    checkpoint_interval=cfg.checkpoint_interval)
                except UpotError as exc:
                    raise InstanceFailed(spec.name, exc) from exc
                inst.name = spec.name
                self.instances.append(inst.start())
            self.responder.start()
            if cfg.ssdp.advertise:
                self._advertise(ssdp.ALIVE)
                self._advertiser = threading.Thread(target=self._readvertise, name="ssdp-advertise",
                                                    daemon=True)
                self._advertiser.start()
        except BaseException:
            self.stop()
            raise
        return self

    def _advertise(self, kind):
        for inst in self.instances:
            try:
                self.responder.send_advertisements(inst.identity, kind)
            except UpotError as exc:
                logger.warning("%s advertisement for %s failed: %s", kind, inst.uuid, exc)

    def _readvertise(self):
        while not self._stop.wait(self.readvertise_interval):
            self._advertise(ssdp.ALIVE)

    def stop(self):
        if self._stop.is_set():
            return
        self._stop.set()
        if self.config.ssdp.advertise and self.responder is not None:
            self._advertise(ssdp.BYEBYE)
        for inst in self.instances:
            try:
                inst.stop()
            except UpotError as exc:
                logger.error("stopping %s: %s", inst.uuid, exc)
        if self.responder is not None:
            self.responder.stop()
        if self.log is not None:
            self.log.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def wait(self):
        self._stop.wait()

"""Interaction records and the bounded, ordered log sink.

Records are written as newline-delimited JSON, one object per line, with
keys in this order::

    ts, instance, layer, peer, request, status, latency_us, outcome, raw_len, raw

``raw`` is the captured request prefix, base64-encoded, cut at the sink's
``raw_cap``; ``raw_len`` is the full length of the original request.
"""

import base64
import json
import logging
import os
import queue
import threading
import time
from dataclasses import dataclass

logger = logging.getLogger(__name__)

LAYERS = ("ssdp", "description", "control", "eventing", "presentation")
OUTCOMES = ("served", "rejected", "fault")
DEFAULT_RAW_CAP = 4096


@dataclass
class InteractionRecord:
    timestamp: float
    instance: str
    layer: str
    peer: str
    request: str
    status: str
    latency_us: int
    outcome: str
    raw: bytes = b""
    raw_len: int = 0

    def to_json(self):
        return json.dumps({
            "ts": self.timestamp,
            "instance": self.instance,
            "layer": self.layer,
            "peer": self.peer,
            "request": self.request,
            "status": self.status,
            "latency_us": self.latency_us,
            "outcome": self.outcome,
            "raw_len": self.raw_len,
            "raw": base64.b64encode(self.raw).decode("ascii"),
        })

    @classmethod
    def from_json(cls, line):
        obj = json.loads(line)
        return cls(
            timestamp=obj["ts"],
            instance=obj["instance"],
            layer=obj["layer"],
            peer=obj["peer"],
            request=obj["request"],
            status=obj["status"],
            latency_us=obj["latency_us"],
            outcome=obj["outcome"],
            raw=base64.b64decode(obj["raw"]),
            raw_len=obj["raw_len"],
        )

    def instances(self):
        """UUIDs this record concerns; SSDP records may list several."""
        return [u for u in self.instance.split(",") if u]


def format_peer(addr):
    if not addr:
        return ""
    return f"{addr[0]}:{addr[1]}"


class InteractionLog:
    """Ordered, bounded queue feeding a writer thread.

    ``submit`` never blocks: when the queue is full the record is dropped
    and counted.  Records reach the file and the in-memory list in
    submission order.
    """

    def __init__(self, path=None, maxsize=10000, raw_cap=DEFAULT_RAW_CAP, keep=True):
        self.path = path
        self.raw_cap = raw_cap
        self.keep = keep
        self.records = []
        self.dropped = 0
        self.accepted = 0
        self._queue = queue.Queue(maxsize=maxsize)
        self._lock = threading.Lock()
        self._file = None
        if path is not None:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            self._file = open(path, "a", encoding="utf-8")
        self._closed = False
        self._thread = threading.Thread(target=self._drain, name="interaction-log", daemon=True)
        self._thread.start()

    def record(self, instance, layer, peer, request, status, outcome, raw=b"", latency_us=0,
               timestamp=None):
        rec = InteractionRecord(
            timestamp=time.time() if timestamp is None else timestamp,
            instance=instance,
            layer=layer,
            peer=peer if isinstance(peer, str) else format_peer(peer),
            request=request,
            status=str(status),
            latency_us=max(0, int(latency_us)),
            outcome=outcome,
            raw=bytes(raw[: self.raw_cap]),
            raw_len=len(raw),
        )
        self.submit(rec)
        return rec

    def submit(self, record):
        with self._lock:
            if self._closed:
                self.dropped += 1
                return False
            try:
                self._queue.put_nowait(record)
            except queue.Full:
                self.dropped += 1
                return False
            self.accepted += 1
            return True

    def _drain(self):
        while True:
            item = self._queue.get()
            batch = [item]
            while True:
                try:
                    batch.append(self._queue.get_nowait())
                except queue.Empty:
                    break
            stop = False
            for rec in batch:
                if rec is None:
                    stop = True
                    continue
                if self.keep:
                    self.records.append(rec)
                if self._file is not None:
                    self._file.write(rec.to_json() + "\n")
            if self._file is not None:
                try:
                    self._file.flush()
                except ValueError:
                    pass
            for _ in batch:
                self._queue.task_done()
            if stop:
                return

    def flush(self):
        """Block until every accepted record has been written."""
        self._queue.join()

    def close(self):
        with self._lock:
            if self._closed:
                return
            self._closed = True
        self._queue.put(None)
        self._thread.join()
        if self._file is not None:
            self._file.flush()
            os.fsync(self._file.fileno())
            self._file.close()


def read_records(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield InteractionRecord.from_json(line)

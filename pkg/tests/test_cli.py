import json
import os
import signal
import subprocess
import sys
import threading
import time

import pytest

from conftest import http_get
from upot import bundle as bundlelib
from upot.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main, tail
from upot.interactions import InteractionLog


def test_sample_and_inspect(tmp_path, capsys):
    assert main(["sample", "wemo", str(tmp_path / "w")]) == EXIT_OK
    assert main(["bundle-inspect", str(tmp_path / "w"), "--snapshot"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "uuid:      uuid:Socket-1_0-221517K0101769" in out
    assert "services:  12" in out and "BinaryState = '0'" in out
    assert main(["bundle-inspect", str(tmp_path / "w"), "--json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["curated_list"]) == 12


def test_inspect_corrupt_bundle_is_invalid(tmp_path, capsys):
    main(["sample", "lab", str(tmp_path / "b")])
    (tmp_path / "b" / "snapshot.txt").write_text("tampered=1\n")
    assert main(["bundle-inspect", str(tmp_path / "b")]) == EXIT_INVALID
    assert "checksum" in capsys.readouterr().err


def test_scan_loopback_emulator(running, tmp_path, capsys):
    inst = running("lab")
    assert main(["scan", "--location", inst.location, "-o", str(tmp_path / "clone")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "failed: 0" in out
    clone = bundlelib.load_bundle(tmp_path / "clone")
    assert clone.documents == inst.bundle.documents


def test_scan_nothing_found(tmp_path, capsys):
    rc = main(["scan", "-o", str(tmp_path / "x"), "--timeout", "0.3", "--ssdp-target", "127.0.0.1:9"])
    assert rc == EXIT_OK
    assert "nothing scanned" in capsys.readouterr().out
    assert not (tmp_path / "x").exists()


def test_scan_root_failure_is_runtime_error(tmp_path):
    rc = main(["scan", "--location", "http://127.0.0.1:9/setup.xml", "-o", str(tmp_path / "x")])
    assert rc == EXIT_RUNTIME


def test_bench_against_target(running, tmp_path, capsys):
    inst = running("lab")
    table = tmp_path / "t.csv"
    rc = main(["bench", "--target", inst.location, "--repetitions", "2", "--delimiter", ",",
               "--table", str(table)])
    assert rc == EXIT_OK
    rows = table.read_text().splitlines()
    assert rows[0] == "fleet_size,target,metric,value_ms" and len(rows) == 5


def test_bench_all_unreachable(capsys):
    assert main(["bench", "--target", "http://127.0.0.1:9/x.xml", "--repetitions", "1"]) == EXIT_RUNTIME


def test_serve_bad_config_is_invalid(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"instances": [{"bundle_path": "b", "port": 1}]}))
    assert main(["serve", str(cfg)]) == EXIT_INVALID
    assert "instances[0].port" in capsys.readouterr().err


def test_serve_missing_bundle_is_invalid(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"instances": [{"name": "a", "bundle_path": "nope"}],
                               "ssdp": {"address": "127.0.0.1", "port": 0}}))
    assert main(["serve", str(cfg)]) == EXIT_INVALID
    assert "a: " in capsys.readouterr().err


def write_records(path):
    log = InteractionLog(str(path), keep=False)
    log.record("uuid:a", "control", ("10.0.0.1", 1), "POST /c", 200, "served", timestamp=100.0)
    log.record("uuid:a", "presentation", ("10.0.0.2", 2), "GET /x", 404, "rejected", timestamp=200.0)
    log.record("uuid:b", "control", ("10.0.0.1", 3), "POST /c", 500, "fault", timestamp=300.0)
    log.close()


@pytest.mark.parametrize("filters,expected", [
    ([], 3),
    (["--layer", "control"], 2),
    (["--instance", "a"], 2),
    (["--instance", "uuid:unknown"], 0),
    (["--peer", "10.0.0.1"], 2),
    (["--peer", "10.0.0.2:2"], 1),
    (["--since", "150", "--until", "250"], 1),
])
def test_logs_filters(tmp_path, capsys, filters, expected):
    sink = tmp_path / "log.ndjson"
    write_records(sink)
    assert main(["logs", "--sink", str(sink), "--json", *filters]) == EXIT_OK
    assert len(capsys.readouterr().out.splitlines()) == expected


def test_logs_missing_sink(tmp_path):
    assert main(["logs", "--sink", str(tmp_path / "absent")]) == EXIT_RUNTIME


def test_follow_sees_record_within_a_second(tmp_path, running):
    sink = tmp_path / "live.ndjson"
    log = InteractionLog(str(sink), keep=False)
    inst = running("lab", log=log)
    stop = threading.Event()
    seen = []

    def follow():
        for rec in tail(str(sink), follow=True, poll=0.05, stop=stop):
            seen.append((time.monotonic(), rec))

    reader = threading.Thread(target=follow)
    reader.start()
    time.sleep(0.2)
    sent = time.monotonic()
    http_get(inst.location)
    deadline = sent + 1.0
    while not seen and time.monotonic() < deadline:
        time.sleep(0.02)
    stop.set()
    reader.join(2)
    log.close()
    assert seen and seen[0][0] - sent < 1.0
    assert seen[0][1].layer == "description"


def test_serve_sigterm_flushes_and_checkpoints(tmp_path):
    main(["sample", "lab", str(tmp_path / "lab")])
    cfg = tmp_path / "fleet.json"
    cfg.write_text(json.dumps({
        "instances": [{"name": "one", "bundle_path": "lab", "state_path": "state/one", "uuid_policy": "randomize"},
                      {"name": "two", "bundle_path": "lab", "uuid_policy": "randomize"}],
        "ssdp": {"address": "127.0.0.1", "port": 0},
        "log": {"sink": "interactions.ndjson"},
    }))
    ready = tmp_path / "ready.json"
    proc = subprocess.Popen([sys.executable, "-m", "upot", "serve", str(cfg), "--ready-file", str(ready)],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        deadline = time.monotonic() + 30
        while not ready.exists():
            assert proc.poll() is None, proc.stderr.read()
            assert time.monotonic() < deadline
            time.sleep(0.05)
        summary = json.loads(ready.read_text())
        assert [i["name"] for i in summary["instances"]] == ["one", "two"]
        for entry in summary["instances"]:
            assert http_get(entry["location"])[0] == 200
        proc.send_signal(signal.SIGTERM)
        out, err = proc.communicate(timeout=30)
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.communicate()
    assert proc.returncode == 0, err
    assert "stopped; 2 records logged" in out
    assert len((tmp_path / "interactions.ndjson").read_text().splitlines()) == 2
    assert os.path.exists(tmp_path / "state" / "one" / "snapshot.txt")

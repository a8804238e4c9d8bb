import socket

import pytest

from conftest import http_get, soap_call
from upot import bundle as bundlelib
from upot import samples, ssdp
from upot.deploy import Deployment, load_config, parse_config
from upot.errors import ConfigError, InstanceFailed, PortInUse


@pytest.fixture
def lab_path(tmp_path):
    path = tmp_path / "lab"
    bundlelib.save_bundle(samples.sample_bundle("lab"), path)
    return str(path)


def free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def config(lab_path, n=1, policy="randomize", **extra):
    doc = {
        "instances": [{"name": f"hp{i}", "bundle_path": lab_path, "uuid_policy": policy} for i in range(n)],
        "ssdp": {"address": "127.0.0.1", "port": free_port()},
    }
    doc.update(extra)
    return doc


def test_defaults_and_relative_paths(tmp_path):
    cfg = parse_config({"instances": [{"bundle_path": "b"}]}, base_dir=str(tmp_path))
    inst = cfg.instances[0]
    assert inst.bundle_path == str(tmp_path / "b")
    assert (inst.name, inst.bind_address, inst.http_port, inst.uuid_policy) == ("instances[0]", "127.0.0.1", 0,
                                                                              "preserve")
    assert cfg.ssdp.address == ssdp.SSDP_ADDR and cfg.ssdp.port == 1900 and not cfg.ssdp.advertise


@pytest.mark.parametrize("doc,field", [
    ({}, "instances"),
    ({"instances": []}, "instances"),
    ({"instances": [{"bundle_path": "b", "colour": "red"}]}, "instances[0].colour"),
    ({"instances": [{}]}, "instances[0].bundle_path"),
    ({"instances": [{"bundle_path": "b", "http_port": 70000}]}, "instances[0].http_port"),
    ({"instances": [{"bundle_path": "b", "http_port": "80"}]}, "instances[0].http_port"),
    ({"instances": [{"bundle_path": "b", "uuid_policy": "clone"}]}, "instances[0].uuid_policy"),
    ({"instances": [{"bundle_path": "b", "latency_ms": [5, 1]}]}, "instances[0].latency_ms"),
    ({"instances": [{"bundle_path": "b"}], "ssdp": {"advertise": "yes"}}, "ssdp.advertise"),
    ({"instances": [{"bundle_path": "b"}], "ssdp": {"ttl": 2}}, "ssdp.ttl"),
    ({"instances": [{"bundle_path": "b"}], "log": {"raw_cap": -1}}, "log.raw_cap"),
    ({"instances": [{"bundle_path": "b"}], "extra": 1}, "config.extra"),
    ({"instances": [{"bundle_path": "b"}], "checkpoint_interval": 0}, "checkpoint_interval"),
])
def test_validation_names_the_field(doc, field):
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert str(err.value).startswith(field)


def test_duplicate_port_names_both_instances():
    doc = {"instances": [{"name": "left", "bundle_path": "b", "http_port": 8000},
                         {"name": "right", "bundle_path": "b", "http_port": 8000}]}
    with pytest.raises(ConfigError, match="left and right"):
        parse_config(doc)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="no such"):
        load_config(str(tmp_path / "absent.json"))
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(tmp_path / "bad.json"))


def test_preserve_policy_refuses_duplicate_uuids(lab_path):
    with pytest.raises(ConfigError, match="hp0 and hp1"):
        Deployment(parse_config(config(lab_path, 2, "preserve"))).start()


def test_twenty_instances_one_responder(lab_path, log):
    with Deployment(parse_config(config(lab_path, 20))) as dep:
        assert len(dep.instances) == 20
        assert len({inst.port for inst in dep.instances}) == 20
        assert len({inst.uuid for inst in dep.instances}) == 20
        for inst in dep.instances:
            status, _, body = http_get(inst.location)
            assert status == 200 and inst.uuid.encode() in body
        found = list(ssdp.send_search(st="upnp:rootdevice", mx=1, target=("127.0.0.1", dep.config.ssdp.port),
                                      timeout=1.5))
        assert {resp.usn for resp, _ in found} == {f"{i.uuid}::upnp:rootdevice" for i in dep.instances}


def test_same_config_twice_serves_identical_descriptions(lab_path):
    def capture():
        doc = config(lab_path, 2, "preserve")
        doc["instances"][1]["bundle_path"] = samples_path
        with Deployment(parse_config(doc)) as dep:
            return [
                {path: http_get(inst.base_url + path)[2] for path in inst.description_paths}
                for inst in dep.instances
            ]

    samples_path = lab_path + "-hub"
    bundlelib.save_bundle(samples.sample_bundle("mediahub"), samples_path)
    assert capture() == capture()


def test_fail_fast_on_port_in_use(lab_path):
    with socket.socket() as blocker:
        blocker.bind(("127.0.0.1", 0))
        blocker.listen()
        doc = config(lab_path, 2)
        doc["instances"][1]["http_port"] = blocker.getsockname()[1]
        dep = Deployment(parse_config(doc))
        with pytest.raises(InstanceFailed) as err:
            dep.start()
    assert err.value.name == "hp1" and isinstance(err.value.cause, PortInUse)
    assert dep.instances[0]._stop.is_set()


def test_state_path_checkpoints_and_resumes(lab_path, tmp_path):
    doc = config(lab_path, 1)
    doc["instances"][0]["state_path"] = str(tmp_path / "state")
    with Deployment(parse_config(doc)) as dep:
        first_uuid = dep.instances[0].uuid
        soap_call(dep.instances[0], "numeric", "SetLevel", [("Level", "95")])
    with Deployment(parse_config(doc)) as dep:
        assert dep.instances[0].uuid == first_uuid
        assert soap_call(dep.instances[0], "numeric", "GetLevel").out_arguments == [("Level", "95")]


def test_advertise_alive_and_byebye(lab_path):
    listener = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    listener.bind(("127.0.0.1", 0))
    listener.settimeout(2)
    doc = config(lab_path, 1)
    doc["ssdp"]["advertise"] = True
    dep = Deployment(parse_config(doc))
    dep.start()
    dep.responder.notify_target = listener.getsockname()
    dep._advertise(ssdp.ALIVE)
    dep.stop()
    kinds = []
    try:
        while True:
            kinds.append(ssdp.parse_advertisement(listener.recv(4096)).kind)
    except socket.timeout:
        pass
    listener.close()
    assert kinds.count(ssdp.ALIVE) == kinds.count(ssdp.BYEBYE) > 0

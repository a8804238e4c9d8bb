import urllib.error
import urllib.request

import pytest

from upot import emulator, samples
from upot.interactions import InteractionLog


@pytest.fixture
def log():
    sink = InteractionLog(keep=True)
    yield sink
    sink.close()


def http_get(url, method="GET", headers=None, data=None):
    """(status, headers, body) without proxies and without raising on 4xx/5xx."""
    opener = urllib.request.build_opener(urllib.request.ProxyHandler({}))
    req = urllib.request.Request(url, method=method, headers=headers or {}, data=data)
    try:
        with opener.open(req, timeout=5) as resp:
            return resp.status, resp.headers, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.headers, exc.read()


@pytest.fixture
def running():
    """Factory starting sample instances on loopback; all stopped at teardown."""
    started = []

    def start(name_or_bundle="lab", **kwargs):
        bundle = samples.sample_bundle(name_or_bundle) if isinstance(name_or_bundle, str) else name_or_bundle
        inst = emulator.instantiate(bundle, "127.0.0.1", 0, **kwargs)
        started.append(inst)
        return inst

    yield start
    for inst in started:
        inst.stop()


def soap_call(inst, service, action, arguments=()):
    """POST an action to a running lab-style instance; returns an ActionResult."""
    from upot import soap

    headers, body = soap.build_action_request(
        soap.ActionInvocation(f"urn:upot-lab:service:{service}:1", action, list(arguments)))
    status, _, payload = http_get(f"{inst.base_url}/control/{service}", "POST", headers, body)
    return soap.parse_action_response_body(payload, action)


# acceptance summary: one PASS/FAIL line per criterion at the end of the run

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    previous = _criteria.get(number)
    passed = report.passed and (previous is None or previous[1])
    details = [d for d in ((previous[2] if previous else ""), detail) if d]
    _criteria[number] = (title, passed, "; ".join(details))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        title, passed, detail = _criteria[number]
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)

"""Hypothesis strategies shared by the codec property tests."""

import base64
import string

from hypothesis import strategies as st

from upot.datatypes import INTEGER_RANGES
from upot.description import (
    ActionDef,
    AllowedRange,
    Argument,
    DeviceDescription,
    Icon,
    ServiceDescription,
    ServiceRef,
    StateVariableDef,
)

# Characters XML 1.0 can carry, biased towards the ones that need escaping.
HOSTILE_CHARS = list("&<>\"'\r\n\t ];#é☃") + ["\U0001f600", "\x85", "\u2028"]
HOSTILE_TOKENS = ["", "]]>", "&amp;", "<!--", "-->", "\r\n", "&#13;", "<![CDATA[x]]>", "<?pi?>", "&lt;"]

xml_char = st.characters(
    blacklist_categories=("Cs",),
    blacklist_characters="".join(chr(c) for c in range(0x20) if c not in (0x9, 0xA, 0xD)) + "\ufffe\uffff",
)
_chunk = st.text(alphabet=st.one_of(st.sampled_from(HOSTILE_CHARS), xml_char), max_size=6)
hostile_text = st.builds(lambda a, token, b: a + token + b, _chunk, st.sampled_from(HOSTILE_TOKENS), _chunk)
# description fields are whitespace-trimmed on parse and must be non-empty
field_text = hostile_text.map(lambda t: t.strip() or "x")

name = st.text(alphabet=string.ascii_letters + string.digits + "_", min_size=1, max_size=12).filter(
    lambda n: n[0].isalpha()
)
urn_part = st.text(alphabet=string.ascii_lowercase + string.digits + "-", min_size=1, max_size=8)


@st.composite
def urn(draw, kind):
    vendor = draw(st.sampled_from(["schemas-upnp-org", "Belkin", "example-com", "dial-multiscreen-org"]))
    return f"urn:{vendor}:{kind}:{draw(urn_part)}:{draw(st.integers(1, 3))}"


uuid = st.uuids().map(lambda u: f"uuid:{u}")
path = urn_part.map(lambda part: f"/{part}")


@st.composite
def service_refs(draw):
    base = draw(path)
    return ServiceRef(
        service_type=draw(urn("service")),
        service_id=draw(urn("serviceId")),
        scpd_url=base + "/scpd.xml",
        control_url=base + "/control",
        event_sub_url=base + "/event",
    )


@st.composite
def devices(draw, depth=0):
    dev = DeviceDescription(
        device_type=draw(urn("device")),
        friendly_name=draw(field_text),
        manufacturer=draw(field_text),
        model_name=draw(field_text),
        udn=draw(uuid),
        serial_number=draw(st.none() | field_text),
        services=draw(st.lists(service_refs(), max_size=2)),
        presentation_urls=draw(st.lists(path, max_size=1)),
        icons=draw(st.lists(st.builds(Icon, st.just("image/png"), st.just("48"), st.just("48"),
                                      st.just("24"), path), max_size=1)),
    )
    if draw(st.booleans()):
        dev.extra["modelNumber"] = draw(field_text)
    if depth < 1:
        dev.embedded_devices = draw(st.lists(devices(depth=depth + 1), max_size=1))
    return dev


@st.composite
def root_devices(draw):
    dev = draw(devices())
    if draw(st.booleans()):
        dev.url_base = "http://" + draw(urn_part) + ":49153/"
    return dev


def int_value(data_type):
    lo, hi = INTEGER_RANGES[data_type]
    return st.integers(lo, hi).map(str)


# Lexically valid values per data type, as a control point would send them.
VALUE_STRATEGIES = {
    "string": hostile_text,
    "boolean": st.sampled_from(["0", "1", "true", "false", "yes", "no"]),
    **{t: int_value(t) for t in INTEGER_RANGES},
    "r4": st.floats(allow_nan=False, allow_infinity=False, width=32).map(repr),
    "r8": st.floats(allow_nan=False, allow_infinity=False).map(repr),
    "dateTime": st.datetimes().map(lambda d: d.replace(microsecond=0).isoformat()),
    "bin.base64": st.binary(max_size=40).map(lambda b: base64.b64encode(b).decode()),
    "uri": st.lists(st.sampled_from(string.ascii_letters + string.digits + "/:.?=&%-_"), min_size=1,
                    max_size=30).map(lambda cs: "http://h/" + "".join(cs)),
}
DATA_TYPES = sorted(VALUE_STRATEGIES)


@st.composite
def state_variables(draw, var_name):
    data_type = draw(st.sampled_from(DATA_TYPES))
    var = StateVariableDef(name=var_name, data_type=data_type, send_events=draw(st.booleans()))
    choice = draw(st.sampled_from(["none", "values", "range"]))
    if choice == "values" and data_type == "string":
        var.allowed_values = draw(st.lists(field_text, min_size=1, max_size=4, unique=True))
    elif choice == "range" and data_type in INTEGER_RANGES:
        lo, hi = INTEGER_RANGES[data_type]
        a = draw(st.integers(lo, hi))
        b = draw(st.integers(a, hi))
        var.allowed_range = AllowedRange(str(a), str(b), draw(st.none() | st.just("1")))
    if draw(st.booleans()):
        if var.allowed_values:
            var.default_value = var.allowed_values[0]
        elif var.allowed_range:
            var.default_value = var.allowed_range.minimum
        else:
            value = draw(VALUE_STRATEGIES[data_type])
            if value == value.strip() and value:
                var.default_value = value
    return var


@st.composite
def services(draw):
    var_names = draw(st.lists(name, min_size=1, max_size=6, unique=True))
    variables = [draw(state_variables(n)) for n in var_names]
    action_names = draw(st.lists(name, max_size=5, unique=True))
    actions = []
    for action_name in action_names:
        arg_names = draw(st.lists(name, max_size=4, unique=True))
        actions.append(ActionDef(action_name, [
            Argument(a, draw(st.sampled_from(["in", "out"])), draw(st.sampled_from(var_names)))
            for a in arg_names
        ]))
    return ServiceDescription(actions=actions, state_variables=variables)

"""Model, parse and serialize UPnP device and service descriptions.

Parsed documents keep their raw bytes so a honeypot can re-serve them
verbatim; regenerated XML is only used for hand-built descriptions.
Unknown vendor elements survive as canonicalized XML fragments.
"""

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import List, Optional
from urllib.parse import urljoin

import defusedxml.ElementTree as SafeET
from defusedxml import DefusedXmlException

from . import datatypes
from .errors import InvariantViolation, SchemaViolation, XmlSyntaxError

logger = logging.getLogger(__name__)

DEVICE_NS = "urn:schemas-upnp-org:device-1-0"
SERVICE_NS = "urn:schemas-upnp-org:service-1-0"

# optional simple device fields, in UPnP DA template order
DEVICE_EXTRA_FIELDS = ("manufacturerURL", "modelDescription", "modelNumber", "modelURL", "UPC")
_DEVICE_KNOWN = {
    "deviceType", "friendlyName", "manufacturer", "modelName", "serialNumber", "UDN",
    "iconList", "serviceList", "deviceList", "presentationURL", *DEVICE_EXTRA_FIELDS,
}
_ROOT_KNOWN = {"specVersion", "URLBase", "device"}


@dataclass
class ServiceRef:
    service_type: str
    service_id: str
    scpd_url: str
    control_url: str
    event_sub_url: str


@dataclass
class Icon:
    mimetype: str
    width: str
    height: str
    depth: str
    url: str


@dataclass
class DeviceDescription:
    device_type: str
    friendly_name: str
    manufacturer: str
    model_name: str
    udn: str
    serial_number: Optional[str] = None
    url_base: Optional[str] = None
    services: List[ServiceRef] = field(default_factory=list)
    embedded_devices: List["DeviceDescription"] = field(default_factory=list)
    presentation_urls: List[str] = field(default_factory=list)
    icons: List[Icon] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    extensions: List[str] = field(default_factory=list)
    root_extensions: List[str] = field(default_factory=list)
    spec_version: tuple = (1, 0)
    raw: Optional[bytes] = field(default=None, compare=False, repr=False)


@dataclass
class Argument:
    name: str
    direction: str
    related_state_variable: str


@dataclass
class ActionDef:
    name: str
    arguments: List[Argument] = field(default_factory=list)

    @property
    def in_arguments(self):
        return [a for a in self.arguments if a.direction == "in"]

    @property
    def out_arguments(self):
        return [a for a in self.arguments if a.direction == "out"]


@dataclass
class AllowedRange:
    minimum: Optional[str] = None
    maximum: Optional[str] = None
    step: Optional[str] = None


@dataclass
class StateVariableDef:
    name: str
    data_type: str
    default_value: Optional[str] = None
    allowed_values: Optional[List[str]] = None
    allowed_range: Optional[AllowedRange] = None
    send_events: bool = True


@dataclass
class ServiceDescription:
    actions: List[ActionDef] = field(default_factory=list)
    state_variables: List[StateVariableDef] = field(default_factory=list)
    spec_version: tuple = (1, 0)
    raw: Optional[bytes] = field(default=None, compare=False, repr=False)

    def action(self, name):
        for action in self.actions:
            if action.name == name:
                return action
        return None

    def variable(self, name):
        for var in self.state_variables:
            if var.name == name:
                return var
        return None


# --- XML helpers -----------------------------------------------------------

def _local(tag):
    return tag.rsplit("}", 1)[-1] if isinstance(tag, str) else ""


def _find(el, name):
    for child in el:
        if _local(child.tag) == name:
            return child
    return None


def _find_all(el, name):
    return [child for child in el if _local(child.tag) == name]


def _text(el, name, required=False):
    child = _find(el, name)
    if child is None or child.text is None or not child.text.strip():
        if required:
            raise SchemaViolation(name)
        return None
    return child.text.strip()


def _fragment(el):
    """Canonical text of an element without its tail."""
    tail, el.tail = el.tail, None
    try:
        return ET.canonicalize(ET.tostring(el, encoding="unicode"), strip_text=True)
    finally:
        el.tail = tail


def _parse_xml(xml):
    try:
        return SafeET.fromstring(xml)
    except ET.ParseError as exc:
        raise XmlSyntaxError(str(exc)) from exc
    except DefusedXmlException as exc:
        raise XmlSyntaxError(f"forbidden XML construct: {exc}") from exc


def escape(text):
    """Escape character data so that it parses back to exactly ``text``."""
    return (
        text.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace("\r", "&#13;")
    )


def _spec_version(el):
    spec = _find(el, "specVersion")
    if spec is None:
        return (1, 0)
    try:
        return (int(_text(spec, "major") or 1), int(_text(spec, "minor") or 0))
    except ValueError:
        return (1, 0)


# --- device descriptions ---------------------------------------------------

def _parse_service_ref(el):
    return ServiceRef(
        service_type=_text(el, "serviceType", required=True),
        service_id=_text(el, "serviceId", required=True),
        scpd_url=_text(el, "SCPDURL", required=True),
        control_url=_text(el, "controlURL", required=True),
        event_sub_url=_text(el, "eventSubURL", required=True),
    )


def _parse_device(el, depth=0):
    if depth > 32:
        raise SchemaViolation("deviceList", "embedded devices nested too deeply")
    udn = _text(el, "UDN", required=True)
    if not udn.startswith("uuid:"):
        raise SchemaViolation("UDN", f"{udn!r} lacks the uuid: prefix")
    device = DeviceDescription(
        device_type=_text(el, "deviceType", required=True),
        friendly_name=_text(el, "friendlyName", required=True),
        manufacturer=_text(el, "manufacturer", required=True),
        model_name=_text(el, "modelName", required=True),
        udn=udn,
        serial_number=_text(el, "serialNumber"),
    )
    for name in DEVICE_EXTRA_FIELDS:
        value = _text(el, name)
        if value is not None:
            device.extra[name] = value
    icon_list = _find(el, "iconList")
    if icon_list is not None:
        for icon in _find_all(icon_list, "icon"):
            device.icons.append(Icon(
                mimetype=_text(icon, "mimetype") or "",
                width=_text(icon, "width") or "",
                height=_text(icon, "height") or "",
                depth=_text(icon, "depth") or "",
                url=_text(icon, "url", required=True),
            ))
    service_list = _find(el, "serviceList")
    if service_list is not None:
        device.services = [_parse_service_ref(s) for s in _find_all(service_list, "service")]
    device_list = _find(el, "deviceList")
    if device_list is not None:
        device.embedded_devices = [
            _parse_device(d, depth + 1) for d in _find_all(device_list, "device")
        ]
    for child in _find_all(el, "presentationURL"):
        if child.text and child.text.strip():
            device.presentation_urls.append(child.text.strip())
    device.extensions = [_fragment(c) for c in el if _local(c.tag) not in _DEVICE_KNOWN]
    return device


def parse_device_description(xml):
    """Parse a root device description (bytes) into a DeviceDescription tree."""
    root = _parse_xml(xml)
    if _local(root.tag) != "root":
        raise SchemaViolation("root", f"unexpected document element {_local(root.tag)!r}")
    device_el = _find(root, "device")
    if device_el is None:
        raise SchemaViolation("device")
    device = _parse_device(device_el)
    device.url_base = _text(root, "URLBase")
    device.spec_version = _spec_version(root)
    device.root_extensions = [_fragment(c) for c in root if _local(c.tag) not in _ROOT_KNOWN]
    device.raw = bytes(xml)
    return device


def iter_devices(device):
    """Depth-first walk over a device and its embedded devices."""
    yield device
    for child in device.embedded_devices:
        yield from iter_devices(child)


def iter_services(device):
    """Yield (device, ServiceRef) pairs across the whole tree."""
    for dev in iter_devices(device):
        for ref in dev.services:
            yield dev, ref


def validate_device(device):
    seen = set()

    def walk(dev):
        if id(dev) in seen:
            raise InvariantViolation("embedded device tree contains a cycle")
        seen.add(id(dev))
        if not dev.udn.startswith("uuid:"):
            raise InvariantViolation(f"UDN {dev.udn!r} lacks the uuid: prefix")
        for ref in dev.services:
            urls = (ref.scpd_url, ref.control_url, ref.event_sub_url)
            if not all((ref.service_type, ref.service_id, *urls)):
                raise InvariantViolation(f"service {ref.service_id!r} has empty fields")
            if len(set(urls)) != 3:
                raise InvariantViolation(f"service {ref.service_id!r} reuses a URL")
        for child in dev.embedded_devices:
            walk(child)

    walk(device)


def _elem(name, value, indent):
    return f"{indent}<{name}>{escape(value)}</{name}>"


def _device_xml(dev, indent):
    pad = indent + "  "
    lines = [f"{indent}<device>"]
    lines.append(_elem("deviceType", dev.device_type, pad))
    lines.append(_elem("friendlyName", dev.friendly_name, pad))
    lines.append(_elem("manufacturer", dev.manufacturer, pad))
    for name in ("manufacturerURL", "modelDescription"):
        if name in dev.extra:
            lines.append(_elem(name, dev.extra[name], pad))
    lines.append(_elem("modelName", dev.model_name, pad))
    for name in ("modelNumber", "modelURL"):
        if name in dev.extra:
            lines.append(_elem(name, dev.extra[name], pad))
    if dev.serial_number is not None:
        lines.append(_elem("serialNumber", dev.serial_number, pad))
    lines.append(_elem("UDN", dev.udn, pad))
    if "UPC" in dev.extra:
        lines.append(_elem("UPC", dev.extra["UPC"], pad))
    if dev.icons:
        lines.append(f"{pad}<iconList>")
        for icon in dev.icons:
            p = pad + "    "
            lines.append(f"{pad}  <icon>")
            lines += [
                _elem("mimetype", icon.mimetype, p), _elem("width", icon.width, p),
                _elem("height", icon.height, p), _elem("depth", icon.depth, p),
                _elem("url", icon.url, p),
            ]
            lines.append(f"{pad}  </icon>")
        lines.append(f"{pad}</iconList>")
    if dev.services:
        lines.append(f"{pad}<serviceList>")
        for ref in dev.services:
            p = pad + "    "
            lines.append(f"{pad}  <service>")
            lines += [
                _elem("serviceType", ref.service_type, p),
                _elem("serviceId", ref.service_id, p),
                _elem("SCPDURL", ref.scpd_url, p),
                _elem("controlURL", ref.control_url, p),
                _elem("eventSubURL", ref.event_sub_url, p),
            ]
            lines.append(f"{pad}  </service>")
        lines.append(f"{pad}</serviceList>")
    else:
        lines.append(f"{pad}<serviceList/>")
    if dev.embedded_devices:
        lines.append(f"{pad}<deviceList>")
        for child in dev.embedded_devices:
            lines.extend(_device_xml(child, pad + "  "))
        lines.append(f"{pad}</deviceList>")
    for url in dev.presentation_urls:
        lines.append(_elem("presentationURL", url, pad))
    lines.extend(pad + frag for frag in dev.extensions)
    lines.append(f"{indent}</device>")
    return lines


def serialize_device_description(device, verbatim=True):
    """Serialize a device tree.

    With ``verbatim`` set, a description that came from parsing is returned
    as the exact bytes it was parsed from.
    """
    if verbatim and device.raw is not None:
        return device.raw
    validate_device(device)
    major, minor = device.spec_version
    lines = [
        '<?xml version="1.0" encoding="utf-8"?>',
        f'<root xmlns="{DEVICE_NS}">',
        f"  <specVersion><major>{major}</major><minor>{minor}</minor></specVersion>",
    ]
    if device.url_base is not None:
        lines.append(_elem("URLBase", device.url_base, "  "))
    lines.extend(_device_xml(device, "  "))
    lines.extend("  " + frag for frag in device.root_extensions)
    lines.append("</root>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def resolve_url(device, location, url):
    """Absolute URL of a description-relative ``url``.

    URLBase wins over the location the description was fetched from.
    """
    return urljoin(device.url_base or location, url)


# --- service descriptions --------------------------------------------------

def _parse_variable(el):
    name = _text(el, "name", required=True)
    data_type = _text(el, "dataType", required=True)
    datatypes.warn_unknown(data_type)
    send_attr = (el.get("sendEvents") or "yes").strip().lower()
    var = StateVariableDef(
        name=name,
        data_type=data_type,
        default_value=_text(el, "defaultValue"),
        send_events=send_attr != "no",
    )
    values_el = _find(el, "allowedValueList")
    if values_el is not None:
        var.allowed_values = [(v.text or "").strip() for v in _find_all(values_el, "allowedValue")]
    range_el = _find(el, "allowedValueRange")
    if range_el is not None:
        if var.allowed_values is not None:
            raise SchemaViolation(name, "allowedValueList and allowedValueRange both present")
        var.allowed_range = AllowedRange(
            minimum=_text(range_el, "minimum"),
            maximum=_text(range_el, "maximum"),
            step=_text(range_el, "step"),
        )
    if var.default_value is not None and not datatypes.check_value(var, var.default_value):
        logger.warning("default %r of %s violates its constraints", var.default_value, name)
    return var


def _parse_action(el):
    action = ActionDef(name=_text(el, "name", required=True))
    arg_list = _find(el, "argumentList")
    if arg_list is not None:
        for arg_el in _find_all(arg_list, "argument"):
            direction = (_text(arg_el, "direction", required=True)).lower()
            if direction not in ("in", "out"):
                raise SchemaViolation("direction", f"{direction!r} in action {action.name}")
            action.arguments.append(Argument(
                name=_text(arg_el, "name", required=True),
                direction=direction,
                related_state_variable=_text(arg_el, "relatedStateVariable", required=True),
            ))
    names = [a.name for a in action.arguments]
    if len(set(names)) != len(names):
        raise SchemaViolation(action.name, "duplicate argument names")
    return action


def check_service(service, error=SchemaViolation):
    """Uniqueness and referential integrity of a service description."""
    var_names = [v.name for v in service.state_variables]
    if len(set(var_names)) != len(var_names):
        raise error("serviceStateTable", "duplicate state variable names")
    action_names = [a.name for a in service.actions]
    if len(set(action_names)) != len(action_names):
        raise error("actionList", "duplicate action names")
    known = set(var_names)
    for action in service.actions:
        for arg in action.arguments:
            if arg.related_state_variable not in known:
                raise error(arg.related_state_variable, f"referenced by {action.name}/{arg.name}")


def parse_service_description(xml):
    root = _parse_xml(xml)
    if _local(root.tag) != "scpd":
        raise SchemaViolation("scpd", f"unexpected document element {_local(root.tag)!r}")
    service = ServiceDescription(spec_version=_spec_version(root))
    action_list = _find(root, "actionList")
    if action_list is not None:
        service.actions = [_parse_action(a) for a in _find_all(action_list, "action")]
    table = _find(root, "serviceStateTable")
    if table is None:
        raise SchemaViolation("serviceStateTable")
    service.state_variables = [_parse_variable(v) for v in _find_all(table, "stateVariable")]
    check_service(service)
    service.raw = bytes(xml)
    return service


def _invariant(element, detail=""):
    return InvariantViolation(f"{element}: {detail}" if detail else element)


def validate_service(service):
    check_service(service, error=_invariant)
    for action in service.actions:
        names = [a.name for a in action.arguments]
        if len(set(names)) != len(names):
            raise InvariantViolation(f"{action.name}: duplicate argument names")
        for arg in action.arguments:
            if arg.direction not in ("in", "out"):
                raise InvariantViolation(f"{action.name}/{arg.name}: bad direction")
    for var in service.state_variables:
        if var.allowed_values is not None and var.allowed_range is not None:
            raise InvariantViolation(f"{var.name}: allowed values and range both set")
        if var.default_value is not None and not datatypes.check_value(var, var.default_value):
            raise InvariantViolation(f"{var.name}: invalid default {var.default_value!r}")


def serialize_service_description(service, verbatim=True):
    if verbatim and service.raw is not None:
        return service.raw
    validate_service(service)
    major, minor = service.spec_version
    out = [
        '<?xml version="1.0" encoding="utf-8"?>',
        f'<scpd xmlns="{SERVICE_NS}">',
        f"  <specVersion><major>{major}</major><minor>{minor}</minor></specVersion>",
    ]
    if service.actions:
        out.append("  <actionList>")
        for action in service.actions:
            out.append("    <action>")
            out.append(_elem("name", action.name, "      "))
            if action.arguments:
                out.append("      <argumentList>")
                for arg in action.arguments:
                    p = "          "
                    out.append("        <argument>")
                    out += [
                        _elem("name", arg.name, p),
                        _elem("direction", arg.direction, p),
                        _elem("relatedStateVariable", arg.related_state_variable, p),
                    ]
                    out.append("        </argument>")
                out.append("      </argumentList>")
            out.append("    </action>")
        out.append("  </actionList>")
    else:
        out.append("  <actionList/>")
    out.append("  <serviceStateTable>")
    for var in service.state_variables:
        p = "      "
        send = "yes" if var.send_events else "no"
        out.append(f'    <stateVariable sendEvents="{send}">')
        out.append(_elem("name", var.name, p))
        out.append(_elem("dataType", var.data_type, p))
        if var.default_value is not None:
            out.append(_elem("defaultValue", var.default_value, p))
        if var.allowed_values is not None:
            out.append(f"{p}<allowedValueList>")
            out += [_elem("allowedValue", v, p + "  ") for v in var.allowed_values]
            out.append(f"{p}</allowedValueList>")
        if var.allowed_range is not None:
            rng = var.allowed_range
            out.append(f"{p}<allowedValueRange>")
            for tag, value in (("minimum", rng.minimum), ("maximum", rng.maximum), ("step", rng.step)):
                if value is not None:
                    out.append(_elem(tag, value, p + "  "))
            out.append(f"{p}</allowedValueRange>")
        out.append("    </stateVariable>")
    out.append("  </serviceStateTable>")
    out.append("</scpd>")
    return ("\n".join(out) + "\n").encode("utf-8")


# --- action semantics ------------------------------------------------------

READ, WRITE, MIXED = "read", "write", "mixed"


def classify_action(action):
    """read: no in-arguments; write: in-arguments only; mixed: both."""
    has_in = any(a.direction == "in" for a in action.arguments)
    has_out = any(a.direction == "out" for a in action.arguments)
    if not has_in:
        return READ
    return MIXED if has_out else WRITE


GENERIC_PREFIX = "A_ARG_TYPE_"


def argument_variable(service, argument):
    """State variable an argument reads from or writes to.

    Vendors often relate every argument to a generic ``A_ARG_TYPE_*``
    variable; when a variable named like the argument exists, that one is
    the real state.
    """
    related = argument.related_state_variable
    if related.startswith(GENERIC_PREFIX) and service.variable(argument.name) is not None:
        return argument.name
    return related

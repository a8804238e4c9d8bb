"""SOAP 1.1 control messages: action requests, responses and UPnP faults."""

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from email.utils import formatdate
from typing import List, Optional, Tuple

import defusedxml.ElementTree as SafeET
from defusedxml import DefusedXmlException

from .errors import (
    ArgumentMismatch,
    HeaderBodyMismatch,
    NotSoap,
    UnexpectedActionName,
    UnknownContentType,
)

SOAP_ENV_NS = "http://schemas.xmlsoap.org/soap/envelope/"
SOAP_ENCODING = "http://schemas.xmlsoap.org/soap/encoding/"
CONTROL_NS = "urn:schemas-upnp-org:control-1-0"
CONTENT_TYPE = 'text/xml; charset="utf-8"'

FAULT_TEXT = {
    401: "Invalid Action",
    402: "Invalid Args",
    501: "Action Failed",
}

_INVALID_XML_CHARS = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f\ud800-\udfff\ufffe\uffff]")


def xml_text(value):
    """Escape a value as XML character data that parses back to ``value``."""
    if _INVALID_XML_CHARS.search(value):
        raise ValueError(f"{value!r} cannot be carried in XML 1.0")
    return (
        value.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace("\r", "&#13;")
    )


def valid_fault_code(code):
    return code in FAULT_TEXT or 600 <= code <= 699


@dataclass
class ActionInvocation:
    service_type: str
    action_name: str
    arguments: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def soapaction(self):
        return f'"{self.service_type}#{self.action_name}"'


@dataclass
class ActionResult:
    action_name: Optional[str] = None
    out_arguments: List[Tuple[str, str]] = field(default_factory=list)
    error_code: Optional[int] = None
    error_description: Optional[str] = None

    @property
    def is_fault(self):
        return self.error_code is not None

    @classmethod
    def fault(cls, code, description=None):
        if not valid_fault_code(code):
            raise ValueError(f"fault code {code} outside the UPnP error table")
        return cls(error_code=code, error_description=description or FAULT_TEXT.get(code, ""))


def _envelope(inner):
    return (
        '<?xml version="1.0" encoding="utf-8"?>\n'
        f'<s:Envelope xmlns:s="{SOAP_ENV_NS}" s:encodingStyle="{SOAP_ENCODING}">'
        f"<s:Body>{inner}</s:Body></s:Envelope>\n"
    ).encode("utf-8")


def _args_xml(args):
    return "".join(f"<{name}>{xml_text(value)}</{name}>" for name, value in args)


def action_request_body(inv):
    inner = f'<u:{inv.action_name} xmlns:u="{xml_text(inv.service_type)}">'
    inner += _args_xml(inv.arguments) + f"</u:{inv.action_name}>"
    return _envelope(inner)


def build_action_request(inv):
    """Headers and body a control point POSTs for ``inv``."""
    body = action_request_body(inv)
    headers = {
        "CONTENT-TYPE": CONTENT_TYPE,
        "SOAPACTION": inv.soapaction,
        "CONTENT-LENGTH": str(len(body)),
    }
    return headers, body


def _local(tag):
    return tag.rsplit("}", 1)[-1]


def _ns(tag):
    return tag[1:].split("}", 1)[0] if tag.startswith("{") else ""


def _body_element(body):
    try:
        root = SafeET.fromstring(body)
    except (ET.ParseError, DefusedXmlException) as exc:
        raise NotSoap(f"unparseable envelope: {exc}") from exc
    if root.tag != f"{{{SOAP_ENV_NS}}}Envelope":
        raise NotSoap(f"document element is {root.tag!r}, not a SOAP envelope")
    soap_body = root.find(f"{{{SOAP_ENV_NS}}}Body")
    if soap_body is None or len(soap_body) == 0:
        raise NotSoap("envelope has no body element")
    return soap_body[0]


def _children(el):
    return [(_local(child.tag), child.text or "") for child in el]


def _header(headers, name):
    for key, value in headers.items():
        if key.lower() == name.lower():
            return value
    return None


def parse_soapaction(value):
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] == '"':
        value = value[1:-1]
    service_type, sep, action = value.rpartition("#")
    if not sep or not service_type or not action:
        raise NotSoap(f"malformed SOAPACTION {value!r}")
    return service_type, action


def parse_action_request(method, headers, body):
    """Decode a control POST into an ActionInvocation.

    The action named in the SOAPACTION header must agree with the body.
    """
    if method.upper() not in ("POST", "M-POST"):
        raise NotSoap(f"method {method} is not POST")
    ctype = _header(headers, "CONTENT-TYPE")
    if ctype is not None and ctype.split(";")[0].strip().lower() not in ("text/xml", "application/xml"):
        raise UnknownContentType(ctype)
    soapaction = _header(headers, "SOAPACTION")
    if soapaction is None and method.upper() == "M-POST":
        for key, value in headers.items():
            if key.lower().endswith("-soapaction"):
                soapaction = value
    if soapaction is None:
        raise NotSoap("missing SOAPACTION header")
    header_type, header_action = parse_soapaction(soapaction)
    el = _body_element(body)
    body_type, body_action = _ns(el.tag), _local(el.tag)
    if (header_type, header_action) != (body_type, body_action):
        raise HeaderBodyMismatch(f"header {header_type}#{header_action} vs body {body_type}#{body_action}")
    return ActionInvocation(service_type=body_type, action_name=body_action, arguments=_children(el))


def action_response_body(service_type, action_name, out_args):
    inner = f'<u:{action_name}Response xmlns:u="{xml_text(service_type)}">'
    inner += _args_xml(out_args) + f"</u:{action_name}Response>"
    return _envelope(inner)


def fault_body(code, description):
    if not valid_fault_code(code):
        raise ValueError(f"fault code {code} outside the UPnP error table")
    inner = (
        "<s:Fault><faultcode>s:Client</faultcode><faultstring>UPnPError</faultstring>"
        f'<detail><UPnPError xmlns="{CONTROL_NS}"><errorCode>{code}</errorCode>'
        f"<errorDescription>{xml_text(description)}</errorDescription></UPnPError></detail>"
        "</s:Fault>"
    )
    return _envelope(inner)


def _http(status, reason, body, server):
    head = [
        f"HTTP/1.1 {status} {reason}",
        f"CONTENT-TYPE: {CONTENT_TYPE}",
        f"CONTENT-LENGTH: {len(body)}",
        f"DATE: {formatdate(usegmt=True)}",
        "EXT:",
        f"SERVER: {server}",
    ]
    return ("\r\n".join(head) + "\r\n\r\n").encode("ascii") + body


def check_out_arguments(expected, out_args):
    want = [a.name for a in expected.out_arguments]
    got = [name for name, _ in out_args]
    if want != got:
        raise ArgumentMismatch(f"{expected.name}: expected out arguments {want}, got {got}")


def build_action_response(inv, out_args, expected=None, server="UPnP/1.0"):
    if expected is not None:
        check_out_arguments(expected, out_args)
    body = action_response_body(inv.service_type, inv.action_name, out_args)
    return _http(200, "OK", body, server)


def build_fault(error_code, error_description=None, server="UPnP/1.0"):
    description = error_description or FAULT_TEXT.get(error_code, "")
    return _http(500, "Internal Server Error", fault_body(error_code, description), server)


def split_http_response(raw):
    head, sep, body = raw.partition(b"\r\n\r\n")
    if not sep:
        raise NotSoap("no header/body separator")
    lines = head.decode("latin-1").split("\r\n")
    parts = lines[0].split(" ", 2)
    try:
        status = int(parts[1])
    except (IndexError, ValueError):
        raise NotSoap(f"bad status line {lines[0]!r}") from None
    headers = {}
    for line in lines[1:]:
        key, _, value = line.partition(":")
        headers[key.strip().upper()] = value.strip()
    return status, headers, body


def parse_action_response_body(body, expected):
    """ActionResult from a response envelope; ``expected`` is the ActionDef."""
    el = _body_element(body)
    if el.tag == f"{{{SOAP_ENV_NS}}}Fault":
        error = el.find(f"detail/{{{CONTROL_NS}}}UPnPError")
        if error is None:
            error = el.find("detail/UPnPError")
        if error is None:
            raise NotSoap("fault without UPnPError detail")
        code = error.findtext(f"{{{CONTROL_NS}}}errorCode") or error.findtext("errorCode")
        desc = error.findtext(f"{{{CONTROL_NS}}}errorDescription") or error.findtext("errorDescription")
        try:
            return ActionResult(error_code=int(code.strip()), error_description=desc or "")
        except (AttributeError, ValueError):
            raise NotSoap(f"bad errorCode {code!r}") from None
    name = _local(el.tag)
    expected_name = expected.name if hasattr(expected, "name") else expected
    if name != f"{expected_name}Response":
        raise UnexpectedActionName(f"{name} (expected {expected_name}Response)")
    return ActionResult(action_name=expected_name, out_arguments=_children(el))


def parse_action_response(raw, expected):
    _, _, body = split_http_response(raw)
    return parse_action_response_body(body, expected)

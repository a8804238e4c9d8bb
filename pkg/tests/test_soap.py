import pytest
from hypothesis import given, settings, strategies as st

from strategies import hostile_text, name, urn
from upot import soap
from upot.description import ActionDef, Argument
from upot.errors import ArgumentMismatch, HeaderBodyMismatch, NotSoap, UnexpectedActionName, UnknownContentType

BASICEVENT = "urn:Belkin:service:basicevent:1"
GET_STATE = ActionDef("GetBinaryState", [Argument("BinaryState", "out", "BinaryState")])


def test_soapaction_header_is_quoted():
    inv = soap.ActionInvocation(BASICEVENT, "SetBinaryState", [("BinaryState", "1")])
    headers, _ = soap.build_action_request(inv)
    assert headers["SOAPACTION"] == '"urn:Belkin:service:basicevent:1#SetBinaryState"'


def test_parse_set_binary_state():
    inv = soap.ActionInvocation(BASICEVENT, "SetBinaryState", [("BinaryState", "1")])
    headers, body = soap.build_action_request(inv)
    assert soap.parse_action_request("POST", headers, body) == inv


def test_header_body_mismatch():
    headers, body = soap.build_action_request(soap.ActionInvocation(BASICEVENT, "ActionB"))
    headers["SOAPACTION"] = f'"{BASICEVENT}#ActionA"'
    with pytest.raises(HeaderBodyMismatch):
        soap.parse_action_request("POST", headers, body)


def test_zero_arguments():
    headers, body = soap.build_action_request(soap.ActionInvocation(BASICEVENT, "GetBinaryState"))
    assert soap.parse_action_request("POST", headers, body).arguments == []


def test_argument_order_preserved():
    args = [("Z", "1"), ("A", "2"), ("M", "3")]
    headers, body = soap.build_action_request(soap.ActionInvocation(BASICEVENT, "Multi", args))
    assert soap.parse_action_request("POST", headers, body).arguments == args


@pytest.mark.parametrize("body", [b"not xml", b"<html/>",
                                  b'<s:Envelope xmlns:s="http://schemas.xmlsoap.org/soap/envelope/"/>'])
def test_bad_envelopes(body):
    headers = {"SOAPACTION": f'"{BASICEVENT}#X"', "CONTENT-TYPE": soap.CONTENT_TYPE}
    with pytest.raises(NotSoap):
        soap.parse_action_request("POST", headers, body)


def test_unknown_content_type():
    headers, body = soap.build_action_request(soap.ActionInvocation(BASICEVENT, "X"))
    headers["CONTENT-TYPE"] = "application/json"
    with pytest.raises(UnknownContentType):
        soap.parse_action_request("POST", headers, body)


def test_missing_soapaction():
    _, body = soap.build_action_request(soap.ActionInvocation(BASICEVENT, "X"))
    with pytest.raises(NotSoap):
        soap.parse_action_request("POST", {"CONTENT-TYPE": soap.CONTENT_TYPE}, body)


def test_get_binary_state_response():
    inv = soap.ActionInvocation(BASICEVENT, "GetBinaryState")
    raw = soap.build_action_response(inv, [("BinaryState", "0")], expected=GET_STATE)
    status, _, body = soap.split_http_response(raw)
    assert status == 200
    assert b"<BinaryState>0</BinaryState>" in body
    result = soap.parse_action_response(raw, GET_STATE)
    assert result.out_arguments == [("BinaryState", "0")] and not result.is_fault


def test_fault_401():
    raw = soap.build_fault(401, "Invalid Action")
    status, headers, _ = soap.split_http_response(raw)
    assert status == 500
    assert headers["CONTENT-TYPE"] == soap.CONTENT_TYPE
    result = soap.parse_action_response(raw, GET_STATE)
    assert (result.error_code, result.error_description) == (401, "Invalid Action")


def test_missing_out_argument():
    inv = soap.ActionInvocation(BASICEVENT, "GetBinaryState")
    with pytest.raises(ArgumentMismatch):
        soap.build_action_response(inv, [], expected=GET_STATE)


def test_unexpected_response_name():
    raw = soap.build_action_response(soap.ActionInvocation(BASICEVENT, "Other"), [])
    with pytest.raises(UnexpectedActionName):
        soap.parse_action_response(raw, GET_STATE)


@pytest.mark.parametrize("code", [400, 500, 700, 0])
def test_fault_codes_outside_table_refused(code):
    with pytest.raises(ValueError):
        soap.build_fault(code)


def test_invalid_xml_characters_refused():
    with pytest.raises(ValueError):
        soap.action_request_body(soap.ActionInvocation(BASICEVENT, "X", [("a", "\x00")]))


args = st.lists(st.tuples(name, hostile_text), max_size=5)


@settings(max_examples=300, deadline=None)
@given(urn("service"), name, args)
def test_invocation_round_trip(service_type, action, arguments):
    inv = soap.ActionInvocation(service_type, action, arguments)
    headers, body = soap.build_action_request(inv)
    assert soap.parse_action_request("POST", headers, body) == inv


@settings(max_examples=300, deadline=None)
@given(urn("service"), name, args)
def test_response_round_trip(service_type, action, out_args):
    raw = soap.build_action_response(soap.ActionInvocation(service_type, action), out_args)
    result = soap.parse_action_response(raw, action)
    assert result.action_name == action and result.out_arguments == out_args


@settings(max_examples=300, deadline=None)
@given(st.sampled_from([401, 402, 501]) | st.integers(600, 699), hostile_text)
def test_fault_round_trip(code, description):
    result = soap.parse_action_response(soap.build_fault(code, description or None), "Any")
    assert result.error_code == code
    assert result.error_description == (description or soap.FAULT_TEXT.get(code, ""))

"""UPnP DA 1.0 state-variable data types: value validation and zero values."""

import base64
import binascii
import datetime
import logging
import math
import re
from fractions import Fraction

logger = logging.getLogger(__name__)

INTEGER_RANGES = {
    "i1": (-(2**7), 2**7 - 1),
    "i2": (-(2**15), 2**15 - 1),
    "i4": (-(2**31), 2**31 - 1),
    "ui1": (0, 2**8 - 1),
    "ui2": (0, 2**16 - 1),
    "ui4": (0, 2**32 - 1),
}
FLOAT_TYPES = {"r4": 3.40282347e38, "r8": 1.7976931348623157e308}
KNOWN_TYPES = frozenset(
    ["string", "boolean", "dateTime", "bin.base64", "uri", *INTEGER_RANGES, *FLOAT_TYPES]
)
NUMERIC_TYPES = frozenset([*INTEGER_RANGES, *FLOAT_TYPES])

BOOLEAN_VALUES = {"0", "1", "true", "false", "yes", "no"}

_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_DATETIME_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})(?:T(\d{2}):(\d{2})(?::(\d{2})(?:\.\d+)?)?)?$"
)
_warned = set()


def is_known(data_type):
    return data_type in KNOWN_TYPES


def warn_unknown(data_type):
    if data_type not in KNOWN_TYPES and data_type not in _warned:
        _warned.add(data_type)
        logger.warning("unrecognized data type %r treated as opaque string", data_type)


def check_type(data_type, value):
    """Return True if ``value`` is a lexically valid instance of ``data_type``.

    Unknown types accept any string.
    """
    if not isinstance(value, str):
        return False
    if data_type in INTEGER_RANGES:
        if not _INT_RE.match(value):
            return False
        lo, hi = INTEGER_RANGES[data_type]
        return lo <= int(value) <= hi
    if data_type in FLOAT_TYPES:
        if not _FLOAT_RE.match(value):
            return False
        number = float(value)
        return math.isfinite(number) and abs(number) <= FLOAT_TYPES[data_type]
    if data_type == "boolean":
        return value.lower() in BOOLEAN_VALUES
    if data_type == "dateTime":
        m = _DATETIME_RE.match(value)
        if not m:
            return False
        parts = [int(p) for p in m.groups() if p is not None]
        try:
            datetime.datetime(*parts)
        except ValueError:
            return False
        return True
    if data_type == "bin.base64":
        try:
            base64.b64decode(value, validate=True)
        except (binascii.Error, ValueError):
            return False
        return True
    if data_type == "uri":
        return not any(c.isspace() for c in value)
    return True


def as_number(value):
    return Fraction(value)


def check_value(var, value):
    """Validate ``value`` against a StateVariableDef's type and constraints."""
    if not check_type(var.data_type, value):
        return False
    if var.allowed_values is not None:
        return value in var.allowed_values
    rng = var.allowed_range
    if rng is not None and var.data_type in NUMERIC_TYPES:
        try:
            number = as_number(value)
            if rng.minimum is not None and number < as_number(rng.minimum):
                return False
            if rng.maximum is not None and number > as_number(rng.maximum):
                return False
            if rng.step and as_number(rng.step) != 0:
                base = as_number(rng.minimum) if rng.minimum is not None else 0
                if (number - base) % as_number(rng.step) != 0:
                    return False
        except (ValueError, ZeroDivisionError):
            return False
    return True


def zero_value(data_type):
    if data_type in NUMERIC_TYPES:
        return "0"
    if data_type == "boolean":
        return "false"
    if data_type == "dateTime":
        return "1970-01-01T00:00:00"
    return ""


def default_for(var):
    """Start value for a variable no read action reports.

    Declared default, else first allowed value, else range minimum, else the
    zero value of the type.
    """
    if var.default_value is not None and check_value(var, var.default_value):
        return var.default_value
    if var.allowed_values:
        return var.allowed_values[0]
    if var.allowed_range is not None and var.allowed_range.minimum is not None:
        return var.allowed_range.minimum
    return zero_value(var.data_type)

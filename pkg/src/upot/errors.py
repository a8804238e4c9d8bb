"""Exception hierarchy shared by every layer of the framework."""


class UpotError(Exception):
    """Base class for all framework errors."""


# discovery layer

class SsdpError(UpotError):
    pass


class MalformedStartLine(SsdpError):
    pass


class MissingHeader(SsdpError):
    def __init__(self, header):
        super().__init__(header)
        self.header = header


class BadManValue(SsdpError):
    pass


class SocketBindFailure(SsdpError):
    pass


class SocketSendFailure(SsdpError):
    pass


# description layer

class DescriptionError(UpotError):
    pass


class XmlSyntaxError(DescriptionError):
    pass


class SchemaViolation(DescriptionError):
    """A mandatory element is missing or a cross reference does not resolve.

    ``element`` names the offending element or reference.
    """

    def __init__(self, element, detail=""):
        super().__init__(element if not detail else f"{element}: {detail}")
        self.element = element


class InvariantViolation(DescriptionError):
    pass


# control / eventing layers

class ControlError(UpotError):
    pass


class NotSoap(ControlError):
    pass


class HeaderBodyMismatch(ControlError):
    pass


class UnknownContentType(ControlError):
    pass


class ArgumentMismatch(ControlError):
    pass


class UnexpectedActionName(ControlError):
    pass


class EventingError(UpotError):
    pass


class MissingCallback(EventingError):
    pass


class UnknownSid(EventingError):
    pass


# scanner / bundles

class ScanError(UpotError):
    pass


class RootFetchFailed(ScanError):
    pass


class ControlUnreachable(ScanError):
    pass


class BundleError(UpotError):
    pass


class ManifestCorrupt(BundleError):
    pass


class BundleInvalid(BundleError):
    pass


class IoFailure(BundleError):
    pass


# emulator / deployment

class PortInUse(UpotError):
    pass


class ConfigError(UpotError):
    pass


class SinkMissing(UpotError):
    pass


class InstanceFailed(UpotError):
    """A configured instance could not be prepared or started."""

    def __init__(self, name, cause):
        super().__init__(f"{name}: {cause}")
        self.name = name
        self.cause = cause

"""Honeypot framework for UPnP IoT devices: clone, emulate, log, benchmark."""

__version__ = "0.1.0"

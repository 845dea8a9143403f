"""Exporter error types."""

from __future__ import annotations


class ExportError(Exception):
    """Base class for exporter failures."""


class ModelUnavailable(ExportError):
    """The requested backbone (or its weights) could not be loaded."""


class DeviceOutOfMemory(ExportError):
    """Backbone inference ran out of device memory."""


class UnreadableImage(ExportError):
    """An input image could not be opened or decoded."""

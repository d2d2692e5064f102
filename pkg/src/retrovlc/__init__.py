"""Simulator and signal-processing library for a duplex visible-light backscatter link."""

__version__ = "0.1.0"

from .errors import RetroVLCError  # noqa: E402

"""Stdio sidecar: transformer attention, masked-LM candidates, UPOS tags."""

from .server import SidecarConfig, Server

__version__ = "0.1.0"

__all__ = ["Server", "SidecarConfig", "__version__"]

"""Segmentation model server for the framed stdio/TCP protocol."""

from .server import BridgeServer, ServerConfig, serve

__version__ = "0.1.0"

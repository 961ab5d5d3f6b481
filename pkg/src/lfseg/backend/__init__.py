from .base import (
    BackendSession,
    FeatureMap,
    InvalidSessionError,
    Prompt,
    PromptError,
    SegmenterBackend,
    SegmenterError,
    SegmentResult,
    TransportError,
    grid_points,
)
from .external import ExternalBackend, Transport
from .oracle import OracleBackend
from .stub import StubBackend

__all__ = [
    "BackendSession",
    "ExternalBackend",
    "FeatureMap",
    "InvalidSessionError",
    "OracleBackend",
    "Prompt",
    "PromptError",
    "SegmenterBackend",
    "SegmenterError",
    "SegmentResult",
    "StubBackend",
    "Transport",
    "TransportError",
    "grid_points",
]

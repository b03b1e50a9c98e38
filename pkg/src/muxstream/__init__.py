"""Streaming multiplexed decoding on a small deterministic transformer."""

from muxstream.highlight import HighlightParams, HighlightState
from muxstream.interrupt import InterruptParams, start_detect, stop_detect
from muxstream.kvcache import KVCache, SegmentKind
from muxstream.model import InputUnit, Model, ModelConfig, build_model, forward
from muxstream.scheduler import Session, SessionParams, StreamState, open_session
from muxstream.sim import RunConfig, run

__all__ = [
    "HighlightParams",
    "HighlightState",
    "InputUnit",
    "InterruptParams",
    "KVCache",
    "Model",
    "ModelConfig",
    "RunConfig",
    "SegmentKind",
    "Session",
    "SessionParams",
    "StreamState",
    "build_model",
    "forward",
    "open_session",
    "run",
    "start_detect",
    "stop_detect",
]

from .pipeline import (
    DEFAULT_PREAMBLE,
    DEFAULT_SOURCE_TIMEOUT_MS,
    EVENT_KINDS,
    ChatPipeline,
    HttpSource,
    LocalSource,
    PipelineConfig,
    StageTimings,
    StreamEvent,
    build_query,
    chunk_to_wire,
    fan_out_search,
    wire_to_scored,
)
from .service import build_chat_app, build_source_app, render_sse

__all__ = [
    "DEFAULT_PREAMBLE",
    "DEFAULT_SOURCE_TIMEOUT_MS",
    "EVENT_KINDS",
    "ChatPipeline",
    "HttpSource",
    "LocalSource",
    "PipelineConfig",
    "StageTimings",
    "StreamEvent",
    "build_query",
    "build_chat_app",
    "build_source_app",
    "chunk_to_wire",
    "fan_out_search",
    "render_sse",
    "wire_to_scored",
]

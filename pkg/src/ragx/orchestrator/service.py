"""HTTP front for the chat pipeline and for single-shard search.

The chat app streams turns as server-sent events: one ``event:`` line
naming the kind, one ``data:`` line of compact JSON carrying the seq
number and payload. The source app exposes a shard to remote
orchestrators with the same wire schema the fan-out client reads.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from ..backends import GenParams
from ..chunker import utc_now_ms
from ..index_store import IndexShard
from ..prompt_budget import ChatMessage
from ..retrieval import Bm25Params, search_shard
from .pipeline import ChatPipeline, StreamEvent, chunk_to_wire

SSE_MEDIA_TYPE = "text/event-stream"


def render_sse(event: StreamEvent) -> str:
    data = json.dumps({"seq": event.seq, **event.payload}, separators=(",", ":"))
    return f"event: {event.kind}\ndata: {data}\n\n"


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=400)


def build_source_app(
    shard: IndexShard,
    embedder,
    params: Bm25Params | None = None,
    k_rrf: int = 60,
) -> FastAPI:
    app = FastAPI(title="ragx-source")
    bm25 = params or Bm25Params()

    @app.post("/v1/search")
    async def search(request: Request):
        try:
            body = await request.json()
        except ValueError:
            return _bad_request("body must be JSON")
        if not isinstance(body, dict):
            return _bad_request("body must be a JSON object")
        query = body.get("query")
        top_k = body.get("top_k", 3)
        if not isinstance(query, str) or not query.strip():
            return _bad_request("query must be a non-empty string")
        if not isinstance(top_k, int) or isinstance(top_k, bool) or top_k < 1:
            return _bad_request("top_k must be a positive integer")
        entries = search_shard(query, shard, embedder, top_k, params=bm25, k_rrf=k_rrf)
        return {"chunks": [chunk_to_wire(e) for e in entries]}

    @app.get("/health")
    async def health():
        return {"status": "ok", "shard_id": shard.shard_id, "chunks": len(shard)}

    return app


def build_chat_app(pipeline: ChatPipeline, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="ragx-chat")

    @app.post("/v1/chat")
    async def chat(request: Request):
        try:
            body = await request.json()
        except ValueError:
            return _bad_request("body must be JSON")
        if not isinstance(body, dict):
            return _bad_request("body must be a JSON object")
        raw_messages = body.get("messages")
        if not isinstance(raw_messages, list) or not raw_messages:
            return _bad_request("messages must be a non-empty array")
        messages = []
        for i, item in enumerate(raw_messages):
            if not isinstance(item, dict):
                return _bad_request(f"messages[{i}] must be an object")
            role = item.get("role")
            content = item.get("content")
            if not isinstance(role, str) or not isinstance(content, str):
                return _bad_request(f"messages[{i}] needs string role and content")
            try:
                messages.append(ChatMessage(role=role, content=content, at=utc_now_ms()))
            except ValueError as exc:
                return _bad_request(f"messages[{i}]: {exc}")
        options = body.get("options") or {}
        if not isinstance(options, dict):
            return _bad_request("options must be an object")
        params = GenParams(
            max_tokens=options.get("max_tokens"),
            temperature=float(options.get("temperature", 0.0)),
        )

        def stream():
            for event in pipeline.handle_chat(messages, params):
                yield render_sse(event)

        return StreamingResponse(stream(), media_type=SSE_MEDIA_TYPE)

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app

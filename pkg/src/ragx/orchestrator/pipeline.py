"""Chat turn orchestration: retrieve, rerank, call tools, generate.

One turn is a generator of StreamEvent values so transports can forward
progress as it happens. Event order is fixed: token events precede the
chunks event, which precedes timing, and exactly one done event comes
last; error events may appear anywhere before done. The chunks event
lists exactly the context the answer prompt contained, so a client can
audit every citation.

Retrieval fans out over several sources concurrently; an unreachable
source degrades the turn with a recoverable error event instead of
failing it. Rerank failures fall back to fused order the same way.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterator, Protocol

import httpx

from ..backends import GenParams, StreamDone, StreamError, collect_stream
from ..chunker import Chunk
from ..index_store import IndexShard
from ..mcp import ToolCall, ToolDescriptor, ToolResult, parse_tool_calls, tool_result_to_chunk
from ..prompt_budget import (
    Budget,
    ChatMessage,
    PromptOverflowError,
    PromptParts,
    assemble,
    merge_answer_parts,
)
from ..rerank import RerankConfig, RerankError, rerank_reduce
from ..retrieval import Bm25Params, ScoredChunk, dedup, search_shard

EVENT_KINDS = ("token", "tool_call", "tool_result", "chunks", "timing", "error", "done")

DEFAULT_SOURCE_TIMEOUT_MS = 2000

DEFAULT_PREAMBLE = (
    "You are a retrieval-grounded assistant. Answer from the numbered context "
    "entries and cite them as [n]. Say so when the context does not contain "
    "the answer."
)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass
class StreamEvent:
    kind: str
    payload: dict
    seq: int


@dataclass
class StageTimings:
    retrieve_ms: float = 0.0
    rerank_ms: float = 0.0
    tool_ms: float = 0.0
    generate_first_token_ms: float = 0.0
    total_ms: float = 0.0

    def as_payload(self) -> dict:
        return {
            "retrieve_ms": round(self.retrieve_ms, 3),
            "rerank_ms": round(self.rerank_ms, 3),
            "tool_ms": round(self.tool_ms, 3),
            "generate_first_token_ms": round(self.generate_first_token_ms, 3),
            "total_ms": round(self.total_ms, 3),
        }


@dataclass
class PipelineConfig:
    top_k: int = 3
    candidate_depth: int = 12
    k_rrf: int = 60
    bm25: Bm25Params = field(default_factory=Bm25Params)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    budget: Budget = field(default_factory=lambda: Budget(8192, 512))
    query_history_messages: int = 1
    source_timeout_ms: int = DEFAULT_SOURCE_TIMEOUT_MS
    system_preamble: str = DEFAULT_PREAMBLE

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if self.candidate_depth < self.top_k:
            raise ValueError("candidate_depth must be at least top_k")
        if self.query_history_messages < 1:
            raise ValueError("query_history_messages must be at least 1")


class SearchSource(Protocol):
    name: str

    def search(self, query: str, top_k: int) -> list[ScoredChunk]: ...


class LocalSource:
    """Search an in-process shard."""

    def __init__(
        self,
        shard: IndexShard,
        embedder,
        params: Bm25Params | None = None,
        k_rrf: int = 60,
        name: str | None = None,
    ):
        self.shard = shard
        self.embedder = embedder
        self.params = params or Bm25Params()
        self.k_rrf = k_rrf
        self.name = name or shard.shard_id

    def search(self, query: str, top_k: int) -> list[ScoredChunk]:
        return search_shard(
            query, self.shard, self.embedder, top_k, params=self.params, k_rrf=self.k_rrf
        )


class HttpSource:
    """Search a remote shard over its /v1/search endpoint."""

    def __init__(self, base_url: str, timeout_ms: int = DEFAULT_SOURCE_TIMEOUT_MS, name: str | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout_ms = timeout_ms
        self.name = name or self.base_url

    def search(self, query: str, top_k: int) -> list[ScoredChunk]:
        response = httpx.post(
            f"{self.base_url}/v1/search",
            json={"query": query, "top_k": top_k},
            timeout=self.timeout_ms / 1000.0,
        )
        response.raise_for_status()
        payload = response.json()
        return [wire_to_scored(item) for item in payload["chunks"]]


def chunk_to_wire(entry: ScoredChunk) -> dict:
    return {
        "id": entry.chunk.id,
        "source_id": entry.chunk.source_id,
        "uri": entry.chunk.uri,
        "heading_path": list(entry.chunk.heading_path),
        "body": entry.chunk.body,
        "token_count": entry.chunk.token_count,
        "bm25": entry.bm25,
        "cosine": entry.cosine,
        "fused": entry.fused,
        "rerank": entry.rerank,
    }


def wire_to_scored(item: dict) -> ScoredChunk:
    chunk = Chunk(
        id=item["id"],
        source_id=item["source_id"],
        uri=item["uri"],
        heading_path=list(item["heading_path"]),
        body=item["body"],
        token_count=int(item["token_count"]),
        created_at=_EPOCH,
    )
    return ScoredChunk(
        chunk=chunk,
        source_id=chunk.source_id,
        bm25=float(item.get("bm25", 0.0)),
        cosine=float(item.get("cosine", 0.0)),
        fused=float(item.get("fused", 0.0)),
        rerank=item.get("rerank"),
    )


def fan_out_search(
    query: str, sources: list[SearchSource], depth: int
) -> tuple[list[ScoredChunk], list[str]]:
    """Query every source concurrently; merge by fused score, dedup by id.

    Failed sources contribute nothing and are reported as warnings. The
    merge is deterministic regardless of completion order.
    """
    results: list[ScoredChunk] = []
    warnings: list[str] = []
    if not sources:
        return results, warnings
    with ThreadPoolExecutor(max_workers=len(sources)) as pool:
        futures = {pool.submit(src.search, query, depth): src for src in sources}
        for future in as_completed(futures):
            src = futures[future]
            try:
                results.extend(future.result())
            except Exception as exc:
                warnings.append(f"source {src.name} failed: {exc}")
    results.sort(key=lambda s: (-s.fused, s.chunk.id))
    return dedup(results)[:depth], warnings


def build_query(messages: list[ChatMessage], history_messages: int) -> str:
    user_turns = [m.content for m in messages if m.role == "user"]
    return "\n".join(user_turns[-history_messages:])


class ChatPipeline:
    """Holds the wiring for chat turns: sources, backends, and tools."""

    def __init__(
        self,
        cfg: PipelineConfig,
        sources: list[SearchSource],
        scorer,
        generator,
        tools: list[ToolDescriptor] | None = None,
        tool_invoker=None,
    ):
        self.cfg = cfg
        self.sources = sources
        self.scorer = scorer
        self.generator = generator
        self.tools = tools or []
        self._invoke = tool_invoker

    def invoke_tool(self, call: ToolCall) -> ToolResult:
        if self._invoke is None:
            return ToolResult(
                call.call_id, False, "no tool transport configured", _EPOCH
            )
        return self._invoke(call)

    def handle_chat(
        self, messages: list[ChatMessage], params: GenParams | None = None
    ) -> Iterator[StreamEvent]:
        seq = itertools.count()

        def ev(kind: str, **payload) -> StreamEvent:
            return StreamEvent(kind=kind, payload=payload, seq=next(seq))

        timings = StageTimings()
        t_start = time.perf_counter()
        try:
            if not messages or messages[-1].role != "user":
                yield ev("error", message="the last message must come from the user", recoverable=False)
                timings.total_ms = (time.perf_counter() - t_start) * 1000
                yield ev("timing", **timings.as_payload())
                yield ev("done")
                return
            latest = messages[-1]
            history = messages[:-1]
            query = build_query(messages, self.cfg.query_history_messages)

            t0 = time.perf_counter()
            candidates, warnings = fan_out_search(query, self.sources, self.cfg.candidate_depth)
            timings.retrieve_ms = (time.perf_counter() - t0) * 1000
            for warning in warnings:
                yield ev("error", message=warning, recoverable=True)
            if self.sources and len(warnings) == len(self.sources):
                yield ev(
                    "error",
                    message="all sources failed; answering without retrieved context",
                    recoverable=True,
                )

            t0 = time.perf_counter()
            try:
                top = rerank_reduce(query, candidates, self.cfg.rerank, self.scorer)
            except RerankError as exc:
                yield ev(
                    "error",
                    message=f"rerank failed, falling back to fused order: {exc}",
                    recoverable=True,
                )
                top = candidates[: self.cfg.rerank.target_k]
            timings.rerank_ms = (time.perf_counter() - t0) * 1000

            base_parts = PromptParts(
                system_preamble=self.cfg.system_preamble,
                chunks=top,
                tool_descriptors=self.tools,
                history=history,
                latest_user=latest,
            )

            tool_chunks: list[Chunk] = []
            if self.tools:
                t0 = time.perf_counter()
                tool_prompt = assemble(base_parts, self.cfg.budget).prompt
                text, _ = collect_stream(self.generator.generate_stream(tool_prompt, params))
                calls, diagnostics = parse_tool_calls(text, self.tools)
                for diag in diagnostics:
                    yield ev("error", message=f"tool call rejected: {diag}", recoverable=True)
                for call in calls:
                    yield ev(
                        "tool_call",
                        call_id=call.call_id,
                        endpoint_name=call.endpoint_name,
                        tool_name=call.tool_name,
                        arguments=call.arguments,
                    )
                    result = self.invoke_tool(call)
                    yield ev(
                        "tool_result",
                        call_id=result.call_id,
                        ok=result.ok,
                        content_text=result.content_text,
                        raised_at=result.raised_at.isoformat(),
                    )
                    tool_chunks.append(tool_result_to_chunk(result, call))
                timings.tool_ms = (time.perf_counter() - t0) * 1000

            merged = merge_answer_parts(base_parts, tool_chunks)
            assembled = assemble(merged, self.cfg.budget)
            final_context = merged.chunks[: assembled.retained_chunks]

            t0 = time.perf_counter()
            finish: StreamDone | None = None
            for item in self.generator.generate_stream(assembled.prompt, params):
                if isinstance(item, StreamDone):
                    finish = item
                    break
                if timings.generate_first_token_ms == 0.0:
                    timings.generate_first_token_ms = (time.perf_counter() - t0) * 1000
                yield ev("token", text=item)
            if finish is None:
                raise StreamError("generator stream ended without a completion marker")

            yield ev("chunks", chunks=[chunk_to_wire(e) for e in final_context])
        except PromptOverflowError as exc:
            yield ev("error", message=f"prompt cannot fit the budget: {exc}", recoverable=False)
        except StreamError as exc:
            yield ev("error", message=f"generation failed: {exc}", recoverable=False)
        except Exception as exc:  # last resort: report, never hang the stream
            yield ev("error", message=f"chat turn failed: {exc}", recoverable=False)
        timings.total_ms = (time.perf_counter() - t_start) * 1000
        yield ev("timing", **timings.as_payload())
        yield ev("done")

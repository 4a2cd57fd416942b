"""JSON-RPC tool client, tool-call parsing, and tool-result conversion.

Tools live behind HTTP endpoints speaking JSON-RPC 2.0 (initialize,
tools/list, tools/call). Discovery failures raise; invocation failures
of any kind fold into an ok=false ToolResult so one bad tool cannot
abort a chat turn. Generator output announces calls as fenced
``tool_call`` blocks holding a JSON object; parsing never throws and
reports malformed blocks as diagnostics instead.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime

import httpx
import jsonschema

from ..chunker import Chunk, make_chunk_id, utc_now_ms
from ..tokenization import count_tokens

DEFAULT_TIMEOUT_MS = 10_000
PROTOCOL_VERSION = "2025-03-26"

_TOOL_CALL_BLOCK_RE = re.compile(r"^```tool_call\n(.*?)\n```", re.MULTILINE | re.DOTALL)


class McpError(Exception):
    """Base failure talking to a tool endpoint."""


class McpTransportError(McpError):
    """The endpoint could not be reached or timed out."""


class McpProtocolError(McpError):
    """The endpoint answered with an error or a malformed response."""


@dataclass
class McpEndpoint:
    name: str
    base_url: str
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    bearer_token: str | None = None


@dataclass
class ToolDescriptor:
    endpoint_name: str
    tool_name: str
    description: str
    input_schema: dict


@dataclass
class ToolCall:
    call_id: str
    endpoint_name: str
    tool_name: str
    arguments: dict


@dataclass
class ToolResult:
    call_id: str
    ok: bool
    content_text: str
    raised_at: datetime


class McpClient:
    """One endpoint, one lazily initialized session."""

    def __init__(self, endpoint: McpEndpoint, transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        headers = {}
        if endpoint.bearer_token:
            headers["authorization"] = f"Bearer {endpoint.bearer_token}"
        self._http = httpx.Client(
            timeout=endpoint.timeout_ms / 1000.0,
            headers=headers,
            transport=transport,
        )
        self._initialized = False
        self._next_id = 0

    def close(self) -> None:
        self._http.close()

    def _rpc(self, method: str, params: dict) -> dict:
        self._next_id += 1
        request = {
            "jsonrpc": "2.0",
            "id": self._next_id,
            "method": method,
            "params": params,
        }
        try:
            response = self._http.post(self.endpoint.base_url, json=request)
            response.raise_for_status()
            body = response.json()
        except httpx.HTTPStatusError as exc:
            raise McpProtocolError(
                f"{self.endpoint.name}: {method} returned HTTP {exc.response.status_code}"
            ) from exc
        except httpx.HTTPError as exc:
            raise McpTransportError(f"{self.endpoint.name}: {method}: {exc}") from exc
        except ValueError as exc:
            raise McpProtocolError(f"{self.endpoint.name}: {method}: invalid JSON body") from exc
        if not isinstance(body, dict):
            raise McpProtocolError(f"{self.endpoint.name}: {method}: response is not an object")
        if "error" in body:
            err = body["error"]
            raise McpProtocolError(
                f"{self.endpoint.name}: {method}: {err.get('message', err)!s}"
                if isinstance(err, dict)
                else f"{self.endpoint.name}: {method}: {err!s}"
            )
        if "result" not in body:
            raise McpProtocolError(f"{self.endpoint.name}: {method}: response lacks a result")
        return body["result"]

    def _ensure_initialized(self) -> None:
        if self._initialized:
            return
        self._rpc(
            "initialize",
            {
                "protocolVersion": PROTOCOL_VERSION,
                "clientInfo": {"name": "ragx", "version": "0.1.0"},
                "capabilities": {},
            },
        )
        self._initialized = True

    def list_tools(self) -> list[ToolDescriptor]:
        self._ensure_initialized()
        result = self._rpc("tools/list", {})
        tools = result.get("tools")
        if not isinstance(tools, list):
            raise McpProtocolError(f"{self.endpoint.name}: tools/list lacks a tools array")
        out = []
        for item in tools:
            if not isinstance(item, dict) or not isinstance(item.get("name"), str):
                raise McpProtocolError(
                    f"{self.endpoint.name}: tools/list entry without a name: {item!r}"
                )
            schema = item.get("inputSchema")
            out.append(
                ToolDescriptor(
                    endpoint_name=self.endpoint.name,
                    tool_name=item["name"],
                    description=item.get("description", ""),
                    input_schema=schema if isinstance(schema, dict) else {"type": "object"},
                )
            )
        return out

    def call_tool(self, call: ToolCall, clock=utc_now_ms) -> ToolResult:
        try:
            self._ensure_initialized()
            result = self._rpc(
                "tools/call", {"name": call.tool_name, "arguments": call.arguments}
            )
        except McpError as exc:
            return ToolResult(call.call_id, False, str(exc), clock())
        parts = []
        for item in result.get("content", []):
            if isinstance(item, dict) and item.get("type") == "text":
                parts.append(str(item.get("text", "")))
        return ToolResult(
            call_id=call.call_id,
            ok=not result.get("isError", False),
            content_text="\n".join(parts),
            raised_at=clock(),
        )


def list_tools(endpoint: McpEndpoint) -> list[ToolDescriptor]:
    client = McpClient(endpoint)
    try:
        return client.list_tools()
    finally:
        client.close()


def call_tool(endpoint: McpEndpoint, call: ToolCall) -> ToolResult:
    client = McpClient(endpoint)
    try:
        return client.call_tool(call)
    finally:
        client.close()


def parse_tool_calls(
    generator_output: str, known: list[ToolDescriptor]
) -> tuple[list[ToolCall], list[str]]:
    """Extract tool calls from fenced tool_call blocks.

    Blocks that are not valid JSON objects, name an unknown tool, or
    carry arguments failing the tool's schema become diagnostics rather
    than calls. Call ids are deterministic within one parse.
    """
    by_name: dict[str, ToolDescriptor] = {}
    for tool in known:
        by_name.setdefault(tool.tool_name, tool)
    calls: list[ToolCall] = []
    diagnostics: list[str] = []
    for n, match in enumerate(_TOOL_CALL_BLOCK_RE.finditer(generator_output), start=1):
        raw = match.group(1)
        try:
            payload = json.loads(raw)
        except ValueError:
            diagnostics.append(f"block {n}: not valid JSON")
            continue
        if not isinstance(payload, dict) or not isinstance(payload.get("tool"), str):
            diagnostics.append(f"block {n}: expected an object with a tool name")
            continue
        name = payload["tool"]
        tool = by_name.get(name)
        if tool is None:
            diagnostics.append(f"block {n}: unknown tool {name!r}")
            continue
        arguments = payload.get("arguments", {})
        if not isinstance(arguments, dict):
            diagnostics.append(f"block {n}: arguments for {name!r} are not an object")
            continue
        try:
            jsonschema.validate(arguments, tool.input_schema)
        except jsonschema.ValidationError as exc:
            diagnostics.append(f"block {n}: arguments for {name!r} rejected: {exc.message}")
            continue
        except jsonschema.SchemaError as exc:
            diagnostics.append(f"block {n}: schema for {name!r} is invalid: {exc.message}")
            continue
        calls.append(
            ToolCall(
                call_id=f"call-{len(calls) + 1}",
                endpoint_name=tool.endpoint_name,
                tool_name=name,
                arguments=arguments,
            )
        )
    return calls, diagnostics


def tool_result_to_chunk(result: ToolResult, call: ToolCall) -> Chunk:
    """Wrap a tool result as a context chunk for the answer prompt."""
    source_id = f"mcp:{call.endpoint_name}"
    heading_path = [call.tool_name]
    body = result.content_text
    return Chunk(
        id=make_chunk_id(source_id, heading_path, body),
        source_id=source_id,
        uri=f"mcp:{call.endpoint_name}/{call.tool_name}",
        heading_path=heading_path,
        body=body,
        token_count=count_tokens(body),
        created_at=result.raised_at,
    )


@dataclass
class McpRouter:
    """Clients for several endpoints plus their merged tool catalog."""

    clients: dict[str, McpClient] = field(default_factory=dict)
    tools: list[ToolDescriptor] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def connect(cls, endpoints: list[McpEndpoint]) -> "McpRouter":
        """Discover tools on every endpoint; unreachable ones are skipped."""
        router = cls()
        for endpoint in endpoints:
            client = McpClient(endpoint)
            try:
                tools = client.list_tools()
            except McpError as exc:
                router.warnings.append(f"tool endpoint {endpoint.name} skipped: {exc}")
                client.close()
                continue
            router.clients[endpoint.name] = client
            router.tools.extend(tools)
        return router

    def invoke(self, call: ToolCall, clock=utc_now_ms) -> ToolResult:
        client = self.clients.get(call.endpoint_name)
        if client is None:
            return ToolResult(
                call.call_id, False, f"no endpoint named {call.endpoint_name!r}", clock()
            )
        return client.call_tool(call, clock=clock)

    def close(self) -> None:
        for client in self.clients.values():
            client.close()

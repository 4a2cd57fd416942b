"""A small JSON-RPC tool server for local runs and tests.

Serves four tools: create_issue and echo for the happy path, slow_echo
for timeout drills, and fail for error folding. State is one counter,
so issue numbers are predictable within a server lifetime.
"""

from __future__ import annotations

import argparse
import json
import time

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .client import PROTOCOL_VERSION

TOOLS = [
    {
        "name": "create_issue",
        "description": "File a tracker issue with a title and optional description.",
        "inputSchema": {
            "type": "object",
            "properties": {
                "title": {"type": "string"},
                "description": {"type": "string"},
            },
            "required": ["title"],
            "additionalProperties": False,
        },
    },
    {
        "name": "echo",
        "description": "Echo the given arguments back as key=value text.",
        "inputSchema": {"type": "object", "additionalProperties": True},
    },
    {
        "name": "slow_echo",
        "description": "Echo after a configurable delay.",
        "inputSchema": {"type": "object", "additionalProperties": True},
    },
    {
        "name": "fail",
        "description": "Always reports a tool error.",
        "inputSchema": {"type": "object", "additionalProperties": True},
    },
]


def _text_result(text: str, is_error: bool = False) -> dict:
    return {"content": [{"type": "text", "text": text}], "isError": is_error}


def build_app(slow_seconds: float = 3.0) -> FastAPI:
    app = FastAPI()
    state = {"issues": 0}

    def run_tool(name: str, arguments: dict) -> dict:
        if name == "create_issue":
            state["issues"] += 1
            return _text_result(f"Created issue #{state['issues']}: {arguments['title']}")
        if name == "echo":
            pairs = ", ".join(f"{k}={arguments[k]}" for k in sorted(arguments))
            return _text_result(pairs)
        if name == "slow_echo":
            time.sleep(slow_seconds)
            pairs = ", ".join(f"{k}={arguments[k]}" for k in sorted(arguments))
            return _text_result(pairs)
        if name == "fail":
            return _text_result("simulated tool failure", is_error=True)
        return _text_result(f"unknown tool {name!r}", is_error=True)

    @app.post("/")
    async def rpc(request: Request) -> JSONResponse:
        body = await request.json()
        req_id = body.get("id")
        method = body.get("method")

        def ok(result: dict) -> JSONResponse:
            return JSONResponse({"jsonrpc": "2.0", "id": req_id, "result": result})

        def err(code: int, message: str) -> JSONResponse:
            return JSONResponse(
                {"jsonrpc": "2.0", "id": req_id, "error": {"code": code, "message": message}}
            )

        if method == "initialize":
            return ok(
                {
                    "protocolVersion": PROTOCOL_VERSION,
                    "serverInfo": {"name": "ragx-stub-tools", "version": "0.1.0"},
                    "capabilities": {"tools": {}},
                }
            )
        if method == "tools/list":
            return ok({"tools": TOOLS})
        if method == "tools/call":
            params = body.get("params") or {}
            name = params.get("name")
            arguments = params.get("arguments") or {}
            if not any(t["name"] == name for t in TOOLS):
                return err(-32602, f"unknown tool {name!r}")
            try:
                return ok(run_tool(name, arguments))
            except KeyError as exc:
                return err(-32602, f"missing argument {exc}")
        return err(-32601, f"method {method!r} not found")

    return app


def main(argv: list[str] | None = None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(description="Run the stub tool server.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8765)
    parser.add_argument("--slow-seconds", type=float, default=3.0)
    args = parser.parse_args(argv)
    uvicorn.run(build_app(args.slow_seconds), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

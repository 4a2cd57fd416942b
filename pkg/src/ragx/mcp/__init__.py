from .client import (
    DEFAULT_TIMEOUT_MS,
    McpClient,
    McpEndpoint,
    McpError,
    McpProtocolError,
    McpRouter,
    McpTransportError,
    ToolCall,
    ToolDescriptor,
    ToolResult,
    call_tool,
    list_tools,
    parse_tool_calls,
    tool_result_to_chunk,
)

__all__ = [
    "DEFAULT_TIMEOUT_MS",
    "McpClient",
    "McpEndpoint",
    "McpError",
    "McpProtocolError",
    "McpRouter",
    "McpTransportError",
    "ToolCall",
    "ToolDescriptor",
    "ToolResult",
    "call_tool",
    "list_tools",
    "parse_tool_calls",
    "tool_result_to_chunk",
]

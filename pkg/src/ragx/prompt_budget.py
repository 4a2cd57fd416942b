"""Deterministic prompt assembly under a hard token budget.

The prompt template is fixed: system preamble, a numbered context
section, an optional tools section, then the conversation with the
latest user message last. Token accounting is exact because the
tokenizer is additive across whitespace joins; an 8-token margin per
section covers template glue. When the budget is tight, history is
dropped first (oldest first, keeping a contiguous newest suffix) and
context chunks second (lowest ranked first). The preamble, tools, and
latest user message are never dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime

from .chunker import Chunk
from .mcp import ToolDescriptor
from .retrieval import ScoredChunk
from .tokenization import count_tokens

SECTION_OVERHEAD_TOKENS = 8
ROLES = ("system", "user", "assistant", "tool")

TOOL_CALL_INSTRUCTION = (
    "Call a tool by emitting a fenced code block tagged tool_call containing "
    '{"tool": "<name>", "arguments": {...}}. Otherwise answer directly.'
)

CONTEXT_HEADER = "## Context"
TOOLS_HEADER = "## Tools"
CONVERSATION_HEADER = "## Conversation"


class PromptOverflowError(Exception):
    """The irreducible prompt exceeds the available budget."""


@dataclass
class ChatMessage:
    role: str
    content: str
    at: datetime

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass
class Budget:
    context_tokens: int
    reserved_generation_tokens: int

    def __post_init__(self) -> None:
        if self.reserved_generation_tokens < 0:
            raise ValueError("reserved_generation_tokens must be non-negative")
        if self.context_tokens <= self.reserved_generation_tokens:
            raise ValueError("context_tokens must exceed reserved_generation_tokens")

    @property
    def available_tokens(self) -> int:
        return self.context_tokens - self.reserved_generation_tokens


@dataclass
class PromptParts:
    system_preamble: str
    chunks: list[ScoredChunk]
    tool_descriptors: list[ToolDescriptor] = field(default_factory=list)
    history: list[ChatMessage] = field(default_factory=list)
    latest_user: ChatMessage | None = None


@dataclass
class AssembledPrompt:
    prompt: str
    retained_history: int
    retained_chunks: int


def _one_line(text: str) -> str:
    return " ".join(text.split())


def context_entry(index: int, entry: ScoredChunk) -> str:
    """Render one context chunk as a single numbered line."""
    return f"[{index}] ({entry.chunk.uri}) {_one_line(entry.chunk.body)}"


def wrap_tool_chunk(chunk: Chunk) -> ScoredChunk:
    """Lift a tool-result chunk into the scored shape context lists use."""
    return ScoredChunk(chunk=chunk, source_id=chunk.source_id)


def _tool_lines(tools: list[ToolDescriptor]) -> list[str]:
    lines = []
    for tool in tools:
        lines.append(f"- {tool.tool_name} ({tool.endpoint_name}): {tool.description}")
        schema = json.dumps(tool.input_schema, sort_keys=True, separators=(",", ":"))
        lines.append(f"  parameters: {schema}")
    lines.append(TOOL_CALL_INSTRUCTION)
    return lines


def _message_line(message: ChatMessage) -> str:
    return f"{message.role}: {_one_line(message.content)}"


def assemble(parts: PromptParts, budget: Budget) -> AssembledPrompt:
    """Build the prompt, shedding history then chunks to fit the budget.

    Retention is monotone in the budget: a larger budget never retains
    less. History retention is all-suffix: the newest messages that fit,
    nothing older.
    """
    if parts.latest_user is None:
        raise ValueError("a latest user message is required")
    if parts.latest_user.role != "user":
        raise ValueError("the latest message must have the user role")

    available = budget.available_tokens
    preamble = parts.system_preamble.strip()

    entry_lines = [context_entry(i, e) for i, e in enumerate(parts.chunks, start=1)]
    entry_costs = [count_tokens(line) for line in entry_lines]
    tool_lines = _tool_lines(parts.tool_descriptors) if parts.tool_descriptors else []
    latest_line = _message_line(parts.latest_user)
    history_lines = [_message_line(m) for m in parts.history]
    history_costs = [count_tokens(line) for line in history_lines]

    sections = 2  # context and conversation are always present
    if preamble:
        sections += 1
    if tool_lines:
        sections += 1

    core = sections * SECTION_OVERHEAD_TOKENS
    core += count_tokens(preamble)
    core += count_tokens(CONTEXT_HEADER) + sum(entry_costs)
    if tool_lines:
        core += count_tokens(TOOLS_HEADER) + sum(count_tokens(l) for l in tool_lines)
    core += count_tokens(CONVERSATION_HEADER) + count_tokens(latest_line)

    retained_chunks = len(parts.chunks)
    retained_history = 0
    if core > available:
        while retained_chunks > 0 and core > available:
            retained_chunks -= 1
            core -= entry_costs[retained_chunks]
        if core > available:
            raise PromptOverflowError(
                f"prompt needs {core} tokens with no context or history; "
                f"only {available} are available"
            )
    else:
        total = core
        for cost in reversed(history_costs):
            if total + cost > available:
                break
            total += cost
            retained_history += 1

    kept_history = history_lines[len(history_lines) - retained_history :]
    pieces = []
    if preamble:
        pieces.append(preamble)
    pieces.append("\n".join([CONTEXT_HEADER] + entry_lines[:retained_chunks]))
    if tool_lines:
        pieces.append("\n".join([TOOLS_HEADER] + tool_lines))
    pieces.append("\n".join([CONVERSATION_HEADER] + kept_history + [latest_line]))
    prompt = "\n\n".join(pieces)
    return AssembledPrompt(
        prompt=prompt,
        retained_history=retained_history,
        retained_chunks=retained_chunks,
    )


def merge_answer_parts(parts: PromptParts, tool_chunks: list[Chunk]) -> PromptParts:
    """Append tool-result chunks to the context and drop the tool list."""
    merged = parts.chunks + [wrap_tool_chunk(c) for c in tool_chunks]
    return replace(parts, chunks=merged, tool_descriptors=[])


def render_tool_prompt(parts: PromptParts, budget: Budget) -> str:
    """Prompt for the tool-selection pass; tools must be declared."""
    return assemble(parts, budget).prompt


def render_answer_prompt(
    parts: PromptParts, tool_chunks: list[Chunk], budget: Budget
) -> str:
    """Prompt for the answer pass with tool results folded into context."""
    return assemble(merge_answer_parts(parts, tool_chunks), budget).prompt

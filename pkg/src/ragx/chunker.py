"""Token-bounded chunking of parsed sections.

Every chunk body starts with the rendered heading stack of its section
so the slice stays in context, followed by a blank line and a slice of
block content. Oversize blocks are split at kind-specific boundaries:
sentences then words for paragraphs, rows for tables (header repeated
in every part), items for lists, lines for code. Token accounting uses
the shared deterministic tokenizer, so counts are exact and additive.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable

from .ingest import Block, Section
from .tokenization import count_tokens

DEFAULT_CHUNK_TOKENS = 350

_SEP = "\x1f"


class ChunkingError(Exception):
    """A block cannot be split to fit the configured token limit."""


@dataclass
class ChunkLimit:
    max_tokens: int = DEFAULT_CHUNK_TOKENS

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass
class Provenance:
    source_id: str
    uri: str


@dataclass
class Chunk:
    id: str
    source_id: str
    uri: str
    heading_path: list[str]
    body: str
    token_count: int
    created_at: datetime


Clock = Callable[[], datetime]


def utc_now_ms() -> datetime:
    """Current UTC time truncated to millisecond precision.

    Millisecond truncation keeps timestamps exactly representable in the
    shard file's epoch-ms column, so save/load round-trips are identity.
    """
    now = datetime.now(timezone.utc)
    return now.replace(microsecond=now.microsecond // 1000 * 1000)


def make_chunk_id(source_id: str, heading_path: list[str], body: str) -> str:
    """Deterministic 64-hex content hash identifying a chunk."""
    material = source_id + _SEP + _SEP.join(heading_path) + _SEP + body
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


def render_heading_prefix(heading_path: list[tuple[int, str]]) -> str:
    return "\n".join("#" * level + " " + title for level, title in heading_path)


def chunk_content(chunk: Chunk) -> str:
    """The chunk body with its rendered heading prefix removed."""
    if not chunk.heading_path:
        return chunk.body
    return chunk.body.split("\n\n", 1)[1]


def split_sentences(text: str) -> list[str]:
    """Crude deterministic sentence segmentation.

    A boundary is a '.', '!' or '?' at line end, or followed by a space
    and an uppercase letter.
    """
    out: list[str] = []
    start = 0
    n = len(text)
    for i, ch in enumerate(text):
        if ch not in ".!?":
            continue
        j = i + 1
        boundary = (
            j >= n
            or text[j] == "\n"
            or (text[j] == " " and (j + 1 >= n or text[j + 1].isupper()))
        )
        if boundary:
            piece = text[start : i + 1].strip()
            if piece:
                out.append(piece)
            start = j
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


def chunk_section(
    section: Section,
    limit: ChunkLimit,
    provenance: Provenance,
    clock: Clock = utc_now_ms,
) -> list[Chunk]:
    """Split one section into chunks of at most ``limit.max_tokens`` tokens.

    Whole blocks of the same kind are packed together; a block that does
    not fit on its own is split at its kind's natural boundaries and its
    parts emitted as standalone chunks. Raises ChunkingError when even a
    minimal content unit cannot fit next to the heading prefix.
    """
    prefix = render_heading_prefix(section.heading_path)
    prefix_tokens = count_tokens(prefix)
    budget = limit.max_tokens - prefix_tokens
    titles = [title for _, title in section.heading_path]

    if not section.blocks:
        return []
    if budget <= 0:
        raise ChunkingError(
            f"chunk limit {limit.max_tokens} leaves no room after "
            f"{prefix_tokens}-token heading prefix {titles!r}"
        )

    contents: list[str] = []
    pending: list[str] = []
    pending_kind: str | None = None
    pending_tokens = 0

    def flush() -> None:
        nonlocal pending, pending_tokens, pending_kind
        if pending:
            contents.append("\n\n".join(pending))
        pending = []
        pending_kind = None
        pending_tokens = 0

    for block in section.blocks:
        block_tokens = count_tokens(block.text)
        if block_tokens <= budget:
            if pending_kind == block.kind and pending_tokens + block_tokens <= budget:
                pending.append(block.text)
                pending_tokens += block_tokens
            else:
                flush()
                pending = [block.text]
                pending_kind = block.kind
                pending_tokens = block_tokens
        else:
            flush()
            contents.extend(_split_oversize(block, budget))
    flush()

    chunks = []
    for content in contents:
        body = prefix + "\n\n" + content if prefix else content
        chunks.append(
            Chunk(
                id=make_chunk_id(provenance.source_id, titles, body),
                source_id=provenance.source_id,
                uri=provenance.uri,
                heading_path=titles,
                body=body,
                token_count=count_tokens(body),
                created_at=clock(),
            )
        )
    return chunks


def _split_oversize(block: Block, budget: int) -> list[str]:
    if block.kind == "paragraph":
        return _split_paragraph(block, budget)
    if block.kind == "table":
        return _split_table(block, budget)
    # Lists split at item lines, code at source lines.
    return _pack_lines(block.text.split("\n"), budget, "\n", block)


def _split_paragraph(block: Block, budget: int) -> list[str]:
    parts: list[str] = []
    pending: list[str] = []
    pending_tokens = 0

    def flush() -> None:
        nonlocal pending, pending_tokens
        if pending:
            parts.append(" ".join(pending))
        pending = []
        pending_tokens = 0

    for sentence in split_sentences(block.text):
        tokens = count_tokens(sentence)
        if tokens > budget:
            flush()
            parts.extend(_pack_lines(sentence.split(), budget, " ", block))
            continue
        if pending_tokens + tokens > budget:
            flush()
        pending.append(sentence)
        pending_tokens += tokens
    flush()
    return parts


def _split_table(block: Block, budget: int) -> list[str]:
    assert block.table_header is not None
    header_lines = block.table_header.split("\n")
    header_tokens = count_tokens(block.table_header)
    rows = block.text.split("\n")[len(header_lines) :]
    if header_tokens >= budget:
        raise ChunkingError(
            f"table header alone exceeds the {budget}-token content budget: "
            f"{_describe(block)}"
        )

    parts: list[str] = []
    pending: list[str] = []
    pending_tokens = header_tokens
    for row in rows:
        tokens = count_tokens(row)
        if header_tokens + tokens > budget:
            raise ChunkingError(
                f"table row does not fit the {budget}-token content budget "
                f"next to its header: {_describe(block)}"
            )
        if pending_tokens + tokens > budget:
            parts.append("\n".join(header_lines + pending))
            pending = []
            pending_tokens = header_tokens
        pending.append(row)
        pending_tokens += tokens
    parts.append("\n".join(header_lines + pending))
    return parts


def _pack_lines(units: list[str], budget: int, joiner: str, block: Block) -> list[str]:
    parts: list[str] = []
    pending: list[str] = []
    pending_tokens = 0
    for unit in units:
        tokens = count_tokens(unit)
        if tokens > budget:
            raise ChunkingError(
                f"{block.kind} unit of {tokens} tokens exceeds the "
                f"{budget}-token content budget: {_describe(block)}"
            )
        if pending and pending_tokens + tokens > budget:
            parts.append(joiner.join(pending))
            pending = []
            pending_tokens = 0
        pending.append(unit)
        pending_tokens += tokens
    if pending:
        parts.append(joiner.join(pending))
    return parts


def _describe(block: Block) -> str:
    head = block.text[:60].replace("\n", "\\n")
    return f"{block.kind} block starting {head!r}"

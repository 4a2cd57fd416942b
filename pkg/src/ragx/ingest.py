"""Artifact conversion, Markdown normalization, and structural parsing.

Raw artifacts (Markdown or plain text) are converted into normalized
Markdown, split by ATX headings into sections that remember their
heading stack, and each section body is classified into paragraph,
table, list, and code blocks. Fenced code is byte-preserved end to end.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

MEDIA_MARKDOWN = "markdown"
MEDIA_PLAIN_TEXT = "plain_text"


class IngestError(Exception):
    """Base class for ingestion failures."""


class ArtifactDecodeError(IngestError):
    """Artifact body is not valid UTF-8."""


class UnsupportedFormatError(IngestError):
    """No converter registered for the artifact's media kind."""


@dataclass
class RawArtifact:
    source_id: str
    uri: str
    media_kind: str
    body: bytes
    fetched_at: datetime


@dataclass
class MarkdownDoc:
    source_id: str
    uri: str
    text: str
    fetched_at: datetime


@dataclass
class Block:
    kind: str  # paragraph | table | list | code
    text: str
    table_header: str | None = None


@dataclass
class Section:
    heading_path: list[tuple[int, str]] = field(default_factory=list)
    blocks: list[Block] = field(default_factory=list)


_HEADING_RE = re.compile(r"^ ?(?P<hashes>#{1,6}) (?P<title>\S.*)$")
_FENCE_RE = re.compile(r"^\s*```")
_LIST_ITEM_RE = re.compile(r"^ ?(?:[-*+]|[0-9]+\.) ")
_SEPARATOR_CELL_RE = re.compile(r"^:?-+:?$")
_DASH_RUN_RE = re.compile(r"-{3,}")
_SPACE_RUN_RE = re.compile(r"[ \t]+")


def _is_pipe_row(line: str) -> bool:
    return line.lstrip().startswith("|")


def _is_separator_row(line: str) -> bool:
    stripped = line.strip()
    if "|" not in stripped or "-" not in stripped:
        return False
    cells = [c.strip() for c in stripped.strip("|").split("|")]
    return all(_SEPARATOR_CELL_RE.match(c) for c in cells if c) and any(cells)


def normalize_markdown(text: str) -> str:
    """Normalize Markdown text; idempotent, fenced code byte-preserved.

    Outside fences: space/tab runs collapse to one space, trailing
    whitespace is stripped, table separator dash runs collapse to
    ``---``, and runs of three or more blank lines collapse to one.
    Line endings become LF throughout.
    """
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    out: list[str] = []
    in_fence = False
    blank_run = 0

    def flush_blanks() -> None:
        nonlocal blank_run
        if blank_run:
            out.extend([""] * (1 if blank_run >= 3 else blank_run))
            blank_run = 0

    for line in lines:
        if in_fence:
            out.append(line)
            if _FENCE_RE.match(line):
                in_fence = False
            continue
        if _FENCE_RE.match(line):
            flush_blanks()
            out.append(line)
            in_fence = True
            continue
        line = _SPACE_RUN_RE.sub(" ", line).rstrip()
        if not line:
            blank_run += 1
            continue
        if _is_separator_row(line):
            line = _DASH_RUN_RE.sub("---", line)
        flush_blanks()
        out.append(line)

    return "\n".join(out).strip("\n")


def convert_to_markdown(artifact: RawArtifact) -> MarkdownDoc:
    """Convert a raw artifact to a normalized MarkdownDoc."""
    try:
        text = artifact.body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ArtifactDecodeError(
            f"artifact {artifact.source_id!r} is not valid UTF-8: {exc}"
        ) from exc
    converter = _CONVERTERS.get(artifact.media_kind)
    if converter is None:
        raise UnsupportedFormatError(
            f"no converter registered for media kind {artifact.media_kind!r}"
        )
    return MarkdownDoc(
        source_id=artifact.source_id,
        uri=artifact.uri,
        text=normalize_markdown(converter(text)),
        fetched_at=artifact.fetched_at,
    )


# Converters map decoded artifact text to Markdown; the result is always
# normalized afterwards. Plain text passes through: its blank-line
# separated paragraphs are already valid Markdown paragraphs.
_CONVERTERS: dict[str, Callable[[str], str]] = {
    MEDIA_MARKDOWN: lambda text: text,
    MEDIA_PLAIN_TEXT: lambda text: text,
}


def register_converter(media_kind: str, converter: Callable[[str], str]) -> None:
    """Register a converter for an additional media kind."""
    _CONVERTERS[media_kind] = converter


def parse_sections(doc: MarkdownDoc) -> list[Section]:
    """Split a normalized document into heading-scoped sections.

    Every ATX heading opens a section whose heading_path is the stack of
    enclosing headings; content before the first heading lands in a
    preamble section with an empty path. Headings inside fenced code are
    content, not structure.
    """
    sections: list[Section] = []
    stack: list[tuple[int, str]] = []
    body_lines: list[str] = []
    started = False
    in_fence = False

    def close_section() -> None:
        nonlocal body_lines
        body = "\n".join(body_lines).strip("\n")
        if started:
            sections.append(Section(heading_path=list(stack), blocks=split_blocks(body)))
        elif body:
            sections.append(Section(heading_path=[], blocks=split_blocks(body)))
        body_lines = []

    for line in doc.text.split("\n"):
        if in_fence:
            body_lines.append(line)
            if _FENCE_RE.match(line):
                in_fence = False
            continue
        if _FENCE_RE.match(line):
            body_lines.append(line)
            in_fence = True
            continue
        match = _HEADING_RE.match(line)
        if match:
            close_section()
            level = len(match.group("hashes"))
            while stack and stack[-1][0] >= level:
                stack.pop()
            stack.append((level, match.group("title").strip()))
            started = True
            continue
        body_lines.append(line)

    close_section()
    return sections


def split_blocks(section_body: str) -> list[Block]:
    """Classify a heading-free section body into typed blocks.

    Fenced regions become code blocks, contiguous pipe rows whose second
    row is a separator become tables, runs of list-marker lines become
    lists, and everything else becomes blank-line separated paragraphs.
    Ambiguous pipe rows (no separator) fall back to paragraph.
    """
    lines = section_body.split("\n") if section_body else []
    blocks: list[Block] = []
    paragraph: list[str] = []

    def close_paragraph() -> None:
        if paragraph:
            blocks.append(Block(kind="paragraph", text="\n".join(paragraph)))
            paragraph.clear()

    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        if not line.strip():
            close_paragraph()
            i += 1
            continue
        if _FENCE_RE.match(line):
            close_paragraph()
            fence = [line]
            i += 1
            while i < n:
                fence.append(lines[i])
                if _FENCE_RE.match(lines[i]):
                    i += 1
                    break
                i += 1
            blocks.append(Block(kind="code", text="\n".join(fence)))
            continue
        if _LIST_ITEM_RE.match(line):
            close_paragraph()
            items = []
            while i < n and _LIST_ITEM_RE.match(lines[i]):
                items.append(lines[i])
                i += 1
            blocks.append(Block(kind="list", text="\n".join(items)))
            continue
        if _is_pipe_row(line) and i + 1 < n and _is_separator_row(lines[i + 1]):
            close_paragraph()
            rows = []
            while i < n and _is_pipe_row(lines[i]):
                rows.append(lines[i])
                i += 1
            header = rows[0] + "\n" + rows[1]
            blocks.append(Block(kind="table", text="\n".join(rows), table_header=header))
            continue
        paragraph.append(line)
        i += 1

    close_paragraph()
    return blocks


def read_manifest(path: str | Path) -> list[RawArtifact]:
    """Load artifacts from a JSON-lines manifest.

    Each line holds {"source_id", "uri", "media_kind", "path"}; path is
    resolved relative to the manifest file.
    """
    manifest = Path(path)
    artifacts: list[RawArtifact] = []
    for lineno, raw in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            entry = json.loads(raw)
            source_id = entry["source_id"]
            uri = entry["uri"]
            media_kind = entry["media_kind"]
            body_path = manifest.parent / entry["path"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise IngestError(f"bad manifest line {lineno} in {manifest}: {exc}") from exc
        artifacts.append(
            RawArtifact(
                source_id=source_id,
                uri=uri,
                media_kind=media_kind,
                body=body_path.read_bytes(),
                fetched_at=_mtime_utc(body_path),
            )
        )
    return artifacts


def read_directory(root: str | Path) -> list[RawArtifact]:
    """Collect .md/.markdown/.txt files under a directory tree."""
    root = Path(root)
    kinds = {".md": MEDIA_MARKDOWN, ".markdown": MEDIA_MARKDOWN, ".txt": MEDIA_PLAIN_TEXT}
    artifacts = []
    for file in sorted(root.rglob("*")):
        kind = kinds.get(file.suffix.lower())
        if kind is None or not file.is_file():
            continue
        rel = file.relative_to(root).as_posix()
        artifacts.append(
            RawArtifact(
                source_id=rel,
                uri=file.as_uri(),
                media_kind=kind,
                body=file.read_bytes(),
                fetched_at=_mtime_utc(file),
            )
        )
    return artifacts


def _mtime_utc(path: Path) -> datetime:
    return datetime.fromtimestamp(path.stat().st_mtime, tz=timezone.utc)

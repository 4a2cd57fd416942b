"""Shared fixture builders: corpora, chunks, and a threaded test server."""

from __future__ import annotations

import random
import threading
import time
from contextlib import contextmanager
from datetime import datetime, timezone

import uvicorn

from ragx.chunker import (
    Chunk,
    ChunkLimit,
    Provenance,
    chunk_content,
    chunk_section,
    make_chunk_id,
)
from ragx.ingest import MEDIA_MARKDOWN, RawArtifact, convert_to_markdown, parse_sections
from ragx.retrieval import ScoredChunk
from ragx.tokenization import count_tokens

FIXED_AT = datetime(2024, 5, 2, 12, 0, 0, tzinfo=timezone.utc)


def fixed_clock() -> datetime:
    return FIXED_AT


def md_artifact(markdown: str, source_id: str = "doc", uri: str | None = None) -> RawArtifact:
    return RawArtifact(
        source_id=source_id,
        uri=uri or f"file:///{source_id}.md",
        media_kind=MEDIA_MARKDOWN,
        body=markdown.encode("utf-8"),
        fetched_at=FIXED_AT,
    )


def md_chunks(
    markdown: str, source_id: str = "doc", uri: str | None = None, limit: int = 350
) -> list[Chunk]:
    artifact = md_artifact(markdown, source_id, uri)
    doc = convert_to_markdown(artifact)
    chunks: list[Chunk] = []
    provenance = Provenance(source_id=artifact.source_id, uri=artifact.uri)
    for section in parse_sections(doc):
        chunks.extend(chunk_section(section, ChunkLimit(limit), provenance, clock=fixed_clock))
    return chunks


def make_chunk(
    body: str,
    source_id: str = "syn",
    uri: str = "syn://chunk",
    heading_path: tuple[str, ...] = (),
    created_at: datetime | None = None,
) -> Chunk:
    path = list(heading_path)
    return Chunk(
        id=make_chunk_id(source_id, path, body),
        source_id=source_id,
        uri=uri,
        heading_path=path,
        body=body,
        token_count=count_tokens(body),
        created_at=created_at or FIXED_AT,
    )


def scored(chunk: Chunk, bm25: float = 0.0, cosine: float = 0.0, fused: float = 0.0) -> ScoredChunk:
    return ScoredChunk(chunk=chunk, source_id=chunk.source_id, bm25=bm25, cosine=cosine, fused=fused)


_SYLLABLES = [
    "bal", "cen", "dor", "fen", "gim", "hul", "jat", "kor", "lam", "mir",
    "nod", "pra", "quen", "rit", "sov", "tul", "ulm", "vint", "wex", "yor",
]


def synthetic_vocab(rng: random.Random, size: int) -> list[str]:
    words: list[str] = []
    while len(words) < size:
        word = "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 3)))
        if word not in words:
            words.append(word)
    return words


def squash(text: str) -> str:
    return " ".join(text.split())


def assert_reconstructs(section, chunks: list[Chunk]) -> None:
    """Chunk contents, in order, must spell out the section's blocks.

    Table headers repeat at the start of continuation parts; those
    repeats are dropped before comparing. Headers are unique per table
    in all fixtures, so the drop rule is unambiguous.
    """
    headers = [
        squash(b.table_header) for b in section.blocks if b.kind == "table"
    ]
    parts = []
    prev_header = None
    for chunk in chunks:
        text = squash(chunk_content(chunk))
        matched = next(
            (h for h in headers if text == h or text.startswith(h + " ")), None
        )
        if matched is not None and matched == prev_header:
            text = text[len(matched) :].strip()
        prev_header = matched
        if text:
            parts.append(text)
    expected = " ".join(squash(b.text) for b in section.blocks)
    assert " ".join(parts) == expected


def fuzz_markdown(rng: random.Random, table_counter: list[int]) -> str:
    """Random document mixing all block kinds, some oversize."""
    vocab = synthetic_vocab(rng, 30)
    lines: list[str] = []
    level = 0
    for _ in range(rng.randint(2, 6)):
        level = max(1, min(6, level + rng.choice([-1, 0, 1, 1])))
        lines += [f"{'#' * level} {rng.choice(vocab)} {rng.choice(vocab)}", ""]
        for _ in range(rng.randint(0, 3)):
            kind = rng.choice(["paragraph", "paragraph", "list", "table", "code"])
            if kind == "paragraph":
                n = rng.choice([8, 20, 90])
                words = [rng.choice(vocab) for _ in range(n)]
                for j in range(7, len(words), 8):
                    words[j] += "."
                lines += [" ".join(words), ""]
            elif kind == "list":
                items = [
                    f"- {rng.choice(vocab)} {rng.choice(vocab)}"
                    for _ in range(rng.randint(1, 12))
                ]
                lines += items + [""]
            elif kind == "table":
                table_counter[0] += 1
                tag = f"t{table_counter[0]}"
                lines += [
                    f"| {tag}head | {tag}col |",
                    "|---|---|",
                ]
                lines += [
                    f"| {rng.choice(vocab)} | {rng.choice(vocab)} |"
                    for _ in range(rng.randint(1, 15))
                ]
                lines += [""]
            else:
                lines += ["```"]
                lines += [
                    f"{rng.choice(vocab)} {rng.choice(vocab)}"
                    for _ in range(rng.randint(1, 10))
                ]
                lines += ["```", ""]
    return "\n".join(lines)


def needle_corpus(
    n_docs: int = 100, needles: int = 25, seed: int = 7
) -> tuple[list[RawArtifact], list[tuple[str, str]]]:
    """Docs of made-up filler words; the first ``needles`` docs each hide a
    unique marker term that appears nowhere else. Questions mention only
    their marker plus words absent from the filler vocabulary, so exactly
    one chunk can answer each question.
    """
    rng = random.Random(seed)
    vocab = synthetic_vocab(rng, 48)

    def sentence() -> str:
        return " ".join(rng.choice(vocab) for _ in range(rng.randint(6, 10))) + "."

    def paragraph() -> str:
        return " ".join(sentence() for _ in range(2))

    artifacts: list[RawArtifact] = []
    questions: list[tuple[str, str]] = []
    for i in range(n_docs):
        lines = [
            f"# {rng.choice(vocab)} {i}",
            "",
            paragraph(),
            "",
            f"## {rng.choice(vocab)} {rng.choice(vocab)}",
            "",
            paragraph(),
        ]
        if i < needles:
            marker = f"zq{i}vex"
            lines += [
                "",
                f"## {rng.choice(vocab)}",
                "",
                f"The code word is {marker}. "
                f"The {marker} procedure repeats {marker} for emphasis.",
            ]
            questions.append((f"What does {marker} mean?", marker))
        artifacts.append(md_artifact("\n".join(lines), source_id=f"needle:{i}", uri=f"synth://doc/{i}"))
    return artifacts, questions


@contextmanager
def run_server(app):
    """Serve an ASGI app on an ephemeral port in a daemon thread."""
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        deadline = time.time() + 10
        while not server.started:
            if not thread.is_alive() or time.time() > deadline:
                raise RuntimeError("test server failed to start")
            time.sleep(0.01)
        port = server.servers[0].sockets[0].getsockname()[1]
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=5)

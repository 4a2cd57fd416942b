"""Operator commands: ingest, serve, serve-source, eval, and chat.

Exit codes are stable for scripting: 0 success, 2 input/output, 3
chunking, 4 dataset, 5 connection, 64 usage, 78 configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .backends import MockEmbedder
from .chunker import ChunkingError, ChunkLimit, Provenance, chunk_section
from .config import (
    AppConfig,
    ConfigError,
    build_embedder,
    build_generator,
    build_scorer,
    load_app_config,
)
from .eval_harness import LOADERS, EvalLoadError, format_table, run_eval, write_report
from .index_store import IndexBuildError, ShardLoadError, build_index, load_shard, save_shard
from .ingest import IngestError, convert_to_markdown, parse_sections, read_directory, read_manifest
from .mcp import McpRouter
from .orchestrator import ChatPipeline, HttpSource, LocalSource, build_chat_app, build_source_app

EXIT_OK = 0
EXIT_IO = 2
EXIT_CHUNKING = 3
EXIT_DATASET = 4
EXIT_CONNECTION = 5
EXIT_USAGE = 64
EXIT_CONFIG = 78


class _Parser(argparse.ArgumentParser):
    """argparse with the usage exit code pinned to 64."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fail(stage: str, exc: object, code: int) -> int:
    print(f"{stage}: {exc}", file=sys.stderr)
    return code


def _parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bind address {bind!r} is not host:port")
    return host or "127.0.0.1", int(port)


def _read_artifacts(input_path: str):
    path = Path(input_path)
    if path.is_dir():
        return read_directory(path)
    return read_manifest(path)


def _ingest_chunks(artifacts, chunk_tokens: int):
    limit = ChunkLimit(max_tokens=chunk_tokens)
    chunks = []
    for artifact in artifacts:
        doc = convert_to_markdown(artifact)
        provenance = Provenance(source_id=artifact.source_id, uri=artifact.uri)
        for section in parse_sections(doc):
            chunks.extend(chunk_section(section, limit, provenance))
    return chunks


def cmd_ingest(args, cfg: AppConfig) -> int:
    try:
        artifacts = _read_artifacts(args.input)
    except (OSError, IngestError) as exc:
        return _fail("read", exc, EXIT_IO)
    chunk_tokens = args.chunk_tokens if args.chunk_tokens else cfg.chunk_tokens
    try:
        chunks = _ingest_chunks(artifacts, chunk_tokens)
    except ChunkingError as exc:
        return _fail("chunking", exc, EXIT_CHUNKING)
    except (IngestError, ValueError) as exc:
        return _fail("convert", exc, EXIT_IO)
    if args.embedder == "mock":
        embedder = MockEmbedder()
    else:
        embedder = build_embedder(replace(cfg.backends, embedder_tag=args.embedder))
    try:
        shard = build_index(chunks, embedder, shard_id=args.shard_id)
        save_shard(shard, args.out)
    except (IndexBuildError, OSError) as exc:
        return _fail("index", exc, EXIT_IO)
    print(f"chunks: {len(chunks)}")
    print(
        f"shard: {shard.shard_id} docs: {shard.doc_count} "
        f"avg_doc_len: {shard.avg_doc_len:.2f} dim: {shard.dimension} "
        f"embedder: {shard.embedder_tag}"
    )
    return EXIT_OK


def cmd_serve_source(args, cfg: AppConfig) -> int:
    import uvicorn

    try:
        shard = load_shard(args.shard)
    except (OSError, ShardLoadError) as exc:
        return _fail("shard", exc, EXIT_IO)
    embedder = build_embedder(cfg.backends)
    if embedder.spec.tag != shard.embedder_tag:
        print(
            f"warning: shard embedded with {shard.embedder_tag!r}, "
            f"queries use {embedder.spec.tag!r}",
            file=sys.stderr,
        )
    try:
        host, port = _parse_bind(args.bind or cfg.bind)
    except ValueError as exc:
        return _fail("bind", exc, EXIT_USAGE)
    app = build_source_app(
        shard, embedder, params=cfg.pipeline.bm25, k_rrf=cfg.pipeline.k_rrf
    )
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return EXIT_OK


def cmd_serve(args, cfg: AppConfig) -> int:
    import uvicorn

    embedder = build_embedder(cfg.backends)
    scorer = build_scorer(cfg.backends)
    generator = build_generator(cfg.backends)
    sources = [
        HttpSource(url, timeout_ms=cfg.pipeline.source_timeout_ms) for url in cfg.sources
    ]
    if args.shard:
        try:
            shard = load_shard(args.shard)
        except (OSError, ShardLoadError) as exc:
            return _fail("shard", exc, EXIT_IO)
        sources.append(LocalSource(shard, embedder, params=cfg.pipeline.bm25, k_rrf=cfg.pipeline.k_rrf))
    router = McpRouter.connect(cfg.mcp_endpoints)
    for warning in router.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    pipeline = ChatPipeline(
        cfg.pipeline,
        sources,
        scorer,
        generator,
        tools=router.tools,
        tool_invoker=router.invoke,
    )
    try:
        host, port = _parse_bind(args.bind or cfg.bind)
    except ValueError as exc:
        return _fail("bind", exc, EXIT_USAGE)
    app = build_chat_app(pipeline, ui_dir=args.ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return EXIT_OK


def cmd_eval(args, cfg: AppConfig) -> int:
    loader = LOADERS[args.dataset]
    try:
        corpus, examples = loader(args.path)
    except (OSError, EvalLoadError, ValueError) as exc:
        return _fail("dataset", exc, EXIT_DATASET)
    embedder = build_embedder(cfg.backends)
    scorer = build_scorer(cfg.backends) if args.use_rerank else None
    try:
        report = run_eval(
            corpus,
            examples,
            cfg.pipeline,
            k=args.k,
            embedder=embedder,
            scorer=scorer,
            dataset=args.dataset,
            chunk_tokens=args.chunk_tokens if args.chunk_tokens else cfg.chunk_tokens,
            use_rerank=args.use_rerank,
            hits_mode=cfg.hits_mode,
        )
    except (IndexBuildError, ChunkingError, ValueError) as exc:
        return _fail("eval", exc, EXIT_DATASET)
    if args.out:
        try:
            write_report(report, args.out)
        except OSError as exc:
            return _fail("report", exc, EXIT_IO)
    print(format_table(report))
    agg = report.aggregates
    print(
        f"CP@{report.k}={agg['context_precision']:.3f} "
        f"CR@{report.k}={agg['context_recall']:.3f} "
        f"Hits@{report.k}={agg['hits']:.3f} "
        f"latency_mean={agg['latency_ms_mean']:.1f}ms "
        f"p95={agg['latency_ms_p95']:.1f}ms"
    )
    return EXIT_OK


def _print_sse_stream(response) -> tuple[str, list[dict]]:
    """Print token text as it arrives; return the text and citations."""
    text_parts: list[str] = []
    citations: list[dict] = []
    kind = ""
    for line in response.iter_lines():
        if line.startswith("event: "):
            kind = line[len("event: ") :]
            continue
        if not line.startswith("data: "):
            continue
        payload = json.loads(line[len("data: ") :])
        if kind == "token":
            text_parts.append(payload["text"])
            print(payload["text"], end="", flush=True)
        elif kind == "chunks":
            citations = payload["chunks"]
        elif kind == "error":
            print(f"\n[error] {payload.get('message', '')}", flush=True)
    return "".join(text_parts), citations


def cmd_chat(args, cfg: AppConfig) -> int:
    import httpx

    url = (args.url or f"http://{cfg.bind}").rstrip("/")
    messages: list[dict] = []
    while True:
        try:
            line = input("> ")
        except EOFError:
            return EXIT_OK
        if not line.strip():
            continue
        messages.append({"role": "user", "content": line})
        try:
            with httpx.stream(
                "POST",
                f"{url}/v1/chat",
                json={"messages": messages},
                timeout=60.0,
            ) as response:
                response.raise_for_status()
                answer, citations = _print_sse_stream(response)
        except httpx.HTTPError as exc:
            print(f"connection lost: {exc}", file=sys.stderr)
            return EXIT_CONNECTION
        print()
        if citations:
            print("Sources:")
            for n, chunk in enumerate(citations, start=1):
                print(f"  [{n}] {chunk.get('uri', '')}")
        messages.append({"role": "assistant", "content": answer})


def build_arg_parser() -> _Parser:
    parser = _Parser(prog="ragx", description="Local RAG chat stack.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="Chunk and index documents into a shard file.")
    p.add_argument("--input", required=True, help="manifest file or document directory")
    p.add_argument("--out", required=True, help="shard file to write")
    p.add_argument("--chunk-tokens", type=int, default=0, help="chunk size limit")
    p.add_argument("--embedder", default="mock", help="embedder tag (mock or configured)")
    p.add_argument("--shard-id", default="main", help="shard identifier")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("serve-source", help="Serve one shard over /v1/search.")
    p.add_argument("--shard", required=True)
    p.add_argument("--bind", default=None, help="host:port")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_serve_source)

    p = sub.add_parser("serve", help="Serve the chat orchestrator over /v1/chat.")
    p.add_argument("--shard", default=None, help="optional local shard to search")
    p.add_argument("--bind", default=None, help="host:port")
    p.add_argument("--ui-dir", default=None, help="static chat UI directory")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="Run retrieval evaluation over a QA dataset.")
    p.add_argument("--dataset", required=True, choices=sorted(LOADERS))
    p.add_argument("--path", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--use-rerank", action="store_true")
    p.add_argument("--chunk-tokens", type=int, default=0)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("chat", help="Chat against a running backend from the terminal.")
    p.add_argument("--url", default=None, help="backend base URL")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_chat)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_app_config(args.config)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    return args.func(args, cfg)


if __name__ == "__main__":
    raise SystemExit(main())

"""Configuration files and the backend factory.

Config is TOML (or JSON) resolved in precedence order: an explicit
--config flag, the RAGX_CONFIG environment variable, then ./ragx.toml
if present, then built-in defaults. Unknown keys are rejected by name
so typos fail loudly instead of silently running defaults. The
RAGX_BACKEND_URL environment variable overrides the configured backend
base URL without editing the file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .backends import (
    MOCK_EMBED_DIM,
    EmbedderSpec,
    GeneratorSpec,
    HttpEmbedder,
    HttpGenerator,
    HttpRerankScorer,
    MockEmbedder,
    MockGenerator,
    MockRerankScorer,
)
from .chunker import DEFAULT_CHUNK_TOKENS
from .mcp import DEFAULT_TIMEOUT_MS, McpEndpoint
from .orchestrator.pipeline import DEFAULT_PREAMBLE, DEFAULT_SOURCE_TIMEOUT_MS, PipelineConfig
from .prompt_budget import Budget
from .rerank import RerankConfig
from .retrieval import Bm25Params

ENV_CONFIG = "RAGX_CONFIG"
ENV_BACKEND_URL = "RAGX_BACKEND_URL"
DEFAULT_CONFIG_FILENAME = "ragx.toml"

BACKEND_KINDS = ("mock", "http")


class ConfigError(Exception):
    """A config file is unreadable, malformed, or carries bad values."""


@dataclass
class BackendSettings:
    kind: str = "mock"
    base_url: str = "http://127.0.0.1:8080"
    embedder_tag: str = "mock"
    embedder_dimension: int = MOCK_EMBED_DIM
    generator_tag: str = "mock-echo"
    generator_context_tokens: int = 8192
    reranker_tag: str = "mock-overlap"


@dataclass
class AppConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    backends: BackendSettings = field(default_factory=BackendSettings)
    chunk_tokens: int = DEFAULT_CHUNK_TOKENS
    sources: list[str] = field(default_factory=list)
    mcp_endpoints: list[McpEndpoint] = field(default_factory=list)
    bind: str = "127.0.0.1:8000"
    hits_mode: str = "any"


class _Section:
    """One mapping from the file; tracks reads to reject unknown keys."""

    def __init__(self, mapping: dict, where: str):
        if not isinstance(mapping, dict):
            raise ConfigError(f"{where}: expected a table")
        self.mapping = mapping
        self.where = where
        self.read: set[str] = set()

    def take(self, key: str, kind: type, default):
        self.read.add(key)
        if key not in self.mapping:
            return default
        value = self.mapping[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            raise ConfigError(f"{self.where}.{key}: expected {kind.__name__}")
        return value

    def sub(self, key: str) -> "_Section | None":
        self.read.add(key)
        if key not in self.mapping:
            return None
        return _Section(self.mapping[key], f"{self.where}.{key}")

    def finish(self) -> None:
        unknown = sorted(set(self.mapping) - self.read)
        if unknown:
            raise ConfigError(f"{self.where}: unknown key {unknown[0]!r}")


def resolve_config_path(flag_path: str | None) -> Path | None:
    if flag_path:
        return Path(flag_path)
    env_path = os.environ.get(ENV_CONFIG)
    if env_path:
        return Path(env_path)
    default = Path(DEFAULT_CONFIG_FILENAME)
    return default if default.is_file() else None


def _parse_file(path: Path) -> dict:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".json":
            return json.loads(raw.decode("utf-8"))
        return tomli.loads(raw.decode("utf-8"))
    except (ValueError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def load_app_config(flag_path: str | None = None) -> AppConfig:
    path = resolve_config_path(flag_path)
    if path is None:
        return AppConfig()
    return parse_app_config(_parse_file(path), where=str(path))


def parse_app_config(mapping: dict, where: str = "config") -> AppConfig:
    root = _Section(mapping, where)
    try:
        top_k = root.take("top_k", int, 3)
        candidate_depth = root.take("candidate_depth", int, 4 * top_k)
        chunk_tokens = root.take("chunk_tokens", int, DEFAULT_CHUNK_TOKENS)
        k_rrf = root.take("k_rrf", int, 60)
        query_history = root.take("query_history_messages", int, 1)
        source_timeout = root.take("source_timeout_ms", int, DEFAULT_SOURCE_TIMEOUT_MS)
        preamble = root.take("system_preamble", str, DEFAULT_PREAMBLE)
        bind = root.take("bind", str, "127.0.0.1:8000")
        hits_mode = root.take("hits_mode", str, "any")
        if hits_mode not in ("any", "fraction"):
            raise ConfigError(f"{where}.hits_mode: expected 'any' or 'fraction'")
        sources = root.take("sources", list, [])
        for n, item in enumerate(sources):
            if not isinstance(item, str):
                raise ConfigError(f"{where}.sources[{n}]: expected a string URL")

        budget = Budget(8192, 512)
        section = root.sub("budget")
        if section is not None:
            budget = Budget(
                context_tokens=section.take("context_tokens", int, 8192),
                reserved_generation_tokens=section.take("reserved_generation_tokens", int, 512),
            )
            section.finish()

        rerank = RerankConfig(target_k=top_k)
        section = root.sub("rerank")
        if section is not None:
            rerank = RerankConfig(
                target_k=section.take("target_k", int, top_k),
                context_cap_tokens=section.take("context_cap_tokens", int, 2048),
                keep_fraction=section.take("keep_fraction", float, 0.5),
            )
            section.finish()

        bm25 = Bm25Params()
        section = root.sub("bm25")
        if section is not None:
            bm25 = Bm25Params(
                k1=section.take("k1", float, 1.2),
                b=section.take("b", float, 0.75),
            )
            section.finish()

        backends = BackendSettings()
        section = root.sub("backends")
        if section is not None:
            backends = BackendSettings(
                kind=section.take("kind", str, "mock"),
                base_url=section.take("base_url", str, backends.base_url),
                embedder_tag=section.take("embedder_tag", str, backends.embedder_tag),
                embedder_dimension=section.take("embedder_dimension", int, MOCK_EMBED_DIM),
                generator_tag=section.take("generator_tag", str, backends.generator_tag),
                generator_context_tokens=section.take(
                    "generator_context_tokens", int, backends.generator_context_tokens
                ),
                reranker_tag=section.take("reranker_tag", str, backends.reranker_tag),
            )
            section.finish()
            if backends.kind not in BACKEND_KINDS:
                raise ConfigError(f"{where}.backends.kind: expected one of {BACKEND_KINDS}")

        endpoints: list[McpEndpoint] = []
        root.read.add("mcp_endpoints")
        for n, item in enumerate(mapping.get("mcp_endpoints", [])):
            esec = _Section(item, f"{where}.mcp_endpoints[{n}]")
            name = esec.take("name", str, None)
            base_url = esec.take("base_url", str, None)
            if not name or not base_url:
                raise ConfigError(f"{where}.mcp_endpoints[{n}]: name and base_url are required")
            endpoints.append(
                McpEndpoint(
                    name=name,
                    base_url=base_url,
                    timeout_ms=esec.take("timeout_ms", int, DEFAULT_TIMEOUT_MS),
                    bearer_token=esec.take("bearer_token", str, None),
                )
            )
            esec.finish()

        root.finish()
        pipeline = PipelineConfig(
            top_k=top_k,
            candidate_depth=candidate_depth,
            k_rrf=k_rrf,
            bm25=bm25,
            rerank=rerank,
            budget=budget,
            query_history_messages=query_history,
            source_timeout_ms=source_timeout,
            system_preamble=preamble,
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return AppConfig(
        pipeline=pipeline,
        backends=backends,
        chunk_tokens=chunk_tokens,
        sources=sources,
        mcp_endpoints=endpoints,
        bind=bind,
        hits_mode=hits_mode,
    )


def build_embedder(settings: BackendSettings):
    if settings.kind == "mock":
        return MockEmbedder(dimension=settings.embedder_dimension)
    base_url = os.environ.get(ENV_BACKEND_URL, settings.base_url)
    spec = EmbedderSpec(
        tag=settings.embedder_tag,
        dimension=settings.embedder_dimension,
        max_input_tokens=8192,
    )
    return HttpEmbedder(base_url, spec)


def build_scorer(settings: BackendSettings):
    if settings.kind == "mock":
        return MockRerankScorer()
    base_url = os.environ.get(ENV_BACKEND_URL, settings.base_url)
    return HttpRerankScorer(base_url, model=settings.reranker_tag)


def build_generator(settings: BackendSettings):
    if settings.kind == "mock":
        return MockGenerator(context_tokens=settings.generator_context_tokens)
    base_url = os.environ.get(ENV_BACKEND_URL, settings.base_url)
    spec = GeneratorSpec(
        tag=settings.generator_tag,
        context_tokens=settings.generator_context_tokens,
        supports_streaming=True,
    )
    return HttpGenerator(base_url, spec)

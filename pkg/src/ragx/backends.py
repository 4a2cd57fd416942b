"""Backend contracts for embedding, rerank scoring, and token generation.

Three pluggable contracts with two families of implementations: fully
deterministic mocks (hashed bag-of-words embedder, lexical-overlap
scorer, template-echo generator) that make the whole pipeline testable
offline, and HTTP clients speaking the OpenAI-compatible wire shapes of
local model servers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterator, Protocol, runtime_checkable

import httpx
import numpy as np

from .tokenization import count_tokens, terms_of, tokenize

# Hash constants for the mock embedder; fixed so independent ports of
# the mock agree bit-for-bit.
FNV_OFFSET_BASIS = 14695981039346656037
FNV_PRIME = 1099511628211
SIGN_BIT = 63

MOCK_EMBED_DIM = 64
NO_CONTEXT_ANSWER = "I found no relevant context."
TOOL_TRIGGER = "TOOL:create_issue"


class BackendError(Exception):
    """Base class for backend failures."""


class EmbedError(BackendError):
    pass


class ScoreError(BackendError):
    pass


class StreamError(BackendError):
    """Raised mid-stream after the last good token was yielded."""


@dataclass
class EmbedderSpec:
    tag: str
    dimension: int
    max_input_tokens: int


@dataclass
class GeneratorSpec:
    tag: str
    context_tokens: int
    supports_streaming: bool = True

    def __post_init__(self) -> None:
        if self.context_tokens < 1024:
            raise ValueError("context_tokens must be at least 1024")


@dataclass
class GenParams:
    max_tokens: int | None = None
    temperature: float = 0.0


@dataclass
class StreamDone:
    finish_reason: str
    prompt_tokens: int
    completion_tokens: int


@runtime_checkable
class Embedder(Protocol):
    spec: EmbedderSpec

    def embed(self, text: str) -> np.ndarray: ...


@runtime_checkable
class RerankScorer(Protocol):
    def score_pair(self, query: str, passage: str) -> float: ...


@runtime_checkable
class Generator(Protocol):
    spec: GeneratorSpec

    def generate_stream(
        self, prompt: str, params: GenParams
    ) -> Iterator[str | StreamDone]: ...


def collect_stream(stream: Iterator[str | StreamDone]) -> tuple[str, StreamDone]:
    """Drain a token stream into (completion text, end marker)."""
    pieces: list[str] = []
    done: StreamDone | None = None
    for item in stream:
        if isinstance(item, StreamDone):
            done = item
        else:
            pieces.append(item)
    if done is None:
        raise StreamError("stream ended without a completion marker")
    return "".join(pieces), done


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class MockEmbedder:
    """Hashed bag-of-words embedding: deterministic, no model files.

    Each lowercased token is hashed with 64-bit FNV-1a; the hash picks a
    bucket and a sign, contributions accumulate, and the vector is
    L2-normalized. Empty text embeds to the zero vector.
    """

    def __init__(self, dimension: int = MOCK_EMBED_DIM, max_input_tokens: int = 8192):
        self.spec = EmbedderSpec(
            tag=f"mock-bow-{dimension}",
            dimension=dimension,
            max_input_tokens=max_input_tokens,
        )

    def embed(self, text: str) -> np.ndarray:
        acc = np.zeros(self.spec.dimension, dtype=np.float64)
        for term in terms_of(text):
            h = fnv1a64(term.encode("utf-8"))
            sign = 1.0 if (h >> SIGN_BIT) & 1 == 0 else -1.0
            acc[h % self.spec.dimension] += sign
        norm = float(np.linalg.norm(acc))
        if norm == 0.0:
            return np.zeros(self.spec.dimension, dtype=np.float32)
        return (acc / norm).astype(np.float32)


class MockRerankScorer:
    """Jaccard overlap of lowercased token sets, in [0, 1]."""

    def score_pair(self, query: str, passage: str) -> float:
        q = set(terms_of(query))
        p = set(terms_of(passage))
        if not q and not p:
            return 1.0
        union = q | p
        if not union:
            return 0.0
        return len(q & p) / len(union)


_CONTEXT_ENTRY_RE = re.compile(r"^\[1\] \(\S*\) ?", re.MULTILINE)
_NEXT_ENTRY_RE = re.compile(r"^\[\d+\] \(|^## ", re.MULTILINE)


class MockGenerator:
    """Template-echo generation driven entirely by the prompt text.

    Emits an answer quoting the first context entry; when the prompt both
    declares tools and contains the create-issue trigger, a well-formed
    tool_call fenced block precedes the answer. Tokens are streamed as
    whitespace-preserving pieces whose concatenation is the completion.
    """

    def __init__(self, context_tokens: int = 8192):
        self.spec = GeneratorSpec(
            tag="mock-echo", context_tokens=context_tokens, supports_streaming=True
        )

    def completion(self, prompt: str, params: GenParams | None = None) -> str:
        return "".join(self._pieces(prompt, params))

    def generate_stream(
        self, prompt: str, params: GenParams | None = None
    ) -> Iterator[str | StreamDone]:
        pieces = self._pieces(prompt, params)
        yield from pieces
        text = "".join(pieces)
        yield StreamDone(
            finish_reason="stop",
            prompt_tokens=count_tokens(prompt),
            completion_tokens=count_tokens(text),
        )

    def _pieces(self, prompt: str, params: GenParams | None) -> list[str]:
        parts = []
        if "## Tools" in prompt and TOOL_TRIGGER in prompt:
            parts.append(
                '```tool_call\n{"tool": "create_issue", '
                '"arguments": {"title": "Issue from chat"}}\n```\n'
            )
        entry = self._first_context_entry(prompt)
        if entry is None:
            parts.append(NO_CONTEXT_ANSWER)
        else:
            excerpt = " ".join(tokenize(entry)[:20])
            parts.append(f"Answer based on [1]: {excerpt}")
        pieces = re.findall(r"\S+\s*", "".join(parts))
        if params and params.max_tokens is not None:
            pieces = pieces[: params.max_tokens]
        return pieces

    @staticmethod
    def _first_context_entry(prompt: str) -> str | None:
        start = _CONTEXT_ENTRY_RE.search(prompt)
        if start is None:
            return None
        rest = prompt[start.end() :]
        nxt = _NEXT_ENTRY_RE.search(rest)
        entry = rest[: nxt.start()] if nxt else rest
        return entry.strip() or None


class HttpEmbedder:
    """Client for an OpenAI-compatible /v1/embeddings endpoint."""

    def __init__(self, base_url: str, spec: EmbedderSpec, timeout_s: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.spec = spec
        self._client = httpx.Client(timeout=timeout_s)

    def embed(self, text: str) -> np.ndarray:
        try:
            resp = self._client.post(
                f"{self.base_url}/v1/embeddings",
                json={"model": self.spec.tag, "input": text},
            )
            resp.raise_for_status()
            values = resp.json()["data"][0]["embedding"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise EmbedError(f"embedding request failed: {exc}") from exc
        vec = np.asarray(values, dtype=np.float32)
        if vec.shape != (self.spec.dimension,):
            raise EmbedError(
                f"backend returned dimension {vec.shape}, expected {self.spec.dimension}"
            )
        norm = float(np.linalg.norm(vec))
        return vec if norm == 0.0 else (vec / norm).astype(np.float32)

    def close(self) -> None:
        self._client.close()


class HttpRerankScorer:
    """Client for a Cohere-style /v1/rerank endpoint."""

    def __init__(self, base_url: str, model: str, timeout_s: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self._client = httpx.Client(timeout=timeout_s)

    def score_pair(self, query: str, passage: str) -> float:
        try:
            resp = self._client.post(
                f"{self.base_url}/v1/rerank",
                json={"model": self.model, "query": query, "documents": [passage]},
            )
            resp.raise_for_status()
            score = float(resp.json()["results"][0]["relevance_score"])
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ScoreError(f"rerank request failed: {exc}") from exc
        return min(1.0, max(0.0, score))

    def close(self) -> None:
        self._client.close()


class HttpGenerator:
    """Client for an OpenAI-compatible streaming /v1/chat/completions endpoint."""

    def __init__(self, base_url: str, spec: GeneratorSpec, timeout_s: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.spec = spec
        self._client = httpx.Client(timeout=timeout_s)

    def generate_stream(
        self, prompt: str, params: GenParams | None = None
    ) -> Iterator[str | StreamDone]:
        params = params or GenParams()
        payload = {
            "model": self.spec.tag,
            "messages": [{"role": "user", "content": prompt}],
            "stream": True,
            "temperature": params.temperature,
        }
        if params.max_tokens is not None:
            payload["max_tokens"] = params.max_tokens

        emitted = 0
        finish_reason = "stop"
        usage: dict = {}
        try:
            with self._client.stream(
                "POST", f"{self.base_url}/v1/chat/completions", json=payload
            ) as resp:
                resp.raise_for_status()
                for line in resp.iter_lines():
                    if not line.startswith("data:"):
                        continue
                    data = line[len("data:") :].strip()
                    if data == "[DONE]":
                        break
                    event = json.loads(data)
                    usage = event.get("usage") or usage
                    choices = event.get("choices") or []
                    if not choices:
                        continue
                    finish_reason = choices[0].get("finish_reason") or finish_reason
                    delta = choices[0].get("delta", {}).get("content")
                    if delta:
                        emitted += len(delta)
                        yield delta
        except (httpx.HTTPError, json.JSONDecodeError, KeyError) as exc:
            raise StreamError(f"generation stream failed after {emitted} chars: {exc}") from exc
        yield StreamDone(
            finish_reason=finish_reason,
            prompt_tokens=int(usage.get("prompt_tokens", count_tokens(prompt))),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )

    def close(self) -> None:
        self._client.close()

"""Tournament reranking of retrieval candidates in token-budgeted batches.

Candidates are grouped by token size into batches that fit the reranker
context, scored pairwise against the query, and reduced round by round
(keeping the best ``keep_fraction``, never fewer than ``target_k``)
until the target count remains. Scores are cached per chunk within one
call, so survivors are never re-scored; with a deterministic scorer the
result equals a single global top-k pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .retrieval import ScoredChunk
from .tokenization import count_tokens

DEFAULT_TARGET_K = 3


class OversizeChunkError(Exception):
    """A single candidate cannot fit the reranker context."""


class RerankError(Exception):
    """The scorer failed or returned an out-of-range value."""


@dataclass
class RerankConfig:
    target_k: int = DEFAULT_TARGET_K
    context_cap_tokens: int = 2048
    keep_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.target_k < 1:
            raise ValueError("target_k must be at least 1")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must lie in (0, 1]")


@dataclass
class RerankStats:
    """Observability for one rerank_reduce call."""

    rounds: int = 0
    scorer_calls: int = 0


def batch_pack(
    candidates: list[ScoredChunk], query_tokens: int, cap: int
) -> list[list[ScoredChunk]]:
    """First-fit pack candidates, largest first, under the token cap.

    Each batch satisfies query_tokens + sum of candidate tokens <= cap;
    every candidate lands in exactly one batch.
    """
    for entry in candidates:
        if query_tokens + entry.chunk.token_count > cap:
            raise OversizeChunkError(
                f"chunk {entry.chunk.id} has {entry.chunk.token_count} tokens; "
                f"with a {query_tokens}-token query it exceeds the {cap}-token cap"
            )
    ordered = sorted(candidates, key=lambda s: (-s.chunk.token_count, s.chunk.id))
    batches: list[list[ScoredChunk]] = []
    loads: list[int] = []
    for entry in ordered:
        need = entry.chunk.token_count
        for i, load in enumerate(loads):
            if query_tokens + load + need <= cap:
                batches[i].append(entry)
                loads[i] += need
                break
        else:
            batches.append([entry])
            loads.append(need)
    return batches


def rerank_reduce(
    query: str,
    candidates: list[ScoredChunk],
    cfg: RerankConfig,
    scorer,
    stats: RerankStats | None = None,
) -> list[ScoredChunk]:
    """Reduce candidates to the top ``cfg.target_k`` by pairwise scoring.

    Terminates because every round with more than target_k survivors
    drops at least one candidate. Output entries carry their rerank
    score and come sorted descending, ties broken by chunk id.
    """
    stats = stats if stats is not None else RerankStats()
    query_tokens = count_tokens(query)
    cache: dict[str, float] = {}

    def score_round(entries: list[ScoredChunk]) -> None:
        stats.rounds += 1
        for batch in batch_pack(entries, query_tokens, cfg.context_cap_tokens):
            for entry in batch:
                if entry.chunk.id in cache:
                    continue
                try:
                    value = scorer.score_pair(query, entry.chunk.body)
                except Exception as exc:
                    raise RerankError(
                        f"scorer failed on chunk {entry.chunk.id}: {exc}"
                    ) from exc
                if not 0.0 <= value <= 1.0:
                    raise RerankError(
                        f"scorer returned {value!r} for chunk {entry.chunk.id}, "
                        "expected a value in [0, 1]"
                    )
                cache[entry.chunk.id] = value
                stats.scorer_calls += 1

    current = list(candidates)
    while len(current) > cfg.target_k:
        score_round(current)
        keep = max(cfg.target_k, math.ceil(cfg.keep_fraction * len(current)))
        # keep_fraction of 1.0 would stall; always drop at least one.
        keep = min(keep, len(current) - 1)
        current.sort(key=lambda s: (-cache[s.chunk.id], s.chunk.id))
        current = current[:keep]

    missing = [e for e in current if e.chunk.id not in cache]
    if missing:
        score_round(missing)
    out = [replace(e, rerank=cache[e.chunk.id]) for e in current]
    out.sort(key=lambda s: (-s.rerank, s.chunk.id))
    return out

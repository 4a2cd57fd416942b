"""Hybrid search inside one shard: BM25, cosine, rank fusion, dedup.

Scoring is exact and exhaustive; rankings are total orders with ties
broken by ascending chunk id so repeated searches are identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .chunker import Chunk
from .index_store import IndexShard
from .tokenization import terms_of

RRF_K_DEFAULT = 60
RRF_DEPTH_FACTOR = 4


class DimensionMismatchError(Exception):
    pass


@dataclass
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@dataclass
class ScoredChunk:
    chunk: Chunk
    source_id: str
    bm25: float = 0.0
    cosine: float = 0.0
    fused: float = 0.0
    rerank: float | None = None


def bm25_score(
    query_terms: list[str],
    tf_map: dict[str, int],
    doc_len: int,
    corpus: IndexShard,
    params: Bm25Params | None = None,
) -> float:
    """Okapi BM25 with the non-negative idf variant.

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); terms absent from the
    chunk contribute nothing. Repeated query terms contribute once per
    occurrence.
    """
    params = params or Bm25Params()
    if corpus.avg_doc_len > 0:
        length_norm = params.k1 * (
            1.0 - params.b + params.b * doc_len / corpus.avg_doc_len
        )
    else:
        length_norm = params.k1 * (1.0 - params.b)
    score = 0.0
    for term in query_terms:
        tf = tf_map.get(term, 0)
        if tf == 0:
            continue
        df = corpus.doc_freq.get(term, 0)
        idf = math.log(1.0 + (corpus.doc_count - df + 0.5) / (df + 0.5))
        score += idf * tf * (params.k1 + 1.0) / (tf + length_norm)
    return score


def bm25_topn(
    query: str, shard: IndexShard, n: int, params: Bm25Params | None = None
) -> list[ScoredChunk]:
    """Exhaustive BM25 ranking; zero-scoring chunks are excluded."""
    if n < 1:
        raise ValueError("n must be at least 1")
    query_terms = terms_of(query)
    scored = []
    for chunk, tf_map in zip(shard.chunks, shard.tf_maps):
        score = bm25_score(query_terms, tf_map, chunk.token_count, shard, params)
        if score > 0.0:
            scored.append(ScoredChunk(chunk=chunk, source_id=chunk.source_id, bm25=score))
    scored.sort(key=lambda s: (-s.bm25, s.chunk.id))
    return scored[:n]


def cosine_topn(query_vec: np.ndarray, shard: IndexShard, n: int) -> list[ScoredChunk]:
    """Exhaustive cosine ranking; vectors are pre-normalized, so the
    score is a plain dot product."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if shard.doc_count == 0:
        return []
    query_vec = np.asarray(query_vec)
    if query_vec.shape != (shard.dimension,):
        raise DimensionMismatchError(
            f"query vector has shape {query_vec.shape}, shard dimension is {shard.dimension}"
        )
    scores = shard.dense @ query_vec.astype(np.float64)
    order = sorted(range(shard.doc_count), key=lambda i: (-scores[i], shard.chunks[i].id))
    return [
        ScoredChunk(
            chunk=shard.chunks[i],
            source_id=shard.chunks[i].source_id,
            cosine=float(scores[i]),
        )
        for i in order[:n]
    ]


def fuse_rrf(
    rankings: list[list[ScoredChunk]], k_rrf: int = RRF_K_DEFAULT
) -> list[ScoredChunk]:
    """Reciprocal rank fusion across rankings of a shared chunk universe.

    fused(c) = sum over rankings containing c of 1 / (k_rrf + rank(c)),
    rank starting at 1. Per-chunk bm25/cosine scores carry over, taking
    the maximum when a chunk appears in several rankings.
    """
    fused: dict[str, float] = {}
    carried: dict[str, ScoredChunk] = {}
    for ranking in rankings:
        for rank, entry in enumerate(ranking, start=1):
            cid = entry.chunk.id
            fused[cid] = fused.get(cid, 0.0) + 1.0 / (k_rrf + rank)
            if cid in carried:
                prev = carried[cid]
                carried[cid] = replace(
                    prev,
                    bm25=max(prev.bm25, entry.bm25),
                    cosine=max(prev.cosine, entry.cosine),
                )
            else:
                carried[cid] = entry
    out = [replace(carried[cid], fused=score) for cid, score in fused.items()]
    out.sort(key=lambda s: (-s.fused, s.chunk.id))
    return out


def dedup(chunks: list[ScoredChunk]) -> list[ScoredChunk]:
    """Keep the first occurrence of each chunk id, preserving order."""
    seen: set[str] = set()
    out = []
    for entry in chunks:
        if entry.chunk.id in seen:
            continue
        seen.add(entry.chunk.id)
        out.append(entry)
    return out


def search_shard(
    query: str,
    shard: IndexShard,
    embedder,
    top_k: int,
    params: Bm25Params | None = None,
    k_rrf: int = RRF_K_DEFAULT,
    depth_factor: int = RRF_DEPTH_FACTOR,
) -> list[ScoredChunk]:
    """Hybrid search over one shard: BM25 and cosine fused with RRF.

    Each ranking is computed to ``depth_factor * top_k`` before fusion
    to give the fused order headroom.
    """
    depth = max(1, depth_factor * top_k)
    sparse_ranking = bm25_topn(query, shard, depth, params)
    dense_ranking = cosine_topn(embedder.embed(query), shard, depth)
    fused = fuse_rrf([sparse_ranking, dense_ranking], k_rrf)
    return dedup(fused)[:top_k]

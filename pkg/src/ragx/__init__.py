"""Local retrieval-augmented chat: ingest, index, retrieve, generate."""

from .chunker import Chunk, ChunkingError, ChunkLimit, Provenance, chunk_section, make_chunk_id
from .index_store import IndexShard, build_index, load_shard, save_shard
from .ingest import MarkdownDoc, RawArtifact, convert_to_markdown, parse_sections
from .retrieval import Bm25Params, ScoredChunk, search_shard
from .tokenization import count_tokens, tokenize

__version__ = "0.1.0"

__all__ = [
    "Bm25Params",
    "Chunk",
    "ChunkLimit",
    "ChunkingError",
    "IndexShard",
    "MarkdownDoc",
    "Provenance",
    "RawArtifact",
    "ScoredChunk",
    "__version__",
    "build_index",
    "chunk_section",
    "convert_to_markdown",
    "count_tokens",
    "load_shard",
    "make_chunk_id",
    "parse_sections",
    "save_shard",
    "search_shard",
    "tokenize",
]

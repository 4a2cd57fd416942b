"""Immutable hybrid index shards and their columnar persistence.

A shard owns one source's chunks together with their sparse term
statistics and dense vectors, plus the corpus statistics BM25 needs.
Shards persist as a single self-contained Parquet file per source;
corpus statistics are recomputed on load and checked against the stored
values.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pyarrow as pa
import pyarrow.parquet as pq

from .chunker import Chunk
from .tokenization import terms_of

FORMAT_VERSION = 1
SHARD_SUFFIX = ".shard.parquet"

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MS = timedelta(milliseconds=1)


class IndexBuildError(Exception):
    pass


class ShardLoadError(Exception):
    pass


class ShardReadError(ShardLoadError):
    pass


class ShardSchemaError(ShardLoadError):
    pass


class ShardStatsError(ShardLoadError):
    pass


@dataclass
class SparseVector:
    terms: list[str]  # strictly ascending, unique
    tfs: list[int]  # parallel to terms, all >= 1


class IndexShard:
    """Chunks of one source plus sparse/dense vectors and BM25 statistics."""

    def __init__(
        self,
        shard_id: str,
        chunks: list[Chunk],
        sparse: list[SparseVector],
        dense: np.ndarray,
        embedder_tag: str,
    ):
        if not (len(chunks) == len(sparse) == dense.shape[0]):
            raise ValueError("chunks, sparse, and dense rows must align")
        self.shard_id = shard_id
        self.chunks = chunks
        self.sparse = sparse
        self.dense = dense
        self.embedder_tag = embedder_tag
        self.doc_count = len(chunks)
        self.avg_doc_len = (
            float(np.mean([c.token_count for c in chunks])) if chunks else 0.0
        )
        self.doc_freq: dict[str, int] = {}
        for vec in sparse:
            for term in vec.terms:
                self.doc_freq[term] = self.doc_freq.get(term, 0) + 1
        # Per-chunk term -> tf lookup for scoring.
        self.tf_maps = [dict(zip(v.terms, v.tfs)) for v in sparse]

    @property
    def dimension(self) -> int:
        return int(self.dense.shape[1])

    def __len__(self) -> int:
        return self.doc_count

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IndexShard):
            return NotImplemented
        return (
            self.shard_id == other.shard_id
            and self.embedder_tag == other.embedder_tag
            and self.doc_count == other.doc_count
            and self.avg_doc_len == other.avg_doc_len
            and self.chunks == other.chunks
            and self.sparse == other.sparse
            and self.dense.dtype == other.dense.dtype
            and np.array_equal(self.dense, other.dense)
        )


def sparse_vector_of(text: str) -> SparseVector:
    counts = Counter(terms_of(text))
    terms = sorted(counts)
    return SparseVector(terms=terms, tfs=[counts[t] for t in terms])


def build_index(chunks: list[Chunk], embedder, shard_id: str) -> IndexShard:
    """Compute sparse and dense vectors for chunks and assemble a shard."""
    if not chunks:
        raise IndexBuildError("cannot build an index over zero chunks")
    sparse = [sparse_vector_of(c.body) for c in chunks]
    rows = []
    for chunk in chunks:
        try:
            vec = embedder.embed(chunk.body)
        except Exception as exc:
            raise IndexBuildError(f"embedding failed for chunk {chunk.id}: {exc}") from exc
        vec = np.asarray(vec, dtype=np.float32)
        if vec.ndim != 1 or vec.shape[0] != embedder.spec.dimension:
            raise IndexBuildError(
                f"embedder returned shape {vec.shape} for chunk {chunk.id}, "
                f"expected ({embedder.spec.dimension},)"
            )
        rows.append(vec)
    dense = np.stack(rows)
    return IndexShard(
        shard_id=shard_id,
        chunks=chunks,
        sparse=sparse,
        dense=dense,
        embedder_tag=embedder.spec.tag,
    )


_SCHEMA = pa.schema(
    [
        ("id", pa.string()),
        ("source_id", pa.string()),
        ("uri", pa.string()),
        ("heading_path", pa.list_(pa.string())),
        ("body", pa.string()),
        ("token_count", pa.int32()),
        ("created_at", pa.int64()),  # epoch milliseconds, UTC
        ("embedding", pa.list_(pa.float32())),
        ("terms", pa.list_(pa.string())),
        ("tfs", pa.list_(pa.int32())),
    ]
)


def _to_epoch_ms(dt: datetime) -> int:
    return (dt - _EPOCH) // _MS


def _from_epoch_ms(ms: int) -> datetime:
    return _EPOCH + ms * _MS


def save_shard(shard: IndexShard, path: str | Path) -> None:
    """Write a shard to one Parquet file.

    Chunk timestamps are stored at millisecond precision; corpus-level
    statistics travel in the file's key-value metadata.
    """
    columns = {
        "id": [c.id for c in shard.chunks],
        "source_id": [c.source_id for c in shard.chunks],
        "uri": [c.uri for c in shard.chunks],
        "heading_path": [c.heading_path for c in shard.chunks],
        "body": [c.body for c in shard.chunks],
        "token_count": [c.token_count for c in shard.chunks],
        "created_at": [_to_epoch_ms(c.created_at) for c in shard.chunks],
        "embedding": [row for row in shard.dense],
        "terms": [v.terms for v in shard.sparse],
        "tfs": [v.tfs for v in shard.sparse],
    }
    metadata = {
        "shard_id": shard.shard_id,
        "doc_count": str(shard.doc_count),
        # repr round-trips Python floats exactly.
        "avg_doc_len": repr(shard.avg_doc_len),
        "embedder_tag": shard.embedder_tag,
        "format_version": str(FORMAT_VERSION),
    }
    table = pa.table(columns, schema=_SCHEMA).replace_schema_metadata(metadata)
    pq.write_table(table, path)


def load_shard(path: str | Path) -> IndexShard:
    """Load a shard file, recomputing and verifying corpus statistics."""
    try:
        table = pq.read_table(path)
    except (OSError, pa.ArrowInvalid) as exc:
        raise ShardReadError(f"cannot read shard file {path}: {exc}") from exc

    # Capture key-value metadata up front; cast() rebuilds the schema
    # without it.
    metadata = {
        k.decode(): v.decode() for k, v in (table.schema.metadata or {}).items()
    }
    missing = set(_SCHEMA.names) - set(table.schema.names)
    if missing:
        raise ShardSchemaError(f"shard file {path} is missing columns {sorted(missing)}")
    try:
        table = table.select(_SCHEMA.names).cast(_SCHEMA)
    except (pa.ArrowInvalid, pa.ArrowTypeError, pa.ArrowNotImplementedError) as exc:
        raise ShardSchemaError(f"shard file {path} has incompatible column types: {exc}") from exc

    for key in ("shard_id", "doc_count", "avg_doc_len", "embedder_tag", "format_version"):
        if key not in metadata:
            raise ShardSchemaError(f"shard file {path} lacks metadata key {key!r}")
    if metadata["format_version"] != str(FORMAT_VERSION):
        raise ShardSchemaError(
            f"shard file {path} has format_version {metadata['format_version']}, "
            f"expected {FORMAT_VERSION}"
        )

    rows = table.to_pylist()
    chunks = []
    sparse = []
    embeddings = []
    for row in rows:
        chunks.append(
            Chunk(
                id=row["id"],
                source_id=row["source_id"],
                uri=row["uri"],
                heading_path=list(row["heading_path"]),
                body=row["body"],
                token_count=row["token_count"],
                created_at=_from_epoch_ms(row["created_at"]),
            )
        )
        sparse.append(SparseVector(terms=list(row["terms"]), tfs=list(row["tfs"])))
        embeddings.append(row["embedding"])

    dims = {len(e) for e in embeddings}
    if len(dims) > 1:
        raise ShardSchemaError(f"shard file {path} has ragged embedding lengths {sorted(dims)}")
    dense = np.asarray(embeddings, dtype=np.float32)
    if not rows:
        dense = dense.reshape(0, 0)

    shard = IndexShard(
        shard_id=metadata["shard_id"],
        chunks=chunks,
        sparse=sparse,
        dense=dense,
        embedder_tag=metadata["embedder_tag"],
    )
    if shard.doc_count != int(metadata["doc_count"]):
        raise ShardStatsError(
            f"shard file {path} stores doc_count {metadata['doc_count']} "
            f"but holds {shard.doc_count} rows"
        )
    stored_avg = float(metadata["avg_doc_len"])
    if abs(shard.avg_doc_len - stored_avg) > 1e-9:
        raise ShardStatsError(
            f"shard file {path} stores avg_doc_len {stored_avg} "
            f"but recomputation gives {shard.avg_doc_len}"
        )
    return shard

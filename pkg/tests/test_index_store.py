from datetime import datetime, timezone

import numpy as np
import pyarrow as pa
import pyarrow.parquet as pq
import pytest

from helpers import make_chunk, md_chunks
from ragx.backends import EmbedderSpec, MockEmbedder
from ragx.index_store import (
    IndexBuildError,
    IndexShard,
    ShardLoadError,
    ShardReadError,
    ShardSchemaError,
    ShardStatsError,
    SparseVector,
    build_index,
    load_shard,
    save_shard,
    sparse_vector_of,
)


@pytest.fixture()
def shard():
    chunks = md_chunks(
        "# Billing\n\nInvoices are sent monthly. Late fees apply after ten days."
        "\n\n## Refunds\n\nRefunds post within five business days.",
        limit=50,
    )
    return build_index(chunks, MockEmbedder(), "fixture-shard")


def _retag(path, **changes):
    """Rewrite the parquet file with altered key-value metadata."""
    table = pq.read_table(path)
    meta = {
        k.decode(): v.decode() for k, v in (table.schema.metadata or {}).items()
    }
    for key, value in changes.items():
        if value is None:
            meta.pop(key, None)
        else:
            meta[key] = value
    pq.write_table(table.replace_schema_metadata(meta), path)


class TestSparseVector:
    def test_terms_sorted_and_counted(self):
        vec = sparse_vector_of("the cat saw the cat and the dog")
        assert vec.terms == ["and", "cat", "dog", "saw", "the"]
        assert vec.tfs == [1, 2, 1, 1, 3]

    def test_casefolds(self):
        assert sparse_vector_of("Cat CAT cat").tfs == [3]


class TestBuild:
    def test_stats(self, shard):
        assert shard.doc_count == len(shard.chunks) == 2
        counts = [c.token_count for c in shard.chunks]
        assert shard.avg_doc_len == sum(counts) / len(counts)
        assert shard.dense.shape == (2, 64)
        assert shard.dense.dtype == np.float32

    def test_doc_freq_counts_documents_not_occurrences(self, shard):
        # "refunds" appears in one chunk (twice in its body), "days" in both
        assert shard.doc_freq["refunds"] == 1
        assert shard.doc_freq["days"] == 2

    def test_zero_chunks_rejected(self):
        with pytest.raises(IndexBuildError, match="zero chunks"):
            build_index([], MockEmbedder(), "s")

    def test_misaligned_rows_rejected(self):
        chunk = make_chunk("a b c")
        with pytest.raises(ValueError, match="align"):
            IndexShard("s", [chunk], [], np.zeros((1, 4), dtype=np.float32), "t")

    def test_wrong_embedding_shape_rejected(self):
        class Short:
            spec = EmbedderSpec(tag="short", dimension=8, max_input_tokens=100)

            def embed(self, text):
                return np.zeros(3, dtype=np.float32)

        with pytest.raises(IndexBuildError, match="shape"):
            build_index([make_chunk("a")], Short(), "s")

    def test_embedder_exception_wrapped(self):
        class Broken:
            spec = EmbedderSpec(tag="broken", dimension=8, max_input_tokens=100)

            def embed(self, text):
                raise RuntimeError("no backend")

        with pytest.raises(IndexBuildError, match="embedding failed"):
            build_index([make_chunk("a")], Broken(), "s")


class TestRoundTrip:
    def test_equality_after_save_load(self, shard, tmp_path):
        path = tmp_path / "s.parquet"
        save_shard(shard, path)
        assert load_shard(path) == shard

    def test_embeddings_bit_exact(self, shard, tmp_path):
        path = tmp_path / "s.parquet"
        save_shard(shard, path)
        loaded = load_shard(path)
        assert loaded.dense.dtype == np.float32
        assert np.array_equal(
            loaded.dense.view(np.uint32), shard.dense.view(np.uint32)
        )

    def test_derived_stats_recomputed(self, shard, tmp_path):
        path = tmp_path / "s.parquet"
        save_shard(shard, path)
        loaded = load_shard(path)
        assert loaded.doc_freq == shard.doc_freq
        assert loaded.tf_maps == shard.tf_maps

    def test_timestamps_floor_to_milliseconds(self, tmp_path):
        at = datetime(2024, 5, 2, 12, 0, 0, 123456, tzinfo=timezone.utc)
        chunk = make_chunk("tick tock", created_at=at)
        shard = build_index([chunk], MockEmbedder(), "ts")
        path = tmp_path / "s.parquet"
        save_shard(shard, path)
        loaded = load_shard(path)
        assert loaded.chunks[0].created_at == at.replace(microsecond=123000)


class TestLoadErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ShardReadError):
            load_shard(tmp_path / "absent.parquet")

    def test_garbage_bytes(self, tmp_path):
        path = tmp_path / "junk.parquet"
        path.write_bytes(b"not a parquet file at all")
        with pytest.raises(ShardReadError):
            load_shard(path)

    def test_missing_column(self, shard, tmp_path):
        path = tmp_path / "s.parquet"
        save_shard(shard, path)
        table = pq.read_table(path).drop_columns(["embedding"])
        pq.write_table(table, path)
        with pytest.raises(ShardSchemaError, match="embedding"):
            load_shard(path)

    def test_missing_metadata_key(self, shard, tmp_path):
        path = tmp_path / "s.parquet"
        save_shard(shard, path)
        _retag(path, embedder_tag=None)
        with pytest.raises(ShardSchemaError, match="embedder_tag"):
            load_shard(path)

    def test_unknown_format_version(self, shard, tmp_path):
        path = tmp_path / "s.parquet"
        save_shard(shard, path)
        _retag(path, format_version="99")
        with pytest.raises(ShardSchemaError, match="format"):
            load_shard(path)

    def test_tampered_doc_count(self, shard, tmp_path):
        path = tmp_path / "s.parquet"
        save_shard(shard, path)
        _retag(path, doc_count="5")
        with pytest.raises(ShardStatsError):
            load_shard(path)

    def test_tampered_avg_doc_len(self, shard, tmp_path):
        path = tmp_path / "s.parquet"
        save_shard(shard, path)
        _retag(path, avg_doc_len="1.0")
        with pytest.raises(ShardStatsError):
            load_shard(path)

    def test_ragged_embeddings(self, tmp_path):
        path = tmp_path / "ragged.parquet"
        now = 1_714_651_200_000
        table = pa.table(
            {
                "id": ["a", "b"],
                "source_id": ["s", "s"],
                "uri": ["u", "u"],
                "heading_path": [["H"], ["H"]],
                "body": ["x", "y"],
                "token_count": pa.array([1, 1], type=pa.int32()),
                "created_at": pa.array([now, now], type=pa.int64()),
                "embedding": [
                    np.zeros(4, dtype=np.float32),
                    np.zeros(5, dtype=np.float32),
                ],
                "terms": [["x"], ["y"]],
                "tfs": [[1], [1]],
            }
        ).replace_schema_metadata(
            {
                "shard_id": "r",
                "doc_count": "2",
                "avg_doc_len": "1.0",
                "embedder_tag": "t",
                "format_version": "1",
            }
        )
        pq.write_table(table, path)
        with pytest.raises(ShardSchemaError, match="ragged"):
            load_shard(path)

    def test_error_hierarchy(self):
        assert issubclass(ShardReadError, ShardLoadError)
        assert issubclass(ShardSchemaError, ShardLoadError)
        assert issubclass(ShardStatsError, ShardLoadError)

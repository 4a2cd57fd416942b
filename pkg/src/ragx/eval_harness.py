"""Retrieval-quality and latency evaluation over QA datasets.

Loads SQuAD-format and multi-hop evidence datasets into artifacts plus
question records, runs the retrieval pipeline over them, and reports
Context Precision@k, Context Recall@k, Hits@k, and wall-clock latency.

Relevance is judged deterministically: a retrieved chunk is relevant to
a gold evidence when the evidence appears in the chunk body after
whitespace normalization and case folding. Reports state this proxy so
numbers are never mistaken for judge-based scores.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from math import ceil
from pathlib import Path

from .chunker import ChunkLimit, Provenance, chunk_section
from .index_store import build_index
from .ingest import MEDIA_PLAIN_TEXT, RawArtifact, convert_to_markdown, parse_sections
from .orchestrator.pipeline import LocalSource, PipelineConfig, fan_out_search
from .rerank import rerank_reduce
from .retrieval import ScoredChunk

log = logging.getLogger(__name__)

RELEVANCE_JUDGE = "normalized-substring"

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MLQA_PAIR_RE = re.compile(r"context-([a-z]{2})(?:-question-([a-z]{2}))?")


class EvalLoadError(Exception):
    """A dataset file does not match its expected schema."""


@dataclass
class QaExample:
    qid: str
    question: str
    gold_evidences: list[str]
    language_pair: tuple[str, str] | None = None

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError(f"question {self.qid!r} is empty")
        if not self.gold_evidences:
            raise ValueError(f"question {self.qid!r} has no gold evidence")


@dataclass
class EvalRow:
    qid: str
    retrieved_ids: list[str]
    context_precision: float
    context_recall: float
    hits: float
    latency_ms: float
    failed: bool = False
    error: str = ""


@dataclass
class EvalReport:
    dataset: str
    k: int
    judge: str
    rows: list[EvalRow]
    failures: int
    aggregates: dict = field(default_factory=dict)


def _norm(text: str) -> str:
    return " ".join(text.split()).casefold()


def _relevance_flags(retrieved: list[str], golds: list[str], k: int) -> list[bool]:
    norm_golds = [g for g in (_norm(g) for g in golds) if g]
    flags = []
    for text in retrieved[:k]:
        body = _norm(text)
        flags.append(any(g in body for g in norm_golds))
    return flags


def context_precision_at_k(retrieved: list[str], golds: list[str], k: int) -> float:
    """Rank-weighted precision over relevant items in the top k."""
    if k < 1:
        raise ValueError("k must be at least 1")
    flags = _relevance_flags(retrieved, golds, k)
    hits = 0
    weighted = 0.0
    for i, rel in enumerate(flags, start=1):
        if rel:
            hits += 1
            weighted += hits / i
    return weighted / hits if hits else 0.0


def _covered(retrieved: list[str], golds: list[str], k: int) -> int:
    bodies = [_norm(t) for t in retrieved[:k]]
    count = 0
    for gold in golds:
        g = _norm(gold)
        if g and any(g in body for body in bodies):
            count += 1
    return count


def context_recall_at_k(retrieved: list[str], golds: list[str], k: int) -> float:
    """Fraction of gold evidences covered by the top k."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not golds:
        return 0.0
    return _covered(retrieved, golds, k) / len(golds)


def hits_at_k(retrieved: list[str], golds: list[str], k: int, mode: str = "any") -> float:
    """Gold coverage in the top k: binary by default, fractional on request."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if mode not in ("any", "fraction"):
        raise ValueError(f"unknown hits mode {mode!r}")
    if not golds:
        return 0.0
    covered = _covered(retrieved, golds, k)
    if mode == "fraction":
        return covered / len(golds)
    return 1.0 if covered else 0.0


def _squad_answer_texts(qa: dict, path: str) -> list[str]:
    answers = qa.get("answers")
    if not isinstance(answers, list) or not answers:
        raise EvalLoadError(f"{path}.answers: expected a non-empty array")
    texts = []
    for n, answer in enumerate(answers):
        if not isinstance(answer, dict) or not isinstance(answer.get("text"), str):
            raise EvalLoadError(f"{path}.answers[{n}].text: expected a string")
        text = answer["text"]
        if text.strip() and text not in texts:
            texts.append(text)
    if not texts:
        raise EvalLoadError(f"{path}.answers: all answer texts are empty")
    return texts


def _load_squad_format(
    path: str | Path, id_prefix: str, language_pair: tuple[str, str] | None
) -> tuple[list[RawArtifact], list[QaExample]]:
    with open(path, "rb") as fh:
        payload = json.load(fh)
    data = payload.get("data") if isinstance(payload, dict) else None
    if not isinstance(data, list):
        raise EvalLoadError("data: expected an array of articles")
    corpus: list[RawArtifact] = []
    examples: list[QaExample] = []
    for ai, article in enumerate(data):
        paragraphs = article.get("paragraphs") if isinstance(article, dict) else None
        if not isinstance(paragraphs, list):
            raise EvalLoadError(f"data[{ai}].paragraphs: expected an array")
        for pi, paragraph in enumerate(paragraphs):
            ppath = f"data[{ai}].paragraphs[{pi}]"
            context = paragraph.get("context") if isinstance(paragraph, dict) else None
            if not isinstance(context, str) or not context.strip():
                raise EvalLoadError(f"{ppath}.context: expected a non-empty string")
            source_id = f"{id_prefix}:{ai}:{pi}"
            corpus.append(
                RawArtifact(
                    source_id=source_id,
                    uri=source_id,
                    media_kind=MEDIA_PLAIN_TEXT,
                    body=context.encode("utf-8"),
                    fetched_at=_EPOCH,
                )
            )
            qas = paragraph.get("qas")
            if not isinstance(qas, list):
                raise EvalLoadError(f"{ppath}.qas: expected an array")
            for qi, qa in enumerate(qas):
                qpath = f"{ppath}.qas[{qi}]"
                if not isinstance(qa, dict) or not isinstance(qa.get("question"), str):
                    raise EvalLoadError(f"{qpath}.question: expected a string")
                qid = qa.get("id") if isinstance(qa.get("id"), str) else f"{id_prefix}:{ai}:{pi}:{qi}"
                examples.append(
                    QaExample(
                        qid=qid,
                        question=qa["question"],
                        gold_evidences=_squad_answer_texts(qa, qpath),
                        language_pair=language_pair,
                    )
                )
    return corpus, examples


def load_squad(path: str | Path) -> tuple[list[RawArtifact], list[QaExample]]:
    """Load SQuAD v1.1 JSON: one artifact per paragraph, answers as golds."""
    return _load_squad_format(path, "squad", None)


def load_mlqa(path: str | Path) -> tuple[list[RawArtifact], list[QaExample]]:
    """Load MLQA JSON (SQuAD schema); language pair read from the filename."""
    match = _MLQA_PAIR_RE.search(Path(path).name)
    pair = None
    if match:
        pair = (match.group(1), match.group(2) or match.group(1))
    return _load_squad_format(path, "mlqa", pair)


def load_multihop(path: str | Path) -> tuple[list[RawArtifact], list[QaExample]]:
    """Load multi-hop JSON: evidence documents as artifacts, facts as golds.

    Source documents repeat across queries; the corpus keeps one artifact
    per distinct document body.
    """
    with open(path, "rb") as fh:
        payload = json.load(fh)
    if not isinstance(payload, list):
        raise EvalLoadError("top level: expected an array of query records")
    corpus: list[RawArtifact] = []
    seen: set[str] = set()
    examples: list[QaExample] = []
    for qi, record in enumerate(payload):
        rpath = f"[{qi}]"
        if not isinstance(record, dict) or not isinstance(record.get("query"), str):
            raise EvalLoadError(f"{rpath}.query: expected a string")
        evidence_list = record.get("evidence_list")
        if not isinstance(evidence_list, list):
            raise EvalLoadError(f"{rpath}.evidence_list: expected an array")
        if not evidence_list:
            log.warning("query %s skipped: empty evidence_list", rpath)
            continue
        facts = []
        for ei, evidence in enumerate(evidence_list):
            epath = f"{rpath}.evidence_list[{ei}]"
            if not isinstance(evidence, dict):
                raise EvalLoadError(f"{epath}: expected an object")
            text = evidence.get("source_text") or evidence.get("source")
            fact = evidence.get("fact")
            if not isinstance(fact, str) or not fact.strip():
                raise EvalLoadError(f"{epath}.fact: expected a non-empty string")
            if not isinstance(text, str) or not text.strip():
                text = fact
            facts.append(fact)
            digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
            if digest in seen:
                continue
            seen.add(digest)
            source_id = f"multihop:{digest}"
            corpus.append(
                RawArtifact(
                    source_id=source_id,
                    uri=str(evidence.get("url") or source_id),
                    media_kind=MEDIA_PLAIN_TEXT,
                    body=text.encode("utf-8"),
                    fetched_at=_EPOCH,
                )
            )
        examples.append(
            QaExample(qid=f"multihop:{qi}", question=record["query"], gold_evidences=facts)
        )
    return corpus, examples


LOADERS = {"squad": load_squad, "multihop": load_multihop, "mlqa": load_mlqa}


def ingest_corpus(corpus: list[RawArtifact], chunk_tokens: int = 350):
    """Convert, parse, and chunk every artifact; created_at is fixed."""
    limit = ChunkLimit(max_tokens=chunk_tokens)
    chunks = []
    for artifact in corpus:
        doc = convert_to_markdown(artifact)
        provenance = Provenance(source_id=artifact.source_id, uri=artifact.uri)
        for section in parse_sections(doc):
            chunks.extend(
                chunk_section(section, limit, provenance, clock=lambda: _EPOCH)
            )
    return chunks


def run_eval(
    corpus: list[RawArtifact],
    examples: list[QaExample],
    pipeline_cfg: PipelineConfig,
    k: int,
    embedder=None,
    scorer=None,
    dataset: str = "synthetic",
    chunk_tokens: int = 350,
    use_rerank: bool = False,
    hits_mode: str = "any",
    parallelism: int = 1,
) -> EvalReport:
    """Index the corpus, answer every question, and aggregate the metrics.

    With the deterministic mock backends the whole report is reproducible
    bit for bit. A failing example becomes a failed row and is excluded
    from aggregates rather than aborting the run.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if embedder is None:
        from .backends import MockEmbedder

        embedder = MockEmbedder()
    chunks = ingest_corpus(corpus, chunk_tokens)
    shard = build_index(chunks, embedder, shard_id=f"eval-{dataset}")
    source = LocalSource(
        shard, embedder, params=pipeline_cfg.bm25, k_rrf=pipeline_cfg.k_rrf
    )
    rerank_cfg = replace(pipeline_cfg.rerank, target_k=k) if use_rerank else None

    def evaluate(example: QaExample) -> EvalRow:
        t0 = time.perf_counter()
        try:
            if use_rerank:
                depth = max(pipeline_cfg.candidate_depth, k)
                candidates, _ = fan_out_search(example.question, [source], depth)
                top: list[ScoredChunk] = rerank_reduce(
                    example.question, candidates, rerank_cfg, scorer
                )[:k]
            else:
                top, _ = fan_out_search(example.question, [source], k)
            latency_ms = (time.perf_counter() - t0) * 1000
            texts = [e.chunk.body for e in top]
            return EvalRow(
                qid=example.qid,
                retrieved_ids=[e.chunk.id for e in top],
                context_precision=context_precision_at_k(texts, example.gold_evidences, k),
                context_recall=context_recall_at_k(texts, example.gold_evidences, k),
                hits=hits_at_k(texts, example.gold_evidences, k, mode=hits_mode),
                latency_ms=latency_ms,
            )
        except Exception as exc:
            latency_ms = (time.perf_counter() - t0) * 1000
            return EvalRow(
                qid=example.qid,
                retrieved_ids=[],
                context_precision=0.0,
                context_recall=0.0,
                hits=0.0,
                latency_ms=latency_ms,
                failed=True,
                error=str(exc),
            )

    if parallelism > 1 and len(examples) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(evaluate, examples))
    else:
        rows = [evaluate(e) for e in examples]
    return make_report(dataset, k, rows)


def _p95(values: list[float]) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    return ordered[max(0, ceil(0.95 * len(ordered)) - 1)]


def _compute_aggregates(rows: list[EvalRow]) -> dict:
    ok = [r for r in rows if not r.failed]
    if not ok:
        return {
            "questions": 0,
            "context_precision": 0.0,
            "context_recall": 0.0,
            "hits": 0.0,
            "latency_ms_mean": 0.0,
            "latency_ms_p95": 0.0,
        }
    return {
        "questions": len(ok),
        "context_precision": statistics.fmean(r.context_precision for r in ok),
        "context_recall": statistics.fmean(r.context_recall for r in ok),
        "hits": statistics.fmean(r.hits for r in ok),
        "latency_ms_mean": statistics.fmean(r.latency_ms for r in ok),
        "latency_ms_p95": _p95([r.latency_ms for r in ok]),
    }


def make_report(dataset: str, k: int, rows: list[EvalRow]) -> EvalReport:
    return EvalReport(
        dataset=dataset,
        k=k,
        judge=RELEVANCE_JUDGE,
        rows=rows,
        failures=sum(1 for r in rows if r.failed),
        aggregates=_compute_aggregates(rows),
    )


def _verify_report(report: EvalReport) -> None:
    if report.aggregates != _compute_aggregates(report.rows):
        raise ValueError("report aggregates do not match their rows")
    if report.failures != sum(1 for r in report.rows if r.failed):
        raise ValueError("report failure count does not match its rows")


def report_to_json(report: EvalReport) -> str:
    _verify_report(report)
    payload = {
        "dataset": report.dataset,
        "k": report.k,
        "judge": report.judge,
        "failures": report.failures,
        "aggregates": report.aggregates,
        "rows": [asdict(r) for r in report.rows],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(report_to_json(report) + "\n", encoding="utf-8")


def format_table(report: EvalReport) -> str:
    """Aligned text table: one row per question plus an aggregate line."""
    _verify_report(report)
    header = ["qid", f"CP@{report.k}", f"CR@{report.k}", f"Hits@{report.k}", "latency_ms", "status"]
    body = []
    for row in report.rows:
        body.append(
            [
                row.qid,
                f"{row.context_precision:.3f}",
                f"{row.context_recall:.3f}",
                f"{row.hits:.3f}",
                f"{row.latency_ms:.1f}",
                "failed" if row.failed else "ok",
            ]
        )
    agg = report.aggregates
    body.append(
        [
            "mean",
            f"{agg['context_precision']:.3f}",
            f"{agg['context_recall']:.3f}",
            f"{agg['hits']:.3f}",
            f"{agg['latency_ms_mean']:.1f}",
            f"p95={agg['latency_ms_p95']:.1f}",
        ]
    )
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for r in [header] + body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return "\n".join(lines)

"""Chunking, hybrid sparse+dense retrieval, LLM reranking.

Each cited/citing paper contributes one chunk per section; ranking fuses
min-max-normalized BM25 and embedding-cosine scores with equal weight,
and an LLM reranker keeps only chunks scoring >= the retain threshold.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .gateway import ChatRequest, Gateway, GatewayError, Message
from .ingestion import CitationCorpus
from .model import PaperRecord
from .prompts import render_prompt
from .textutil import tokenize

log = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75
RERANK_THRESHOLD = 8
FUSION_TOP_K = 20


class EmptyQuery(ValueError):
    pass


class MismatchedUniverse(ValueError):
    pass


class RerankFailed(Exception):
    pass


class TooFewEntries(ValueError):
    pass


class SourceKind(str, Enum):
    CITED_IN = "cited_in"
    CITED_BY = "cited_by"


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    source_paper_id: str
    source_kind: SourceKind
    heading: str
    body: str
    enrichment: Optional[str] = None

    def text(self) -> str:
        if self.enrichment:
            return f"{self.enrichment}\n{self.body}"
        return self.body

    def to_json(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "source_paper_id": self.source_paper_id,
            "source_kind": self.source_kind.value,
            "heading": self.heading,
            "body": self.body,
            "enrichment": self.enrichment,
        }


@dataclass(frozen=True)
class ChunkSet:
    paper_id: str
    chunks: tuple[Chunk, ...]


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: str
    sparse_score: float
    dense_score: float
    fused_score: float
    rerank_score: Optional[int] = None


def build_chunks(
    corpus: CitationCorpus,
    enrich: bool = False,
    gateway: Optional[Gateway] = None,
    model_id: str = "",
) -> ChunkSet:
    """One chunk per section of every cited paper; optional per-paper
    summary prepended to each of that paper's chunks."""
    chunks: list[Chunk] = []
    for kind, papers in (
        (SourceKind.CITED_IN, corpus.cited_in),
        (SourceKind.CITED_BY, corpus.cited_by),
    ):
        for paper in papers:
            summary = None
            if enrich:
                if gateway is None:
                    raise ValueError("enrich=True requires a gateway")
                prompt = render_prompt("chunk_summary", paper_text=paper.full_text())
                summary = gateway.complete(
                    ChatRequest(
                        model_id=model_id,
                        messages=(Message("user", prompt),),
                        purpose="summary",
                    )
                ).content
            for section in paper.sections:
                chunks.append(
                    Chunk(
                        chunk_id=f"{kind.value}:{paper.paper_id}:{section.index}",
                        source_paper_id=paper.paper_id,
                        source_kind=kind,
                        heading=section.heading,
                        body=section.body,
                        enrichment=summary,
                    )
                )
    return ChunkSet(paper_id=corpus.paper_id, chunks=tuple(chunks))


# -- sparse scoring ----------------------------------------------------


def score_sparse(
    query: str,
    chunk_set: ChunkSet,
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> list[tuple[str, float]]:
    """Okapi BM25 over the shared tokenizer; descending score, ties by
    chunk_id ascending. idf = ln(1 + (N - df + 0.5)/(df + 0.5))."""
    query_terms = tokenize(query)
    if not query_terms:
        raise EmptyQuery("query has no tokens")
    docs = [tokenize(c.text()) for c in chunk_set.chunks]
    n_docs = len(docs)
    if n_docs == 0:
        return []
    avgdl = sum(len(d) for d in docs) / n_docs
    df: Counter = Counter()
    for doc in docs:
        df.update(set(doc))
    idf = {t: math.log(1 + (n_docs - df[t] + 0.5) / (df[t] + 0.5)) for t in df}
    scores = []
    for chunk, doc in zip(chunk_set.chunks, docs):
        tf = Counter(doc)
        dl = len(doc)
        norm = k1 * (1 - b + b * dl / avgdl) if avgdl > 0 else k1
        score = 0.0
        for term in query_terms:
            freq = tf.get(term)
            if not freq:
                continue
            score += idf[term] * freq * (k1 + 1) / (freq + norm)
        scores.append((chunk.chunk_id, score))
    scores.sort(key=lambda pair: (-pair[1], pair[0]))
    return scores


# -- dense scoring -----------------------------------------------------


class Embedder(Protocol):
    def embed(self, text: str) -> list[float]: ...


class HashingEmbedder:
    """Deterministic offline embedder: token feature hashing, L2 norm.

    Bucket for a token is the first 8 bytes of sha256(token) mod dim;
    the vector counts tokens per bucket and is L2-normalized. Simple
    enough that expected cosines are hand-computable in tests.
    """

    def __init__(self, dim: int = 64):
        self.dim = dim

    def bucket_of(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def embed(self, text: str) -> list[float]:
        vec = [0.0] * self.dim
        for token in tokenize(text):
            vec[self.bucket_of(token)] += 1.0
        norm = math.sqrt(sum(v * v for v in vec))
        if norm > 0:
            vec = [v / norm for v in vec]
        return vec


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def score_dense(
    query: str,
    chunk_set: ChunkSet,
    embedder: Embedder,
) -> list[tuple[str, float]]:
    """Cosine similarity against each chunk; same tie-break as sparse."""
    query_vec = embedder.embed(query)
    scores = [
        (chunk.chunk_id, cosine(query_vec, embedder.embed(chunk.text())))
        for chunk in chunk_set.chunks
    ]
    scores.sort(key=lambda pair: (-pair[1], pair[0]))
    return scores


# -- fusion ------------------------------------------------------------


def _min_max(scores: dict[str, float]) -> dict[str, float]:
    values = list(scores.values())
    lo, hi = min(values), max(values)
    if hi == lo:
        return {k: 0.0 for k in scores}
    return {k: (v - lo) / (hi - lo) for k, v in scores.items()}


def fuse_and_select(
    sparse: list[tuple[str, float]],
    dense: list[tuple[str, float]],
    k: int = FUSION_TOP_K,
) -> list[str]:
    """Equal-weight fusion of min-max-normalized lists; top-k chunk ids."""
    sparse_map = dict(sparse)
    dense_map = dict(dense)
    if set(sparse_map) != set(dense_map):
        raise MismatchedUniverse("sparse and dense lists cover different chunks")
    if not sparse_map:
        return []
    sparse_norm = _min_max(sparse_map)
    dense_norm = _min_max(dense_map)
    fused = {cid: 0.5 * sparse_norm[cid] + 0.5 * dense_norm[cid] for cid in sparse_map}
    ranked = sorted(fused, key=lambda cid: (-fused[cid], cid))
    return ranked[:k]


def fused_scores(
    sparse: list[tuple[str, float]],
    dense: list[tuple[str, float]],
) -> dict[str, float]:
    sparse_map, dense_map = dict(sparse), dict(dense)
    if set(sparse_map) != set(dense_map):
        raise MismatchedUniverse("sparse and dense lists cover different chunks")
    sparse_norm = _min_max(sparse_map)
    dense_norm = _min_max(dense_map)
    return {cid: 0.5 * sparse_norm[cid] + 0.5 * dense_norm[cid] for cid in sparse_map}


# -- rerank ------------------------------------------------------------


def rerank_llm(
    candidates: list[Chunk],
    paper: PaperRecord,
    gateway: Gateway,
    model_id: str,
    threshold: int = RERANK_THRESHOLD,
) -> list[tuple[Chunk, int]]:
    """One relevance-scoring call per chunk; retain score >= threshold,
    ordered by score descending then candidate (fused) order."""
    query = _rerank_query(paper)
    scored: list[tuple[int, int, Chunk]] = []  # (score, fused_rank, chunk)
    failures = 0
    for rank, chunk in enumerate(candidates):
        prompt = render_prompt("rerank_chunk", query=query, chunk=chunk.text())
        try:
            resp = gateway.complete(
                ChatRequest(
                    model_id=model_id,
                    messages=(Message("user", prompt),),
                    purpose="rerank",
                )
            )
            score = int(resp.content.strip())
            if not 0 <= score <= 10:
                raise ValueError(f"rerank score out of range: {score}")
        except (GatewayError, ValueError) as exc:
            log.warning("rerank dropped chunk %s: %s", chunk.chunk_id, exc)
            failures += 1
            continue
        scored.append((score, rank, chunk))
    if candidates and failures == len(candidates):
        raise RerankFailed("every rerank call failed")
    retained = [(c, s) for s, r, c in sorted(scored, key=lambda t: (-t[0], t[1])) if s >= threshold]
    return retained


def _rerank_query(paper: PaperRecord) -> str:
    # title + abstract; sensitivity knob, the retrieval query is not pinned
    abstract = next(
        (s.body for s in paper.sections if "abstract" in s.heading.casefold()), ""
    )
    return f"{paper.title}\n{abstract}".strip()


retrieval_query = _rerank_query  # same choice for BM25/dense scoring


# -- gap-based selection (alternative strategy, default off) ------------


def gap_select(similarities: list[tuple[str, float]]) -> list[str]:
    """Prefix before the largest drop between consecutive scores; ties on
    gap size resolve to the earliest index."""
    if len(similarities) < 2:
        raise TooFewEntries("need at least 2 entries")
    best_gap = -math.inf
    best_idx = 0
    for i in range(len(similarities) - 1):
        gap = similarities[i][1] - similarities[i + 1][1]
        if gap > best_gap:
            best_gap = gap
            best_idx = i
    return [pid for pid, _ in similarities[: best_idx + 1]]


# -- persistence -------------------------------------------------------


def save_chunk_set(chunk_set: ChunkSet, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "paper_id": chunk_set.paper_id,
        "chunks": [c.to_json() for c in chunk_set.chunks],
    }
    (directory / "chunks.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8"
    )


def load_chunk_set(directory: Path) -> ChunkSet:
    data = json.loads((Path(directory) / "chunks.json").read_text(encoding="utf-8"))
    chunks = tuple(
        Chunk(
            chunk_id=c["chunk_id"],
            source_paper_id=c["source_paper_id"],
            source_kind=SourceKind(c["source_kind"]),
            heading=c["heading"],
            body=c["body"],
            enrichment=c.get("enrichment"),
        )
        for c in data["chunks"]
    )
    return ChunkSet(paper_id=data["paper_id"], chunks=chunks)


def save_embeddings(vectors: dict[str, list[float]], path: Path) -> None:
    """Flat little-endian float32 arrays with a header: dim, then for each
    entry an id length, utf-8 id bytes, and the vector."""
    if not vectors:
        Path(path).write_bytes(struct.pack("<II", 0, 0))
        return
    dim = len(next(iter(vectors.values())))
    out = bytearray(struct.pack("<II", dim, len(vectors)))
    for cid in sorted(vectors):
        vec = vectors[cid]
        cid_bytes = cid.encode("utf-8")
        out += struct.pack("<I", len(cid_bytes))
        out += cid_bytes
        out += struct.pack(f"<{dim}f", *vec)
    Path(path).write_bytes(bytes(out))


def load_embeddings(path: Path) -> dict[str, list[float]]:
    raw = Path(path).read_bytes()
    dim, count = struct.unpack_from("<II", raw, 0)
    offset = 8
    vectors: dict[str, list[float]] = {}
    for _ in range(count):
        (id_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        cid = raw[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vec = list(struct.unpack_from(f"<{dim}f", raw, offset))
        offset += 4 * dim
        vectors[cid] = vec
    return vectors

"""Per-paper pipeline stages and run-directory persistence.

Run layout: runs/<run_id>/{ingest,generate,evaluate}/<paper_id>/ with JSON
artifacts, plus manifest.json carrying a config hash for resumability.
Artifacts are written with sorted keys and no timestamps so re-runs over
the mock backend are byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Optional

from . import agents as agents_mod
from . import evaluation as eval_mod
from . import ingestion, rag, synthesis
from .agents import AgentOutput
from .config import RunConfig
from .gateway import Budget, FixtureBackend, Gateway, HttpBackend
from .judge import feedback_loop
from .mockllm import DeterministicMockBackend
from .model import (
    GeneratedSet,
    GroundTruthSet,
    PaperRecord,
    select_top_sections,
    strip_ground_truth,
    validate_record,
)

log = logging.getLogger(__name__)


class PipelineError(Exception):
    pass


class MissingArtifact(PipelineError):
    pass


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _read_json(path: Path):
    if not path.exists():
        raise MissingArtifact(f"missing artifact: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def config_hash(config: RunConfig) -> str:
    payload = {k: str(v) for k, v in asdict(config).items()}
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode("utf-8")
    ).hexdigest()[:16]


class Run:
    """One run directory plus the gateway wired from config."""

    def __init__(self, config: RunConfig, record_calls: bool = False):
        self.config = config
        self.root = config.runs_dir / config.run_id
        self.gateway = self._build_gateway(record_calls)

    def _build_gateway(self, record_calls: bool) -> Gateway:
        kind = self.config.backend_kind
        if kind == "mock":
            backend = DeterministicMockBackend()
        elif kind == "fixtures":
            backend = FixtureBackend(self.config.fixture_dir)
        else:
            backend = HttpBackend(self.config.endpoint)
        return Gateway(
            backend,
            cache_dir=self.root / "cache",
            budget=Budget(
                max_requests=self.config.max_requests,
                max_total_tokens=self.config.max_total_tokens,
            ),
            max_in_flight=self.config.max_in_flight,
            record_calls=record_calls,
            log=_json_log_line,
        )

    def write_manifest(self) -> None:
        _write_json(self.root / "manifest.json", {"config_hash": config_hash(self.config)})

    # -- paths ---------------------------------------------------------

    def ingest_dir(self, paper_id: str) -> Path:
        return self.root / "ingest" / paper_id

    def generate_dir(self, paper_id: str) -> Path:
        return self.root / "generate" / paper_id

    def evaluate_dir(self, paper_id: str) -> Path:
        return self.root / "evaluate" / paper_id

    # -- ingest --------------------------------------------------------

    def ingest_paper(self, paper_path: Path, force: bool = False) -> str:
        record = PaperRecord.load(paper_path)
        out_dir = self.ingest_dir(record.paper_id)
        if (out_dir / "ground_truth.json").exists() and not force:
            log.info("ingest skip (exists): %s", record.paper_id)
            return record.paper_id
        violations = validate_record(record)
        if violations:
            raise PipelineError(
                f"invalid paper {record.paper_id}: "
                + ", ".join(v.code for v in violations)
            )
        review_path = self.config.reviews_dir / f"{record.paper_id}.json"
        review = ingestion.ReviewDocument.load(review_path) if review_path.exists() else None
        truth = ingestion.build_ground_truth(
            record, review, self.gateway, self.config.utility_model
        )
        store = ingestion.LocalPaperStore(self.config.citation_store_dir)
        citation_service = None
        if self.config.citation_fixtures_dir is not None:
            citation_service = ingestion.FixtureCitationService(
                self.config.citation_fixtures_dir
            )
        corpus = ingestion.harvest_citations(record, store, citation_service)
        _write_json(out_dir / "record.json", record.to_json())
        _write_json(
            out_dir / "citations.json",
            {
                "paper_id": corpus.paper_id,
                "cited_in": [p.to_json() for p in corpus.cited_in],
                "cited_by": [p.to_json() for p in corpus.cited_by],
            },
        )
        _write_json(out_dir / "ground_truth.json", truth.to_json())
        return record.paper_id

    def load_ingested(self, paper_id: str) -> tuple[PaperRecord, GroundTruthSet, ingestion.CitationCorpus]:
        base = self.ingest_dir(paper_id)
        record = PaperRecord.from_json(_read_json(base / "record.json"))
        truth = GroundTruthSet.from_json(_read_json(base / "ground_truth.json"))
        citations = _read_json(base / "citations.json")
        corpus = ingestion.CitationCorpus(
            paper_id=citations["paper_id"],
            cited_in=tuple(PaperRecord.from_json(p) for p in citations["cited_in"]),
            cited_by=tuple(PaperRecord.from_json(p) for p in citations["cited_by"]),
        )
        return record, truth, corpus

    # -- generate ------------------------------------------------------

    def generate_paper(self, paper_id: str, force: bool = False) -> None:
        out_dir = self.generate_dir(paper_id)
        if (out_dir / "final_limitations.json").exists() and not force:
            log.info("generate skip (exists): %s", paper_id)
            return
        record, _, corpus = self.load_ingested(paper_id)
        paper = strip_ground_truth(record)
        if self.config.input_mode == "top3":
            paper = select_top_sections(paper, 3)

        worker_model = self.config.worker_model
        outputs: list[AgentOutput] = []
        runners = {
            "extractor": lambda fb, it: agents_mod.run_extractor(
                paper, self.gateway, worker_model, fb, it
            ),
            "analyzer": lambda fb, it: agents_mod.run_analyzer(
                paper, self.gateway, worker_model, fb, it
            ),
            "reviewer": lambda fb, it: agents_mod.run_reviewer(
                paper, self.gateway, worker_model, fb, it
            ),
        }
        retained_chunks: list[rag.Chunk] = []
        if "citation" in self.config.agents and self.config.rag_enabled:
            retained_chunks = self._retrieve_context(paper_id, paper, corpus)
        runners["citation"] = lambda fb, it: agents_mod.run_citation(
            paper,
            retained_chunks,
            self.gateway,
            worker_model,
            fb,
            it,
            context_budget_chars=self.config.context_budget_chars,
        )

        for agent_name in self.config.agents:
            runner = runners[agent_name]
            initial = runner("", 1)
            final, scorecards = feedback_loop(
                runner,
                initial,
                paper,
                self.gateway,
                self.config.judge_model,
                threshold=self.config.feedback_threshold,
                max_iters=self.config.feedback_max_iters,
            )
            outputs.append(final)
            _write_json(out_dir / f"agent_{agent_name}.json", final.to_json())
            _write_json(
                out_dir / f"scorecards_{agent_name}.json",
                [s.to_json() for s in scorecards],
            )

        final_set = synthesis.consolidate(
            outputs, paper, self.gateway, worker_model
        )
        _write_json(out_dir / "final_limitations.json", final_set.to_json())

    def _retrieve_context(
        self, paper_id: str, paper: PaperRecord, corpus: ingestion.CitationCorpus
    ) -> list[rag.Chunk]:
        chunk_set = rag.build_chunks(
            corpus,
            enrich=self.config.enrich_chunks,
            gateway=self.gateway,
            model_id=self.config.utility_model,
        )
        if not chunk_set.chunks:
            return []
        rag.save_chunk_set(chunk_set, self.generate_dir(paper_id) / "index")
        query = rag.retrieval_query(paper)
        embedder = rag.HashingEmbedder()
        try:
            sparse = rag.score_sparse(query, chunk_set)
        except rag.EmptyQuery:
            sparse = [(c.chunk_id, 0.0) for c in chunk_set.chunks]
        dense = rag.score_dense(query, chunk_set, embedder)
        vectors = {c.chunk_id: embedder.embed(c.text()) for c in chunk_set.chunks}
        rag.save_embeddings(vectors, self.generate_dir(paper_id) / "index" / "embeddings.bin")
        selected_ids = rag.fuse_and_select(sparse, dense, k=self.config.fusion_top_k)
        by_id = {c.chunk_id: c for c in chunk_set.chunks}
        candidates = [by_id[cid] for cid in selected_ids]
        retained = rag.rerank_llm(
            candidates,
            paper,
            self.gateway,
            self.config.utility_model,
            threshold=self.config.rerank_threshold,
        )
        _write_json(
            self.generate_dir(paper_id) / "retained_chunks.json",
            [{"chunk_id": c.chunk_id, "rerank_score": s} for c, s in retained],
        )
        return [c for c, _ in retained]

    # -- evaluate ------------------------------------------------------

    def evaluate_paper(self, paper_id: str, force: bool = False) -> None:
        out_dir = self.evaluate_dir(paper_id)
        if (out_dir / "coverage.json").exists() and not force:
            log.info("evaluate skip (exists): %s", paper_id)
            return
        base = self.ingest_dir(paper_id)
        truth = GroundTruthSet.from_json(_read_json(base / "ground_truth.json"))
        final = synthesis.FinalLimitationSet.from_json(
            _read_json(self.generate_dir(paper_id) / "final_limitations.json")
        )
        generated = GeneratedSet(
            paper_id=paper_id, items=final.items, run_id=self.config.run_id
        )
        record = PaperRecord.from_json(_read_json(base / "record.json"))

        entry = eval_mod.PaperCoverage(c_gt=0.0, m=len(truth.items), j=len(generated.items), matched=[])
        if self.config.eval_pointwise and truth.items:
            judge = eval_mod.PairJudge(self.gateway, self.config.utility_model)
            matrix = eval_mod.build_similarity_matrix(truth, generated, judge)
            entry.c_gt = eval_mod.coverage_gt(matrix) if matrix.m else 0.0
            entry.c_llm = (
                eval_mod.coverage_generated(matrix) if matrix.j else None
            )
            entry.matched = eval_mod.matched_pairs(matrix)
            _write_json(out_dir / "matrix.json", matrix.to_json())
            (out_dir / "agreement.csv").write_text(
                eval_mod.export_agreement_csv(truth, generated, matrix),
                encoding="utf-8",
            )
        if self.config.eval_full_text and truth.items and generated.items:
            entry.full_text_score = eval_mod.full_text_coverage(
                truth, generated, self.gateway, self.config.utility_model
            )
        quality = None
        if self.config.eval_quality_metrics:
            quality = eval_mod.matched_pair_quality(
                entry, truth, generated, rag.HashingEmbedder()
            )
            _write_json(out_dir / "quality.json", quality)
        _write_json(
            out_dir / "coverage.json",
            {
                "paper_id": paper_id,
                "c_gt": entry.c_gt,
                "c_llm": entry.c_llm,
                "m": entry.m,
                "j": entry.j,
                "matched_pairs": [list(p) for p in entry.matched],
                "full_text_score": entry.full_text_score,
            },
        )

    # -- report --------------------------------------------------------

    def build_report(self) -> tuple[eval_mod.CoverageReport, dict]:
        report = eval_mod.CoverageReport()
        quality_by_paper: dict[str, dict] = {}
        eval_root = self.root / "evaluate"
        if not eval_root.exists():
            raise MissingArtifact(f"no evaluate stage outputs under {eval_root}")
        for paper_dir in sorted(eval_root.iterdir()):
            coverage = _read_json(paper_dir / "coverage.json")
            report.per_paper[coverage["paper_id"]] = eval_mod.PaperCoverage(
                c_gt=coverage["c_gt"],
                m=coverage["m"],
                j=coverage["j"],
                matched=[tuple(p) for p in coverage["matched_pairs"]],
                c_llm=coverage.get("c_llm"),
                full_text_score=coverage.get("full_text_score"),
            )
            quality_path = paper_dir / "quality.json"
            if quality_path.exists():
                quality_by_paper[coverage["paper_id"]] = _read_json(quality_path)
        return report, quality_by_paper

    # -- stage drivers -------------------------------------------------

    def run_ingest(self, limit: Optional[int] = None, force: bool = False) -> list[str]:
        paths = sorted(self.config.papers_dir.glob("*.json"))
        if limit is not None:
            paths = paths[:limit]
        self.write_manifest()
        ids = self._map_papers(lambda p: self.ingest_paper(p, force=force), paths)
        return ids

    def run_generate(self, limit: Optional[int] = None, force: bool = False) -> list[str]:
        ingest_root = self.root / "ingest"
        if not ingest_root.exists():
            raise MissingArtifact(f"no ingest stage outputs under {ingest_root}")
        ids = sorted(p.name for p in ingest_root.iterdir() if p.is_dir())
        if limit is not None:
            ids = ids[:limit]
        self._map_papers(lambda pid: self.generate_paper(pid, force=force), ids)
        return ids

    def run_evaluate(self, limit: Optional[int] = None, force: bool = False) -> list[str]:
        generate_root = self.root / "generate"
        if not generate_root.exists():
            raise MissingArtifact(f"no generate stage outputs under {generate_root}")
        ids = sorted(p.name for p in generate_root.iterdir() if p.is_dir())
        if limit is not None:
            ids = ids[:limit]
        self._map_papers(lambda pid: self.evaluate_paper(pid, force=force), ids)
        return ids

    def _map_papers(self, fn, items):
        if self.config.workers <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(fn, items))


def _json_log_line(payload: dict) -> None:
    import sys

    print(json.dumps(payload, sort_keys=True), file=sys.stderr)

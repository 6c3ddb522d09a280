"""Run configuration: declarative TOML file, env-var overrides for secrets."""
from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


VALID_AGENTS = ("extractor", "analyzer", "reviewer", "citation")
VALID_INPUT_MODES = ("full", "top3")
VALID_BACKENDS = ("mock", "fixtures", "http")


@dataclass
class RunConfig:
    # corpus paths
    papers_dir: Path = Path("papers")
    reviews_dir: Path = Path("reviews")
    citation_store_dir: Path = Path("citation_store")
    citation_fixtures_dir: Path | None = None
    # backend
    backend_kind: str = "mock"
    endpoint: str = ""
    fixture_dir: Path | None = None
    worker_model: str = "worker-model"
    judge_model: str = "utility-model"
    utility_model: str = "utility-model"
    generation_temperature: float = 0.0
    max_requests: int | None = None
    max_total_tokens: int | None = None
    max_in_flight: int = 4
    # pipeline toggles
    agents: tuple[str, ...] = VALID_AGENTS
    input_mode: str = "full"
    feedback_max_iters: int = 2
    feedback_threshold: float = 80.0
    rag_enabled: bool = True
    enrich_chunks: bool = False
    gap_select_enabled: bool = False
    rerank_threshold: int = 8
    fusion_top_k: int = 20
    context_budget_chars: int = 60_000
    # evaluation toggles
    eval_pointwise: bool = True
    eval_full_text: bool = False
    eval_quality_metrics: bool = True
    # run identity
    run_id: str = "run"
    runs_dir: Path = Path("runs")
    seed: int = 0
    workers: int = 1

    def validate(self) -> list[str]:
        problems = []
        if self.backend_kind not in VALID_BACKENDS:
            problems.append(f"backend.kind must be one of {VALID_BACKENDS}, got {self.backend_kind!r}")
        if self.backend_kind == "http" and not self.endpoint:
            problems.append("backend.endpoint is required for the http backend")
        if self.backend_kind == "fixtures" and self.fixture_dir is None:
            problems.append("backend.fixture_dir is required for the fixtures backend")
        if not self.agents:
            problems.append("pipeline.agents roster must be non-empty")
        for agent in self.agents:
            if agent not in VALID_AGENTS:
                problems.append(f"unknown agent {agent!r}; valid: {VALID_AGENTS}")
        if self.input_mode not in VALID_INPUT_MODES:
            problems.append(f"pipeline.input_mode must be one of {VALID_INPUT_MODES}")
        if self.feedback_max_iters < 0:
            problems.append("pipeline.feedback_max_iters must be >= 0")
        if not 0 <= self.feedback_threshold <= 100:
            problems.append("pipeline.feedback_threshold must be in [0, 100]")
        if not 0 <= self.rerank_threshold <= 10:
            problems.append("pipeline.rerank_threshold must be in [0, 10]")
        if self.fusion_top_k < 1:
            problems.append("pipeline.fusion_top_k must be >= 1")
        if self.generation_temperature < 0:
            problems.append("backend.generation_temperature must be >= 0")
        if self.workers < 1:
            problems.append("run.workers must be >= 1")
        if not self.papers_dir.exists():
            problems.append(f"corpus.papers_dir does not exist: {self.papers_dir}")
        return problems


def load_config(path: Path) -> RunConfig:
    raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    config = RunConfig()
    corpus = raw.get("corpus", {})
    if "papers_dir" in corpus:
        config.papers_dir = Path(corpus["papers_dir"])
    if "reviews_dir" in corpus:
        config.reviews_dir = Path(corpus["reviews_dir"])
    if "citation_store_dir" in corpus:
        config.citation_store_dir = Path(corpus["citation_store_dir"])
    if "citation_fixtures_dir" in corpus:
        config.citation_fixtures_dir = Path(corpus["citation_fixtures_dir"])

    backend = raw.get("backend", {})
    config.backend_kind = backend.get("kind", config.backend_kind)
    config.endpoint = backend.get("endpoint", config.endpoint)
    if "fixture_dir" in backend:
        config.fixture_dir = Path(backend["fixture_dir"])
    config.worker_model = backend.get("worker_model", config.worker_model)
    config.judge_model = backend.get("judge_model", config.judge_model)
    config.utility_model = backend.get("utility_model", config.utility_model)
    config.generation_temperature = backend.get(
        "generation_temperature", config.generation_temperature
    )
    config.max_requests = backend.get("max_requests", config.max_requests)
    config.max_total_tokens = backend.get("max_total_tokens", config.max_total_tokens)
    config.max_in_flight = backend.get("max_in_flight", config.max_in_flight)

    pipeline = raw.get("pipeline", {})
    if "agents" in pipeline:
        config.agents = tuple(pipeline["agents"])
    config.input_mode = pipeline.get("input_mode", config.input_mode)
    config.feedback_max_iters = pipeline.get("feedback_max_iters", config.feedback_max_iters)
    config.feedback_threshold = pipeline.get("feedback_threshold", config.feedback_threshold)
    config.rag_enabled = pipeline.get("rag_enabled", config.rag_enabled)
    config.enrich_chunks = pipeline.get("enrich_chunks", config.enrich_chunks)
    config.gap_select_enabled = pipeline.get("gap_select", config.gap_select_enabled)
    config.rerank_threshold = pipeline.get("rerank_threshold", config.rerank_threshold)
    config.fusion_top_k = pipeline.get("fusion_top_k", config.fusion_top_k)
    config.context_budget_chars = pipeline.get(
        "context_budget_chars", config.context_budget_chars
    )

    evaluation = raw.get("evaluation", {})
    config.eval_pointwise = evaluation.get("pointwise", config.eval_pointwise)
    config.eval_full_text = evaluation.get("full_text", config.eval_full_text)
    config.eval_quality_metrics = evaluation.get(
        "quality_metrics", config.eval_quality_metrics
    )

    run = raw.get("run", {})
    config.run_id = run.get("run_id", config.run_id)
    if "runs_dir" in run:
        config.runs_dir = Path(run["runs_dir"])
    config.seed = run.get("seed", config.seed)
    config.workers = run.get("workers", config.workers)
    return config

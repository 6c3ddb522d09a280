from __future__ import annotations

import json
from pathlib import Path

import pytest

from limgen.gateway import ChatResponse, Gateway, TransientBackendError


class ScriptedBackend:
    """Test double: canned replies per request purpose, in order.

    A purpose mapped to a list pops replies front-to-back (the last one
    repeats); a string repeats forever. Unknown purposes use `default`.
    A reply that is an Exception instance is raised instead.
    """

    def __init__(self, by_purpose=None, default="- A scripted limitation."):
        self.by_purpose = {
            k: list(v) if isinstance(v, list) else [v]
            for k, v in (by_purpose or {}).items()
        }
        self.default = default
        self.requests = []

    def __call__(self, req):
        self.requests.append(req)
        key = req.purpose
        if key not in self.by_purpose:
            key = req.purpose.split(":", 1)[0]
        replies = self.by_purpose.get(key)
        if replies is None:
            reply = self.default
        else:
            reply = replies.pop(0) if len(replies) > 1 else replies[0]
        if isinstance(reply, Exception):
            raise reply
        return ChatResponse(content=reply)


class FailingBackend:
    def __init__(self, failures: int, then: str = "ok"):
        self.failures = failures
        self.then = then
        self.calls = 0

    def __call__(self, req):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransientBackendError("flaky")
        return ChatResponse(content=self.then)


def make_gateway(backend, cache_dir=None, **kwargs):
    kwargs.setdefault("sleep", lambda _s: None)
    return Gateway(backend, cache_dir=cache_dir, **kwargs)


@pytest.fixture
def scripted_gateway():
    def build(by_purpose=None, default="- A scripted limitation.", **kwargs):
        backend = ScriptedBackend(by_purpose, default)
        return make_gateway(backend, **kwargs), backend

    return build


# -- fixture corpus for end-to-end runs --------------------------------

_PAPER_SPECS = [
    {
        "paper_id": "paper-alpha",
        "title": "Alpha: Sparse Retrieval for Long Documents",
        "body_theme": "retrieval",
        "refs": ["Cited Work One", "Cited Work Two"],
        "citers": ["Citing Work One"],
    },
    {
        "paper_id": "paper-beta",
        "title": "Beta: Curriculum Training for Small Models",
        "body_theme": "training",
        "refs": ["Cited Work Two", "Cited Work Three"],
        "citers": [],
    },
    {
        "paper_id": "paper-gamma",
        "title": "Gamma: Benchmarking Summarization Systems",
        "body_theme": "benchmarking",
        "refs": ["Cited Work One"],
        "citers": ["Citing Work One"],
    },
]

_CITED_SPECS = [
    ("cited-1", "Cited Work One"),
    ("cited-2", "Cited Work Two"),
    ("cited-3", "Cited Work Three"),
    ("citer-1", "Citing Work One"),
]


def _paper_json(spec) -> dict:
    theme = spec["body_theme"]
    return {
        "paper_id": spec["paper_id"],
        "title": spec["title"],
        "year": 2023,
        "sections": [
            {"heading": "Abstract", "text": f"We study {theme} with a new approach."},
            {
                "heading": "Introduction",
                "text": f"Prior {theme} work is fragmented. We unify it.",
            },
            {
                "heading": "Method",
                "text": f"Our {theme} method uses a two-stage design. "
                "The design assumes clean input data.",
            },
            {
                "heading": "Results",
                "text": f"Our approach improves {theme} accuracy by ten points. "
                "However, gains shrink on noisy data.",
            },
            {
                "heading": "Discussion",
                "text": "One limitation of this study is the small evaluation set. "
                "We also only test English corpora. Future work will broaden scope.",
            },
            {
                "heading": "Limitations",
                "text": "Our method only handles short inputs. "
                "The training data may carry selection bias.",
            },
            {"heading": "Conclusion", "text": f"We advanced {theme} research."},
        ],
        "references": [{"title": t, "ids": {}} for t in spec["refs"]],
    }


def _cited_paper_json(paper_id: str, title: str) -> dict:
    return {
        "paper_id": paper_id,
        "title": title,
        "sections": [
            {"heading": "Abstract", "text": f"{title} proposes a stronger baseline."},
            {
                "heading": "Method",
                "text": f"{title} uses a larger dataset and more robust checks.",
            },
            {
                "heading": "Results",
                "text": "It reports gains but only on curated benchmarks.",
            },
        ],
        "references": [],
    }


def build_fixture_corpus(root: Path) -> Path:
    """3-paper corpus with reviews, a citation store, and citer fixtures."""
    papers = root / "papers"
    reviews = root / "reviews"
    store = root / "citation_store"
    citers = root / "citers"
    for d in (papers, reviews, store, citers):
        d.mkdir(parents=True, exist_ok=True)

    from limgen.ingestion import LocalPaperStore
    from limgen.model import PaperRecord

    paper_store = LocalPaperStore(store)
    for paper_id, title in _CITED_SPECS:
        paper_store.put(PaperRecord.from_json(_cited_paper_json(paper_id, title)))

    for spec in _PAPER_SPECS:
        (papers / f"{spec['paper_id']}.json").write_text(
            json.dumps(_paper_json(spec), indent=2), encoding="utf-8"
        )
        (reviews / f"{spec['paper_id']}.json").write_text(
            json.dumps(
                {
                    "paper_id": spec["paper_id"],
                    "reviews": [
                        "The paper is interesting but lacks ablations. "
                        "The evaluation set is small.",
                        "Claims of generality are not supported; only one domain is tested.",
                    ],
                }
            ),
            encoding="utf-8",
        )
        (citers / f"{spec['paper_id']}.json").write_text(
            json.dumps({"results": [{"title": t, "ids": {}} for t in spec["citers"]]}),
            encoding="utf-8",
        )
    return root


def write_run_config(
    root: Path,
    runs_dir: Path,
    run_id: str = "test-run",
    extra_pipeline: dict | None = None,
) -> Path:
    pipeline_lines = {
        "feedback_max_iters": 1,
        **(extra_pipeline or {}),
    }

    def toml_value(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return str(v)
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(toml_value(x) for x in v) + "]"
        return f'"{v}"'

    pipeline_block = "\n".join(
        f"{k} = {toml_value(v)}" for k, v in pipeline_lines.items()
    )
    config_text = f"""
[corpus]
papers_dir = "{root / 'papers'}"
reviews_dir = "{root / 'reviews'}"
citation_store_dir = "{root / 'citation_store'}"
citation_fixtures_dir = "{root / 'citers'}"

[backend]
kind = "mock"

[pipeline]
{pipeline_block}

[run]
run_id = "{run_id}"
runs_dir = "{runs_dir}"
"""
    path = root / f"{run_id}.toml"
    path.write_text(config_text, encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    return build_fixture_corpus(tmp_path_factory.mktemp("corpus"))

"""The four limitation-producing worker agents.

Each agent is prompt assembly + one gateway call + tolerant output
parsing. Extractor/Analyzer/Reviewer see the ground-truth-stripped paper
text; the Citation agent additionally sees rerank-retained chunks.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .gateway import ChatRequest, Gateway, Message
from .model import LimitationItem, PaperRecord, Provenance, is_limitation_heading
from .prompts import render_prompt
from .rag import Chunk

log = logging.getLogger(__name__)

DEFAULT_CONTEXT_BUDGET_CHARS = 60_000


class UnparseableOutput(ValueError):
    pass


class AgentKind(str, Enum):
    EXTRACTOR = "extractor"
    ANALYZER = "analyzer"
    REVIEWER = "reviewer"
    CITATION = "citation"


PROVENANCE_BY_AGENT = {
    AgentKind.EXTRACTOR: Provenance.AUTHOR_STATED,
    AgentKind.ANALYZER: Provenance.INFERRED,
    AgentKind.REVIEWER: Provenance.PEER_REVIEW_DERIVED,
    AgentKind.CITATION: Provenance.CITED,
}

_TEMPLATE_BY_AGENT = {
    AgentKind.EXTRACTOR: "extractor_agent",
    AgentKind.ANALYZER: "analyzer_agent",
    AgentKind.REVIEWER: "reviewer_agent",
    AgentKind.CITATION: "citation_agent",
}


@dataclass(frozen=True)
class AgentOutput:
    agent_kind: AgentKind
    items: tuple[LimitationItem, ...]
    raw_text: str
    iteration: int = 1

    def to_json(self) -> dict:
        return {
            "agent_kind": self.agent_kind.value,
            "items": [i.to_json() for i in self.items],
            "raw_text": self.raw_text,
            "iteration": self.iteration,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AgentOutput":
        return cls(
            agent_kind=AgentKind(data["agent_kind"]),
            items=tuple(LimitationItem.from_json(i) for i in data["items"]),
            raw_text=data["raw_text"],
            iteration=data["iteration"],
        )


_SENTINELS = (
    "no limitations explicitly stated",
    "no inferred limitations identified",
    "no limitations identified",
)

_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)", re.MULTILINE)
_MD_RE = re.compile(r"\*\*|__|\*|`")
_TAG_RE = re.compile(r"\[([^\]]+)\]")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def parse_agent_output(raw: str, kind: AgentKind) -> list[LimitationItem]:
    """Tolerant bullet/numbered-list parser.

    Strips markdown emphasis and bracketed tags; when an item has no
    structured Explanation/Impact fields the justification is whatever
    follows the first sentence boundary.
    """
    stripped = raw.strip()
    if not stripped:
        return []
    lowered = stripped.casefold()
    if any(s in lowered for s in _SENTINELS):
        return []
    items: list[LimitationItem] = []
    provenance = PROVENANCE_BY_AGENT[kind]
    for bullet in _BULLET_RE.findall(raw):
        text = _MD_RE.sub("", bullet).strip()
        text = _TAG_RE.sub("", text).strip()
        if not text:
            continue
        justification: Optional[str] = None
        explanation_match = re.search(r"(?:Explanation|Impact|Justification)\s*:", text)
        if explanation_match:
            statement = text[: explanation_match.start()].strip(" -:;,")
            justification = text[explanation_match.start() :].strip()
            if not statement:
                statement, justification = text, None
        else:
            sentences = _SENTENCE_SPLIT_RE.split(text, maxsplit=1)
            statement = sentences[0].strip()
            if len(sentences) > 1 and sentences[1].strip():
                justification = sentences[1].strip()
        items.append(
            LimitationItem(
                text=statement,
                provenance=provenance,
                source_ref=_extract_source_ref(bullet),
                justification=justification,
            )
        )
    if not items and len(stripped) > 40:
        raise UnparseableOutput(f"no items parsed from non-trivial output: {stripped[:80]!r}")
    return items


def _extract_source_ref(bullet: str) -> Optional[str]:
    match = re.search(r"\(\s*(?:Section|Source|Paper)\s*:\s*([^)]+)\)", bullet, re.IGNORECASE)
    return match.group(1).strip() if match else None


def _assert_stripped(paper: PaperRecord) -> None:
    for section in paper.sections:
        if is_limitation_heading(section.heading):
            raise ValueError(
                f"agent input still contains ground-truth section {section.heading!r}"
            )


def _run_text_agent(
    kind: AgentKind,
    paper: PaperRecord,
    gateway: Gateway,
    model_id: str,
    feedback: str = "",
    temperature: float = 0.0,
    iteration: int = 1,
) -> AgentOutput:
    _assert_stripped(paper)
    prompt = render_prompt(
        _TEMPLATE_BY_AGENT[kind],
        paper_text=paper.full_text(),
        feedback=feedback,
    )
    resp = gateway.complete(
        ChatRequest(
            model_id=model_id,
            messages=(Message("user", prompt),),
            temperature=temperature,
            purpose=f"agent:{kind.value}",
        )
    )
    items = parse_agent_output(resp.content, kind)
    return AgentOutput(
        agent_kind=kind, items=tuple(items), raw_text=resp.content, iteration=iteration
    )


def run_extractor(paper, gateway, model_id, feedback="", iteration=1) -> AgentOutput:
    return _run_text_agent(
        AgentKind.EXTRACTOR, paper, gateway, model_id, feedback, iteration=iteration
    )


def run_analyzer(paper, gateway, model_id, feedback="", iteration=1) -> AgentOutput:
    return _run_text_agent(
        AgentKind.ANALYZER, paper, gateway, model_id, feedback, iteration=iteration
    )


def run_reviewer(paper, gateway, model_id, feedback="", iteration=1) -> AgentOutput:
    return _run_text_agent(
        AgentKind.REVIEWER, paper, gateway, model_id, feedback, iteration=iteration
    )


def run_citation(
    paper: PaperRecord,
    context: list[Chunk],
    gateway: Gateway,
    model_id: str,
    feedback: str = "",
    iteration: int = 1,
    context_budget_chars: int = DEFAULT_CONTEXT_BUDGET_CHARS,
) -> AgentOutput:
    """Citation agent over the input paper plus rerank-retained chunks.

    `context` must arrive in retention order (best first); chunks past the
    budget are dropped lowest-ranked first.
    """
    _assert_stripped(paper)
    kept = list(context)
    while kept and _context_chars(kept) > context_budget_chars:
        dropped = kept.pop()
        log.warning("context over budget, dropped chunk %s", dropped.chunk_id)
    if kept:
        chunk_text = "\n\n".join(
            f"[{c.source_paper_id} / {c.heading}]\n{c.text()}" for c in kept
        )
    else:
        chunk_text = "(no retained passages; reason from the input paper alone)"
    prompt = render_prompt(
        "citation_agent",
        paper_text=paper.full_text(),
        cited_chunks=chunk_text,
        feedback=feedback,
    )
    resp = gateway.complete(
        ChatRequest(
            model_id=model_id,
            messages=(Message("user", prompt),),
            purpose="agent:citation",
        )
    )
    items = parse_agent_output(resp.content, AgentKind.CITATION)
    raw = resp.content
    if not kept:
        raw = "[paper-only mode: no retained chunks]\n" + raw
    return AgentOutput(
        agent_kind=AgentKind.CITATION, items=tuple(items), raw_text=raw, iteration=iteration
    )


def _context_chars(chunks: list[Chunk]) -> int:
    return sum(len(c.text()) for c in chunks)

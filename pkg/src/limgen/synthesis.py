"""Master consolidation of worker outputs into one final limitation set."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .agents import AgentKind, AgentOutput
from .gateway import ChatRequest, Gateway, GatewayError, Message
from .model import LimitationItem, PaperRecord, Provenance, dedup_items
from .prompts import render_prompt
from .textutil import fuzzy_contained, normalize_text

log = logging.getLogger(__name__)

FUZZY_CONTAINMENT_THRESHOLD = 0.7


@dataclass(frozen=True)
class FinalLimitationSet:
    paper_id: str
    items: tuple[LimitationItem, ...]
    source_counts: dict[str, int]

    def to_json(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "items": [i.to_json() for i in self.items],
            "source_counts": self.source_counts,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FinalLimitationSet":
        return cls(
            paper_id=data["paper_id"],
            items=tuple(LimitationItem.from_json(i) for i in data["items"]),
            source_counts=dict(data["source_counts"]),
        )


_TAG_TO_PROVENANCE = {
    "author-stated": Provenance.AUTHOR_STATED,
    "inferred": Provenance.INFERRED,
    "peer-review-derived": Provenance.PEER_REVIEW_DERIVED,
    "cited": Provenance.CITED,
}

_ITEM_RE = re.compile(r"^\s*\d+[.)]\s+(.*\S)", re.MULTILINE)
_TAG_RE = re.compile(r"\[([^\]]+)\]")


def _parse_master_output(raw: str) -> list[LimitationItem]:
    items: list[LimitationItem] = []
    for line in _ITEM_RE.findall(raw):
        provenance = None
        for tag in _TAG_RE.findall(line):
            key = tag.strip().casefold()
            if key in _TAG_TO_PROVENANCE:
                provenance = _TAG_TO_PROVENANCE[key]
        if provenance is None:
            continue
        body = _TAG_RE.sub("", line).strip()
        justification = ""
        match = re.search(r"Justification\s*:\s*", body, re.IGNORECASE)
        if match:
            statement = body[: match.start()].strip(" -:;,")
            justification = body[match.end() :].strip()
        else:
            statement = body
        if not justification:
            justification = "Consolidated from the agent analyses."
        items.append(
            LimitationItem(text=statement, provenance=provenance, justification=justification)
        )
    return items


def _attribute(item: LimitationItem, outputs: list[AgentOutput]) -> AgentKind | None:
    for output in outputs:
        for worker_item in output.items:
            if normalize_text(worker_item.text) == normalize_text(item.text):
                return output.agent_kind
    for output in outputs:
        if fuzzy_contained(item.text, output.raw_text, FUZZY_CONTAINMENT_THRESHOLD):
            return output.agent_kind
    return None


def _mechanical_fallback(paper_id: str, outputs: list[AgentOutput]) -> FinalLimitationSet:
    union = []
    for output in outputs:
        for item in output.items:
            justification = item.justification or "Reported by the worker analysis."
            union.append(
                LimitationItem(
                    text=item.text,
                    provenance=item.provenance,
                    source_ref=item.source_ref,
                    justification=justification,
                )
            )
    items = dedup_items(union)
    return FinalLimitationSet(
        paper_id=paper_id, items=items, source_counts=_count_sources(items, outputs)
    )


def _count_sources(items: tuple[LimitationItem, ...], outputs: list[AgentOutput]) -> dict[str, int]:
    counts = {kind.value: 0 for kind in AgentKind}
    for item in items:
        kind = _attribute(item, outputs)
        if kind is not None:
            counts[kind.value] += 1
    return counts


def consolidate(
    outputs: list[AgentOutput],
    paper: PaperRecord,
    gateway: Gateway,
    model_id: str,
) -> FinalLimitationSet:
    """One master call over all worker outputs, then a mechanical pass:
    normalized-text de-dup, containment validation, and appending any
    worker item the merge neither matched nor consolidated."""
    if all(not o.items for o in outputs):
        return FinalLimitationSet(
            paper_id=paper.paper_id,
            items=(),
            source_counts={kind.value: 0 for kind in AgentKind},
        )

    by_kind = {o.agent_kind: o for o in outputs}

    def raw_for(kind: AgentKind) -> str:
        output = by_kind.get(kind)
        return output.raw_text if output is not None else "(no output)"

    prompt = render_prompt(
        "master_agent",
        extractor_output=raw_for(AgentKind.EXTRACTOR),
        analyzer_output=raw_for(AgentKind.ANALYZER),
        reviewer_output=raw_for(AgentKind.REVIEWER),
        citation_output=raw_for(AgentKind.CITATION),
    )
    input_union = "\n".join(o.raw_text for o in outputs)
    try:
        resp = gateway.complete(
            ChatRequest(
                model_id=model_id,
                messages=(Message("user", prompt),),
                purpose="master",
            )
        )
        merged = _parse_master_output(resp.content)
        if not merged:
            raise ValueError("master output parsed to zero items")
        for item in merged:
            if not fuzzy_contained(item.text, input_union, FUZZY_CONTAINMENT_THRESHOLD):
                raise ValueError(f"master item failed containment: {item.text[:60]!r}")
    except (GatewayError, ValueError) as exc:
        log.warning("master merge fell back to mechanical union for %s: %s", paper.paper_id, exc)
        return _mechanical_fallback(paper.paper_id, outputs)

    # completeness check: append any worker item the merge did not absorb
    merged_keys = {normalize_text(i.text) for i in merged}
    merged_union_text = "\n".join(i.text for i in merged)
    for output in outputs:
        for worker_item in output.items:
            if normalize_text(worker_item.text) in merged_keys:
                continue
            if fuzzy_contained(worker_item.text, merged_union_text, FUZZY_CONTAINMENT_THRESHOLD):
                continue
            log.warning(
                "master merge missed an input item, appended mechanically: %.60s",
                worker_item.text,
            )
            merged.append(
                LimitationItem(
                    text=worker_item.text,
                    provenance=worker_item.provenance,
                    source_ref=worker_item.source_ref,
                    justification=worker_item.justification
                    or "Reported by the worker analysis.",
                )
            )
            merged_keys.add(normalize_text(worker_item.text))

    items = dedup_items(merged)
    return FinalLimitationSet(
        paper_id=paper.paper_id,
        items=items,
        source_counts=_count_sources(items, outputs),
    )

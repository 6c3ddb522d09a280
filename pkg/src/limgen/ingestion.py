"""Build paper records, ground-truth limitation sets, and citation corpora.

Author-stated limitations come from a rule-based span scan refined by an
LLM; reviewer-stated limitations come from pre-fetched review JSON; both
streams merge into one de-duplicated ground truth per paper. The citation
corpus pairs works the paper cites with works citing it, resolved against
a local store of parsed papers.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import requests

from .gateway import (
    ChatRequest,
    Gateway,
    GatewayError,
    Message,
    TransientBackendError,
)
from .model import (
    GroundTruthSet,
    LimitationItem,
    PaperRecord,
    Provenance,
    dedup_items,
)
from .prompts import render_prompt
from .textutil import fuzzy_contained, normalize_text

log = logging.getLogger(__name__)

DEFAULT_EXCLUDED_SECTIONS = ("abstract", "introduction", "related work")
DEFAULT_TERMINAL_KEYWORDS = ("grant", "acknowledgment", "acknowledgement", "future work")

FUZZY_CONTAINMENT_THRESHOLD = 0.7


class CitationServiceUnavailable(Exception):
    pass


@dataclass(frozen=True)
class ReviewDocument:
    paper_id: str
    review_texts: tuple[str, ...]

    @classmethod
    def load(cls, path: Path) -> "ReviewDocument":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(paper_id=data["paper_id"], review_texts=tuple(data.get("reviews", [])))


@dataclass(frozen=True)
class CitationCorpus:
    paper_id: str
    cited_in: tuple[PaperRecord, ...]
    cited_by: tuple[PaperRecord, ...]


def _is_excluded(heading: str, excluded: tuple[str, ...]) -> bool:
    h = heading.casefold()
    return any(e in h for e in excluded)


def extract_author_span_rule_based(
    record: PaperRecord,
    excluded_sections: tuple[str, ...] = DEFAULT_EXCLUDED_SECTIONS,
    terminal_keywords: tuple[str, ...] = DEFAULT_TERMINAL_KEYWORDS,
) -> str:
    """Scan section bodies for "limitation", capture to section end or the
    first terminal keyword; concatenates captures in document order."""
    spans: list[str] = []
    for section in record.sections:
        if _is_excluded(section.heading, excluded_sections):
            continue
        body = section.body
        lower = body.casefold()
        hit = lower.find("limitation")
        if hit == -1:
            continue
        # back up to the start of the sentence containing the hit
        boundary = max(body.rfind(c, 0, hit) for c in ".!?\n")
        start = boundary + 1 if boundary != -1 else 0
        capture = body[start:].lstrip()
        stop = len(capture)
        capture_lower = capture.casefold()
        for keyword in terminal_keywords:
            # ignore a keyword overlapping the capture start
            pos = capture_lower.find(keyword, 1)
            if pos != -1 and pos < stop:
                stop = pos
        spans.append(capture[:stop].strip())
    return "\n".join(s for s in spans if s)


def _parse_bullets(text: str) -> list[str]:
    bullets = re.findall(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)", text, re.MULTILINE)
    return [b.strip() for b in bullets if b.strip()]


def refine_limitations_llm(
    span: str,
    gateway: Gateway,
    model_id: str,
    threshold: float = FUZZY_CONTAINMENT_THRESHOLD,
) -> list[LimitationItem]:
    """LLM re-extraction of precise limitation content from a raw span.

    Returned items must pass fuzzy containment against the span; anything
    the model invented is dropped.
    """
    if not span.strip():
        raise ValueError("span must be non-empty")
    prompt = render_prompt("refine_limitations", span=span)
    resp = gateway.complete(
        ChatRequest(
            model_id=model_id,
            messages=(Message("user", prompt),),
            purpose="refine",
        )
    )
    items = []
    for text in _parse_bullets(resp.content):
        if fuzzy_contained(text, span, threshold):
            items.append(LimitationItem(text=text, provenance=Provenance.AUTHOR_STATED))
        else:
            log.warning("refined item failed containment, dropped: %.60s", text)
    if not items:
        log.warning("EmptyRefinement: model returned no contained items for span")
    return items


def extract_review_limitations(
    review: ReviewDocument,
    gateway: Gateway,
    model_id: str,
) -> list[LimitationItem]:
    """One gateway call per review block; union of parsed critique items."""
    if not review.review_texts:
        raise ValueError("review_texts must be non-empty")
    items: list[LimitationItem] = []
    for block in review.review_texts:
        prompt = render_prompt("extract_review", review=block)
        try:
            resp = gateway.complete(
                ChatRequest(
                    model_id=model_id,
                    messages=(Message("user", prompt),),
                    purpose="review_extract",
                )
            )
        except GatewayError as exc:
            log.warning("review block skipped for %s: %s", review.paper_id, exc)
            continue
        for text in _parse_bullets(resp.content):
            items.append(LimitationItem(text=text, provenance=Provenance.PEER_REVIEW_DERIVED))
    return items


def merge_limitation_sets(
    paper_id: str,
    author: list[LimitationItem],
    review: list[LimitationItem],
    gateway: Gateway,
    model_id: str,
    threshold: float = FUZZY_CONTAINMENT_THRESHOLD,
) -> GroundTruthSet:
    """LLM merge of the two streams, validated against their union.

    Falls back to a mechanical union + normalized-text de-dup when the
    merge output contains material absent from the inputs.
    """
    if not author and not review:
        return GroundTruthSet(paper_id=paper_id, items=())
    if not author:
        return GroundTruthSet(paper_id=paper_id, items=tuple(dedup_items(review)))
    if not review:
        return GroundTruthSet(paper_id=paper_id, items=tuple(dedup_items(author)))

    author_block = "\n".join(f"- {i.text}" for i in author)
    review_block = "\n".join(f"- {i.text}" for i in review)
    prompt = render_prompt("merge_streams", author=author_block, review=review_block)
    source_union = author_block + "\n" + review_block
    author_keys = {normalize_text(i.text) for i in author}

    try:
        resp = gateway.complete(
            ChatRequest(
                model_id=model_id,
                messages=(Message("user", prompt),),
                purpose="merge",
            )
        )
        merged_texts = _parse_bullets(resp.content)
        if not merged_texts or not all(
            fuzzy_contained(t, source_union, threshold) for t in merged_texts
        ):
            raise ValueError("merge output failed containment validation")
    except (GatewayError, ValueError) as exc:
        log.warning("merge fell back to mechanical union for %s: %s", paper_id, exc)
        return GroundTruthSet(paper_id=paper_id, items=tuple(dedup_items(author + review)))

    items = [
        LimitationItem(
            text=t,
            provenance=(
                Provenance.AUTHOR_STATED
                if normalize_text(t) in author_keys
                else Provenance.PEER_REVIEW_DERIVED
            ),
        )
        for t in merged_texts
    ]
    return GroundTruthSet(paper_id=paper_id, items=tuple(dedup_items(items)))


def build_ground_truth(
    record: PaperRecord,
    review: Optional[ReviewDocument],
    gateway: Gateway,
    model_id: str,
) -> GroundTruthSet:
    """Full two-stream pipeline: rule-based scan, refinement, review
    extraction, merge."""
    span = extract_author_span_rule_based(record)
    author = refine_limitations_llm(span, gateway, model_id) if span else []
    reviewer = (
        extract_review_limitations(review, gateway, model_id)
        if review is not None and review.review_texts
        else []
    )
    return merge_limitation_sets(record.paper_id, author, reviewer, gateway, model_id)


def _normalize_title(title: str) -> str:
    return re.sub(r"[^\w\s]", "", title.casefold()).strip()


class LocalPaperStore:
    """Directory of PaperRecord JSON files keyed by normalized-title hash."""

    def __init__(self, root: Path):
        self.root = Path(root)

    @staticmethod
    def key_for_title(title: str) -> str:
        return hashlib.sha256(_normalize_title(title).encode("utf-8")).hexdigest()[:16]

    def path_for_title(self, title: str) -> Path:
        return self.root / f"{self.key_for_title(title)}.json"

    def get_by_title(self, title: str) -> Optional[PaperRecord]:
        path = self.path_for_title(title)
        if not path.exists():
            return None
        return PaperRecord.load(path)

    def put(self, record: PaperRecord) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path_for_title(record.title)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record.to_json(), sort_keys=True), encoding="utf-8")
        tmp.replace(path)


class CitationService:
    """HTTP works-citing endpoint returning {"results": [{"title", "ids"}]}."""

    def __init__(self, base_url: str, timeout: float = 30.0, max_attempts: int = 3):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_attempts = max_attempts

    def works_citing(self, paper_id: str) -> list[dict]:
        last: Optional[Exception] = None
        for attempt in range(self.max_attempts):
            try:
                resp = requests.get(
                    f"{self.base_url}/works-citing/{paper_id}", timeout=self.timeout
                )
                if resp.status_code >= 500:
                    raise TransientBackendError(f"server error {resp.status_code}")
                resp.raise_for_status()
                return list(resp.json().get("results", []))
            except (requests.RequestException, TransientBackendError, ValueError) as exc:
                last = exc
                if attempt + 1 < self.max_attempts:
                    time.sleep(0.2 * (2**attempt))
        raise CitationServiceUnavailable(str(last))


class FixtureCitationService:
    """Offline stand-in: per-paper JSON files of citing works."""

    def __init__(self, fixture_dir: Path):
        self.fixture_dir = Path(fixture_dir)

    def works_citing(self, paper_id: str) -> list[dict]:
        path = self.fixture_dir / f"{paper_id}.json"
        if not path.exists():
            return []
        return list(json.loads(path.read_text(encoding="utf-8")).get("results", []))


def harvest_citations(
    record: PaperRecord,
    store: LocalPaperStore,
    citation_service=None,
) -> CitationCorpus:
    """Resolve cited-in from references and cited-by from the citation
    service, both against the local store; unmatched works are skipped."""
    seen_ids = {record.paper_id}
    cited_in: list[PaperRecord] = []
    misses = 0
    for ref in record.references:
        found = store.get_by_title(ref.title)
        if found is None:
            misses += 1
            continue
        if found.paper_id in seen_ids:
            continue
        seen_ids.add(found.paper_id)
        cited_in.append(found)

    cited_by: list[PaperRecord] = []
    if citation_service is not None:
        try:
            works = citation_service.works_citing(record.paper_id)
        except CitationServiceUnavailable as exc:
            log.warning("citation service unavailable for %s: %s", record.paper_id, exc)
            works = []
        for work in works:
            found = store.get_by_title(work.get("title", ""))
            if found is None:
                misses += 1
                continue
            if found.paper_id in seen_ids:
                continue
            seen_ids.add(found.paper_id)
            cited_by.append(found)
    if misses:
        log.info("%d citation works not in local store for %s", misses, record.paper_id)
    return CitationCorpus(
        paper_id=record.paper_id, cited_in=tuple(cited_in), cited_by=tuple(cited_by)
    )

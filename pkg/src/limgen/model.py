"""Domain types shared by every pipeline stage, plus section utilities.

All types are frozen dataclasses: immutable after construction, safe to
share across concurrent tasks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional

from .textutil import normalize_text


class Provenance(str, Enum):
    AUTHOR_STATED = "Author-stated"
    INFERRED = "Inferred"
    PEER_REVIEW_DERIVED = "Peer-review-derived"
    CITED = "Cited"


# Merge precedence on provenance collision, highest first.
PROVENANCE_PRECEDENCE = [
    Provenance.AUTHOR_STATED,
    Provenance.PEER_REVIEW_DERIVED,
    Provenance.INFERRED,
    Provenance.CITED,
]


@dataclass(frozen=True)
class Section:
    heading: str
    body: str
    index: int


@dataclass(frozen=True)
class RefEntry:
    title: str
    ids: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PaperRecord:
    paper_id: str
    title: str
    sections: tuple[Section, ...]
    references: tuple[RefEntry, ...] = ()
    venue_year: Optional[int] = None

    @classmethod
    def from_json(cls, data: dict) -> "PaperRecord":
        sections = tuple(
            Section(heading=s.get("heading", ""), body=s.get("text", ""), index=i)
            for i, s in enumerate(data.get("sections", []))
        )
        references = tuple(
            RefEntry(title=r.get("title", ""), ids=dict(r.get("ids", {})))
            for r in data.get("references", [])
        )
        return cls(
            paper_id=data.get("paper_id", ""),
            title=data.get("title", ""),
            sections=sections,
            references=references,
            venue_year=data.get("year"),
        )

    def to_json(self) -> dict:
        out: dict[str, Any] = {
            "paper_id": self.paper_id,
            "title": self.title,
            "sections": [{"heading": s.heading, "text": s.body} for s in self.sections],
            "references": [{"title": r.title, "ids": r.ids} for r in self.references],
        }
        if self.venue_year is not None:
            out["year"] = self.venue_year
        return out

    @classmethod
    def load(cls, path: Path) -> "PaperRecord":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def full_text(self) -> str:
        return "\n\n".join(f"{s.heading}\n{s.body}" for s in self.sections)


@dataclass(frozen=True)
class LimitationItem:
    text: str
    provenance: Provenance
    source_ref: Optional[str] = None
    justification: Optional[str] = None

    def to_json(self) -> dict:
        out: dict[str, Any] = {"text": self.text, "provenance": self.provenance.value}
        if self.source_ref is not None:
            out["source_ref"] = self.source_ref
        if self.justification is not None:
            out["justification"] = self.justification
        return out

    @classmethod
    def from_json(cls, data: dict) -> "LimitationItem":
        return cls(
            text=data["text"],
            provenance=Provenance(data["provenance"]),
            source_ref=data.get("source_ref"),
            justification=data.get("justification"),
        )


def dedup_items(items: Iterable[LimitationItem]) -> tuple[LimitationItem, ...]:
    """Drop items whose normalized text collides with an earlier item.

    On collision the earlier item wins unless the later one carries a
    higher-precedence provenance tag.
    """
    kept: dict[str, LimitationItem] = {}
    order: list[str] = []
    rank = {p: i for i, p in enumerate(PROVENANCE_PRECEDENCE)}
    for item in items:
        key = normalize_text(item.text)
        if not key:
            continue
        if key not in kept:
            kept[key] = item
            order.append(key)
        elif rank[item.provenance] < rank[kept[key].provenance]:
            kept[key] = item
    return tuple(kept[k] for k in order)


@dataclass(frozen=True)
class GroundTruthSet:
    paper_id: str
    items: tuple[LimitationItem, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", dedup_items(self.items))

    def to_json(self) -> dict:
        return {"paper_id": self.paper_id, "items": [i.to_json() for i in self.items]}

    @classmethod
    def from_json(cls, data: dict) -> "GroundTruthSet":
        return cls(
            paper_id=data["paper_id"],
            items=tuple(LimitationItem.from_json(i) for i in data["items"]),
        )


@dataclass(frozen=True)
class GeneratedSet:
    paper_id: str
    items: tuple[LimitationItem, ...]
    run_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", dedup_items(self.items))

    def to_json(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "run_id": self.run_id,
            "items": [i.to_json() for i in self.items],
        }

    @classmethod
    def from_json(cls, data: dict) -> "GeneratedSet":
        return cls(
            paper_id=data["paper_id"],
            items=tuple(LimitationItem.from_json(i) for i in data["items"]),
            run_id=data.get("run_id", ""),
        )


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


def validate_record(record: PaperRecord) -> list[Violation]:
    """Collect every invariant violation; never raises."""
    violations: list[Violation] = []
    if not record.paper_id.strip():
        violations.append(Violation("EMPTY_PAPER_ID", "paper_id is empty"))
    if not record.sections:
        violations.append(Violation("EMPTY_SECTIONS", "record has no sections"))
    last_index = -1
    for section in record.sections:
        if not section.heading.strip():
            violations.append(
                Violation("EMPTY_HEADING", f"section index {section.index} heading is blank")
            )
        if section.index <= last_index:
            violations.append(
                Violation(
                    "NON_MONOTONIC_INDEX",
                    f"section index {section.index} does not increase past {last_index}",
                )
            )
        else:
            last_index = section.index
    return violations


LIMITATION_HEADING_TOKEN = "limitation"


def is_limitation_heading(heading: str) -> bool:
    return LIMITATION_HEADING_TOKEN in heading.casefold()


def strip_ground_truth(record: PaperRecord) -> PaperRecord:
    """Remove whole sections whose heading names limitations; idempotent."""
    kept = tuple(s for s in record.sections if not is_limitation_heading(s.heading))
    if len(kept) == len(record.sections):
        return record
    return replace(record, sections=kept)


DEFAULT_SECTION_PRIORITY = ("abstract", "introduction", "results", "experiments")


def select_top_sections(
    record: PaperRecord,
    k: int,
    priority: tuple[str, ...] = DEFAULT_SECTION_PRIORITY,
) -> PaperRecord:
    """Retain up to k sections matching the priority list, document order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    matched = []
    matched_priorities: set[str] = set()
    for section in record.sections:
        heading = section.heading.casefold()
        for key in priority:
            # bidirectional substring so abbreviated headings ("Intro") match
            if key in heading or (heading and heading in key):
                matched.append((priority.index(key), section))
                matched_priorities.add(key)
                break
    # rank by priority order, keep at most k, restore document order
    matched.sort(key=lambda pair: (pair[0], pair[1].index))
    chosen = sorted((s for _, s in matched[:k]), key=lambda s: s.index)
    return replace(record, sections=tuple(chosen))

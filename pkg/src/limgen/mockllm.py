"""Deterministic offline backend: synthesizes plausible completions.

Routes on `ChatRequest.purpose` and derives any free parameters from a
hash of the prompt, so identical runs produce identical bytes with zero
network. Extraction-style purposes quote sentences verbatim from the
prompt's embedded source text, which keeps the pipeline's fuzzy
containment gates satisfied.
"""
from __future__ import annotations

import hashlib
import json
import re

from .gateway import ChatRequest, ChatResponse
from .textutil import split_sentences, token_jaccard, tokenize

_CUE_WORDS = (
    "limit",
    "bias",
    "only",
    "lack",
    "small",
    "however",
    "cannot",
    "constraint",
    "insufficient",
    "not",
)

_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)", re.MULTILINE)


def _digest(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def _user_content(req: ChatRequest) -> str:
    for message in reversed(req.messages):
        if message.role == "user":
            return message.content
    return req.messages[-1].content


def _after_marker(text: str, marker: str) -> str:
    idx = text.find(marker)
    return text[idx + len(marker) :] if idx != -1 else text


def _between(text: str, start: str, end: str) -> str:
    chunk = _after_marker(text, start)
    idx = chunk.find(end)
    return chunk[:idx] if idx != -1 else chunk

def _cue_sentences(text: str, limit: int = 4) -> list[str]:
    sentences = split_sentences(text)
    hits = [s for s in sentences if any(c in s.casefold() for c in _CUE_WORDS)]
    if not hits:
        hits = sentences[:2]
    return hits[:limit]


def _bullets(lines: list[str]) -> str:
    if not lines:
        return "No limitations explicitly stated in the article."
    return "\n".join(f"- {line}" for line in lines)


class DeterministicMockBackend:
    """Offline synthesizer keyed on request purpose."""

    def __call__(self, req: ChatRequest) -> ChatResponse:
        purpose = req.purpose.split(":", 1)[0]
        handler = getattr(self, f"_handle_{purpose}", None)
        if handler is None:
            return ChatResponse(content=self._default(req))
        return ChatResponse(content=handler(req))

    def _default(self, req: ChatRequest) -> str:
        return _bullets(_cue_sentences(_user_content(req)))

    # -- ingestion ------------------------------------------------------

    def _handle_refine(self, req: ChatRequest) -> str:
        span = _after_marker(_user_content(req), "Text:")
        return _bullets(_cue_sentences(span, limit=6))

    def _handle_review_extract(self, req: ChatRequest) -> str:
        block = _after_marker(_user_content(req), "Review:")
        return _bullets(_cue_sentences(block, limit=6))

    def _handle_merge(self, req: ChatRequest) -> str:
        found = _BULLET_RE.findall(_user_content(req))
        seen: list[str] = []
        for line in found:
            if line not in seen:
                seen.append(line)
        return _bullets(seen)

    def _handle_summary(self, req: ChatRequest) -> str:
        text = _after_marker(_user_content(req), "Text:")
        sentences = split_sentences(text)
        return sentences[0] if sentences else "Summary unavailable."

    # -- worker agents --------------------------------------------------

    def _handle_agent(self, req: ChatRequest) -> str:
        content = _user_content(req)
        kind = req.purpose.split(":", 1)[-1]
        if kind == "citation":
            source = _after_marker(content, "Cited Papers:")
        else:
            source = _after_marker(content, "Article:")
        sentences = _cue_sentences(source, limit=4)
        if not sentences:
            return "No limitations explicitly stated in the article."
        return "\n".join(f"- {s}" for s in sentences)

    # -- judging --------------------------------------------------------

    def _handle_rerank(self, req: ChatRequest) -> str:
        digest = _digest(_user_content(req))
        return str(digest[0] % 11)

    def _handle_judge(self, req: ChatRequest) -> str:
        digest = _digest(_user_content(req))
        names = ["Depth", "Originality", "Actionability", "Topic Coverage"]
        evaluation = {}
        for i, name in enumerate(names):
            score = 6 + digest[i] % 5  # 6..10 keeps most loops short
            evaluation[name] = {
                "score": score,
                "strengths": f"{name} is adequately handled.",
                "issues": f"{name} could probe deeper issues.",
                "suggestions": f"Sharpen the {name.lower()} of each point.",
            }
        weights = {"Depth": 0.2, "Originality": 0.2, "Actionability": 0.3, "Topic Coverage": 0.3}
        total = 10 * sum(evaluation[n]["score"] * weights[n] for n in names)
        return json.dumps(
            {"agent": "Worker", "total score": round(total, 2), "evaluation": evaluation}
        )

    def _handle_quality(self, req: ChatRequest) -> str:
        digest = _digest(_user_content(req))
        names = ["Faithfulness", "Soundness", "Importance"]
        payload = {
            name: {
                "rating": 1 + digest[i] % 5,
                "explanation": f"{name} assessed from the provided material.",
            }
            for i, name in enumerate(names)
        }
        return json.dumps(payload)

    def _handle_pair(self, req: ChatRequest) -> str:
        content = _user_content(req)
        a = _between(content, "Limitation A:", "Limitation B:")
        b = _after_marker(content, "Limitation B:")
        similar = token_jaccard(tokenize(a), tokenize(b)) >= 0.25
        return "1" if similar else "0"

    def _handle_fulltext(self, req: ChatRequest) -> str:
        digest = _digest(_user_content(req))
        return f"{(digest[0] * 256 + digest[1]) % 10001 / 100:.2f}"

    # -- master synthesis -----------------------------------------------

    def _handle_master(self, req: ChatRequest) -> str:
        content = _user_content(req)
        sections = [
            ("Extractor Agent Analysis:", "[Author-stated]"),
            ("Analyzer Agent Analysis:", "[Inferred]"),
            ("Reviewer Agent Analysis:", "[Peer-review-derived]"),
            ("Citation Agent Analysis:", "[Cited]"),
        ]
        lines: list[str] = []
        seen: set[str] = set()
        for i, (marker, tag) in enumerate(sections):
            if marker not in content:
                continue
            end = sections[i + 1][0] if i + 1 < len(sections) else "Please merge"
            block = _between(content, marker, end)
            for text in _BULLET_RE.findall(block):
                if text in seen:
                    continue
                seen.add(text)
                lines.append(
                    f"{len(lines) + 1}. {text} "
                    f"Justification: reported in the agent analyses. {tag}"
                )
        if not lines:
            return "No limitations identified."
        return "\n".join(lines)

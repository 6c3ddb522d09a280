"""Pointwise coverage metrics, matched-pair quality metrics, and the
full-text coverage baseline."""
from __future__ import annotations

import csv
import io
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .gateway import ChatRequest, Gateway, GatewayError, Message
from .model import GeneratedSet, GroundTruthSet, LimitationItem
from .prompts import render_prompt
from .rag import Embedder, cosine
from .textutil import normalize_text, tokenize

log = logging.getLogger(__name__)


class EvaluationJudgmentFailed(Exception):
    pass


class EmptyGroundTruth(ValueError):
    pass


class EmptyGenerated(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


# -- pairwise judging --------------------------------------------------


class PairJudge:
    """Binary topic-level similarity judge with shortcuts and memoization.

    Identical normalized texts short-circuit to 1 without a gateway call;
    repeated pairs within a run are served from an in-memory cache.
    """

    def __init__(self, gateway: Gateway, model_id: str):
        self.gateway = gateway
        self.model_id = model_id
        self._memo: dict[tuple[str, str], int] = {}
        self.shortcut_hits = 0
        self.memo_hits = 0

    def judge(self, a: LimitationItem, b: LimitationItem) -> int:
        if not a.text.strip() or not b.text.strip():
            raise ValueError("pair texts must be non-empty")
        key_a, key_b = normalize_text(a.text), normalize_text(b.text)
        if key_a == key_b:
            self.shortcut_hits += 1
            return 1
        key = (key_a, key_b)
        if key in self._memo:
            self.memo_hits += 1
            return self._memo[key]
        prompt = render_prompt("pair_similarity", limitation_a=a.text, limitation_b=b.text)
        req = ChatRequest(
            model_id=self.model_id,
            messages=(Message("user", prompt),),
            purpose="pair",
        )
        resp = self.gateway.complete(req)
        try:
            verdict = _parse_verdict(resp.content)
        except ValueError:
            # one repair attempt, then fail loudly; pairs are never
            # silently scored
            try:
                repair = self.gateway.complete(
                    ChatRequest(
                        model_id=self.model_id,
                        messages=req.messages
                        + (
                            Message("assistant", resp.content),
                            Message("user", "Reply with exactly one character: 1 or 0."),
                        ),
                        purpose="pair",
                    )
                )
                verdict = _parse_verdict(repair.content)
            except (GatewayError, ValueError) as exc:
                raise EvaluationJudgmentFailed(
                    f"unparseable verdict for pair: {exc}"
                ) from exc
        self._memo[key] = verdict
        return verdict


def _parse_verdict(text: str) -> int:
    stripped = text.strip()
    if stripped in ("0", "1"):
        return int(stripped)
    raise ValueError(f"verdict is not 0/1: {stripped[:40]!r}")


def judge_pair_similarity(
    a: LimitationItem, b: LimitationItem, gateway: Gateway, model_id: str
) -> int:
    return PairJudge(gateway, model_id).judge(a, b)


@dataclass(frozen=True)
class SimilarityMatrix:
    paper_id: str
    entries: tuple[tuple[int, ...], ...]  # rows = ground truth, cols = generated

    @property
    def m(self) -> int:
        return len(self.entries)

    @property
    def j(self) -> int:
        return len(self.entries[0]) if self.entries else 0

    def to_json(self) -> dict:
        return {"paper_id": self.paper_id, "entries": [list(r) for r in self.entries]}


def build_similarity_matrix(
    truth: GroundTruthSet,
    generated: GeneratedSet,
    judge: PairJudge,
) -> SimilarityMatrix:
    rows = tuple(
        tuple(judge.judge(a, b) for b in generated.items) for a in truth.items
    )
    return SimilarityMatrix(paper_id=truth.paper_id, entries=rows)


# -- coverage arithmetic -----------------------------------------------


def match_score(gt_index: int, matrix: SimilarityMatrix) -> int:
    """1 iff any entry in the row is 1; empty row (no generated) is 0."""
    row = matrix.entries[gt_index]
    return max(row, default=0)


def coverage_gt(matrix: SimilarityMatrix) -> float:
    if matrix.m == 0:
        raise EmptyGroundTruth("coverage undefined for zero ground-truth items")
    return sum(match_score(k, matrix) for k in range(matrix.m)) / matrix.m


def coverage_generated(matrix: SimilarityMatrix) -> float:
    """Column-wise analog: fraction of generated items matching >= 1
    ground-truth item."""
    if matrix.j == 0:
        raise EmptyGenerated("coverage undefined for zero generated items")
    matched = sum(
        1 for col in range(matrix.j) if any(row[col] for row in matrix.entries)
    )
    return matched / matrix.j


def mean_coverage(per_paper: list[float]) -> float:
    if not per_paper:
        raise EmptyCorpus("no papers to average")
    return 100.0 * sum(per_paper) / len(per_paper)


def matched_pairs(matrix: SimilarityMatrix) -> list[tuple[int, int]]:
    """One pair per covered ground-truth row: the first matching column."""
    pairs = []
    for k, row in enumerate(matrix.entries):
        for col, entry in enumerate(row):
            if entry:
                pairs.append((k, col))
                break
    return pairs


# -- full-text baseline ------------------------------------------------


def full_text_coverage(
    truth: GroundTruthSet,
    generated: GeneratedSet,
    gateway: Gateway,
    model_id: str,
) -> float:
    """Single holistic 0-100 score over both full lists."""
    if not truth.items or not generated.items:
        raise ValueError("both sets must be non-empty")
    prompt = render_prompt(
        "fulltext_coverage",
        truth="\n".join(f"- {i.text}" for i in truth.items),
        generated="\n".join(f"- {i.text}" for i in generated.items),
    )
    req = ChatRequest(
        model_id=model_id, messages=(Message("user", prompt),), purpose="fulltext"
    )
    resp = gateway.complete(req)
    score = _parse_score_0_100(resp.content)
    if score is None:
        repair = gateway.complete(
            ChatRequest(
                model_id=model_id,
                messages=req.messages
                + (
                    Message("assistant", resp.content),
                    Message("user", "Reply with only a number between 0 and 100."),
                ),
                purpose="fulltext",
            )
        )
        score = _parse_score_0_100(repair.content)
        if score is None:
            raise EvaluationJudgmentFailed("full-text score unparseable after repair")
    return score


def _parse_score_0_100(text: str) -> Optional[float]:
    match = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*", text)
    if not match:
        return None
    value = float(match.group(1))
    return value if 0 <= value <= 100 else None


# -- lexical metrics ---------------------------------------------------


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for jdx, y in enumerate(b, 1):
            if x == y:
                current.append(prev[jdx - 1] + 1)
            else:
                current.append(max(prev[jdx], current[-1]))
        prev = current
    return prev[-1]


def rouge_l(reference: str, candidate: str) -> dict[str, float]:
    """LCS-based precision/recall/F1 over shared-tokenizer tokens."""
    ref_tokens = tokenize(reference)
    cand_tokens = tokenize(candidate)
    lcs = _lcs_length(ref_tokens, cand_tokens)
    if lcs == 0:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    precision = lcs / len(cand_tokens)
    recall = lcs / len(ref_tokens)
    f1 = 2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1}


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(reference: str, candidate: str, max_order: int = 4) -> float:
    """N-gram precision with brevity penalty; add-one smoothing on orders
    above 1 (unsmoothed BLEU is degenerately 0 on short texts)."""
    ref_tokens = tokenize(reference)
    cand_tokens = tokenize(candidate)
    if not cand_tokens or not ref_tokens:
        return 0.0
    order = min(max_order, len(cand_tokens))
    log_precisions = []
    for n in range(1, order + 1):
        cand_counts = _ngram_counts(cand_tokens, n)
        ref_counts = _ngram_counts(ref_tokens, n)
        matched = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        total = sum(cand_counts.values())
        if n == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        else:
            precision = (matched + 1) / (total + 1)
        log_precisions.append(math.log(precision))
    geo_mean = math.exp(sum(log_precisions) / len(log_precisions))
    if len(cand_tokens) >= len(ref_tokens):
        brevity = 1.0
    else:
        brevity = math.exp(1 - len(ref_tokens) / len(cand_tokens))
    return brevity * geo_mean


def jaccard(reference: str, candidate: str) -> float:
    ref_set = set(tokenize(reference))
    cand_set = set(tokenize(candidate))
    if not ref_set and not cand_set:
        return 1.0
    if not ref_set or not cand_set:
        return 0.0
    return len(ref_set & cand_set) / len(ref_set | cand_set)


def cosine_sim(reference: str, candidate: str, embedder: Embedder) -> float:
    return cosine(embedder.embed(reference), embedder.embed(candidate))


# -- reports -----------------------------------------------------------


METRIC_NAMES = ("rouge_l_f1", "bleu", "cosine", "jaccard")


@dataclass
class PaperCoverage:
    c_gt: float
    m: int
    j: int
    matched: list[tuple[int, int]]
    c_llm: Optional[float] = None
    full_text_score: Optional[float] = None


@dataclass
class CoverageReport:
    per_paper: dict[str, PaperCoverage] = field(default_factory=dict)

    @property
    def mean_c_gt_percent(self) -> float:
        # papers without ground truth are excluded from the corpus mean
        return mean_coverage([p.c_gt for p in self.per_paper.values() if p.m > 0])

    def to_json(self) -> dict:
        return {
            "per_paper": {
                pid: {
                    "c_gt": p.c_gt,
                    "m": p.m,
                    "j": p.j,
                    "matched_pairs": [list(pair) for pair in p.matched],
                    "c_llm": p.c_llm,
                    "full_text_score": p.full_text_score,
                }
                for pid, p in sorted(self.per_paper.items())
            },
            "mean_c_gt_percent": self.mean_c_gt_percent,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CoverageReport":
        report = cls()
        for pid, p in data["per_paper"].items():
            report.per_paper[pid] = PaperCoverage(
                c_gt=p["c_gt"],
                m=p["m"],
                j=p["j"],
                matched=[tuple(pair) for pair in p["matched_pairs"]],
                c_llm=p.get("c_llm"),
                full_text_score=p.get("full_text_score"),
            )
        return report


def matched_pair_quality(
    report_entry: PaperCoverage,
    truth: GroundTruthSet,
    generated: GeneratedSet,
    embedder: Embedder,
) -> dict:
    """Lexical + embedding metrics for every matched pair, plus means.

    Means are absent (None) when there are no matched pairs, not zero.
    """
    rows = []
    for gt_index, gen_index in report_entry.matched:
        ref = truth.items[gt_index].text
        cand = generated.items[gen_index].text
        rouge = rouge_l(ref, cand)
        rows.append(
            {
                "gt_index": gt_index,
                "gen_index": gen_index,
                "rouge_l_f1": rouge["f1"],
                "rouge_l_precision": rouge["precision"],
                "rouge_l_recall": rouge["recall"],
                "bleu": bleu(ref, cand),
                "cosine": cosine_sim(ref, cand, embedder),
                "jaccard": jaccard(ref, cand),
            }
        )
    if rows:
        means = {name: sum(r[name] for r in rows) / len(rows) for name in METRIC_NAMES}
    else:
        means = {name: None for name in METRIC_NAMES}
    return {"pairs": rows, "means": means}


def render_report_table(
    report: CoverageReport, quality_means: Optional[dict[str, dict]] = None
) -> str:
    """Plain-text table with one row per paper and a corpus-mean footer.

    Columns mirror the metric suite: coverage, ROUGE-L, BLEU, cosine,
    Jaccard.
    """
    header = f"{'paper_id':<20} {'C_GT':>7} {'C_LLM':>7} {'R-L':>7} {'BLEU':>7} {'CS':>7} {'JS':>7}"
    lines = [header, "-" * len(header)]

    def fmt(value) -> str:
        return f"{value:7.2f}" if value is not None else f"{'-':>7}"

    for pid in sorted(report.per_paper):
        entry = report.per_paper[pid]
        quality = (quality_means or {}).get(pid, {}).get("means", {})
        lines.append(
            f"{pid:<20} {fmt(100 * entry.c_gt)} "
            f"{fmt(100 * entry.c_llm if entry.c_llm is not None else None)} "
            f"{fmt(100 * quality.get('rouge_l_f1') if quality.get('rouge_l_f1') is not None else None)} "
            f"{fmt(100 * quality.get('bleu') if quality.get('bleu') is not None else None)} "
            f"{fmt(100 * quality.get('cosine') if quality.get('cosine') is not None else None)} "
            f"{fmt(100 * quality.get('jaccard') if quality.get('jaccard') is not None else None)}"
        )
    lines.append("-" * len(header))
    lines.append(f"{'mean':<20} {fmt(report.mean_c_gt_percent)}")
    return "\n".join(lines)


def export_agreement_csv(
    truth: GroundTruthSet,
    generated: GeneratedSet,
    matrix: SimilarityMatrix,
) -> str:
    """CSV of (gt_text, gen_text, llm_verdict) for annotator import."""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["gt_text", "gen_text", "llm_verdict"])
    for k, row in enumerate(matrix.entries):
        for col, verdict in enumerate(row):
            writer.writerow([truth.items[k].text, generated.items[col].text, verdict])
    return buffer.getvalue()

"""Reference-free judging, reference-based quality rating, and the
self-feedback regeneration loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .agents import AgentKind, AgentOutput
from .gateway import ChatRequest, Gateway, Message, ResponseFormat, extract_json_object
from .model import GeneratedSet, GroundTruthSet, PaperRecord
from .prompts import render_prompt

log = logging.getLogger(__name__)

CRITERIA = ("Depth", "Originality", "Actionability", "Topic Coverage")
CRITERION_WEIGHTS = {
    "Depth": 0.2,
    "Originality": 0.2,
    "Actionability": 0.3,
    "Topic Coverage": 0.3,
}

FEEDBACK_THRESHOLD = 80.0
MAX_FEEDBACK_ITERATIONS = 2
LOW_SCORE_FEEDBACK_CUTOFF = 7


@dataclass(frozen=True)
class CriterionResult:
    score: int  # 0-10
    strengths: str = ""
    issues: str = ""
    suggestions: str = ""


@dataclass(frozen=True)
class JudgeScorecard:
    agent_kind: AgentKind
    criteria: dict[str, CriterionResult]
    total: float

    def to_json(self) -> dict:
        return {
            "agent_kind": self.agent_kind.value,
            "total": self.total,
            "criteria": {
                name: {
                    "score": c.score,
                    "strengths": c.strengths,
                    "issues": c.issues,
                    "suggestions": c.suggestions,
                }
                for name, c in self.criteria.items()
            },
        }


def weighted_total(scores: dict[str, int]) -> float:
    """0-100 total from per-criterion 0-10 scores."""
    return 10 * sum(CRITERION_WEIGHTS[name] * scores[name] for name in CRITERIA)


class RatingStage(str, Enum):
    PAPER_ONLY = "paper_only"
    WITH_GROUND_TRUTH = "with_ground_truth"


@dataclass(frozen=True)
class Rating:
    rating: int  # 1-5
    explanation: str = ""


@dataclass(frozen=True)
class QualityRatings:
    faithfulness: Rating
    soundness: Rating
    importance: Rating
    stage: RatingStage

    def to_json(self) -> dict:
        return {
            "stage": self.stage.value,
            "faithfulness": {"rating": self.faithfulness.rating, "explanation": self.faithfulness.explanation},
            "soundness": {"rating": self.soundness.rating, "explanation": self.soundness.explanation},
            "importance": {"rating": self.importance.rating, "explanation": self.importance.explanation},
        }


def _parse_scorecard(text: str, agent_kind: AgentKind) -> JudgeScorecard:
    data = extract_json_object(text)
    evaluation = data["evaluation"]
    criteria: dict[str, CriterionResult] = {}
    for name in CRITERIA:
        entry = evaluation[name]
        score = int(entry["score"])
        if not 0 <= score <= 10:
            raise ValueError(f"criterion score out of range: {name}={score}")
        criteria[name] = CriterionResult(
            score=score,
            strengths=str(entry.get("strengths", "")),
            issues=str(entry.get("issues", "")),
            suggestions=str(entry.get("suggestions", "")),
        )
    # recompute locally; the model's stated total is discarded
    total = weighted_total({name: criteria[name].score for name in CRITERIA})
    return JudgeScorecard(agent_kind=agent_kind, criteria=criteria, total=total)


def judge_reference_free(
    output: AgentOutput,
    paper: PaperRecord,
    gateway: Gateway,
    model_id: str,
) -> JudgeScorecard:
    """One call with the rubric prompt; the weighted total is recomputed
    locally from the criterion scores."""
    if not output.raw_text.strip():
        raise ValueError("agent output is empty")
    prompt = render_prompt(
        "judge_agent",
        agent_kind=output.agent_kind.value.capitalize(),
        agent_output=output.raw_text,
    )
    req = ChatRequest(
        model_id=model_id,
        messages=(Message("user", prompt),),
        response_format=ResponseFormat.JSON_OBJECT,
        purpose="judge",
    )
    scorecard, _ = gateway.complete_structured(
        req, lambda text: _parse_scorecard(text, output.agent_kind)
    )
    return scorecard


def _parse_ratings(text: str, stage: RatingStage) -> QualityRatings:
    data = extract_json_object(text)

    def pick(name: str) -> Rating:
        entry = data[name]
        raw = int(entry["rating"])
        clamped = min(5, max(1, raw))
        if clamped != raw:
            log.warning("rating %s=%d clamped into 1-5", name, raw)
        return Rating(rating=clamped, explanation=str(entry.get("explanation", "")))

    return QualityRatings(
        faithfulness=pick("Faithfulness"),
        soundness=pick("Soundness"),
        importance=pick("Importance"),
        stage=stage,
    )


def judge_reference_based(
    generated: GeneratedSet,
    truth: GroundTruthSet,
    paper: PaperRecord,
    gateway: Gateway,
    model_id: str,
) -> tuple[QualityRatings, QualityRatings]:
    """Two-stage reflective rating: paper-only first, then revisited with
    the ground truth and the stage-1 ratings in view."""
    if not generated.items:
        raise ValueError("generated set is empty")
    generated_block = "\n".join(f"- {i.text}" for i in generated.items)
    stage1_prompt = render_prompt(
        "quality_eval",
        paper_text=paper.full_text(),
        generated_limitations=generated_block,
        reference_block="",
    )
    req1 = ChatRequest(
        model_id=model_id,
        messages=(Message("user", stage1_prompt),),
        response_format=ResponseFormat.JSON_OBJECT,
        purpose="quality:paper_only",
    )
    stage1, stage1_raw = gateway.complete_structured(
        req1, lambda text: _parse_ratings(text, RatingStage.PAPER_ONLY)
    )

    truth_block = "\n".join(f"- {i.text}" for i in truth.items)
    reference_block = (
        "\nGround-truth limitations for reference:\n"
        f"{truth_block}\n\n"
        "Your earlier ratings made without the reference were:\n"
        f"{stage1_raw}\n"
        "Revisit your judgment in light of the ground truth."
    )
    stage2_prompt = render_prompt(
        "quality_eval",
        paper_text=paper.full_text(),
        generated_limitations=generated_block,
        reference_block=reference_block,
    )
    req2 = ChatRequest(
        model_id=model_id,
        messages=(Message("user", stage2_prompt),),
        response_format=ResponseFormat.JSON_OBJECT,
        purpose="quality:with_truth",
    )
    stage2, _ = gateway.complete_structured(
        req2, lambda text: _parse_ratings(text, RatingStage.WITH_GROUND_TRUTH)
    )
    return stage1, stage2


def feedback_text(scorecard: JudgeScorecard) -> str:
    """Regeneration guidance; always carries all three feedback fields of
    every criterion scoring <= the low-score cutoff."""
    lines = ["", "Judge feedback on your previous attempt:"]
    for name in CRITERIA:
        result = scorecard.criteria[name]
        if result.score <= LOW_SCORE_FEEDBACK_CUTOFF:
            lines.append(
                f"{name} (score {result.score}/10): "
                f"strengths: {result.strengths} "
                f"issues: {result.issues} "
                f"suggestions: {result.suggestions}"
            )
        else:
            lines.append(f"{name} (score {result.score}/10): {result.strengths}")
    lines.append("Regenerate your analysis, addressing every issue above.")
    return "\n".join(lines)


def feedback_loop(
    agent_runner: Callable[[str, int], AgentOutput],
    initial: AgentOutput,
    paper: PaperRecord,
    gateway: Gateway,
    judge_model_id: str,
    threshold: float = FEEDBACK_THRESHOLD,
    max_iters: int = MAX_FEEDBACK_ITERATIONS,
) -> tuple[AgentOutput, list[JudgeScorecard]]:
    """Judge, regenerate while below threshold, bounded by max_iters.

    `agent_runner(feedback, iteration)` re-invokes the worker with the
    most recent scorecard's feedback appended. Returns the last output
    (not the best-scoring) plus all scorecards in order.
    """
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    current = initial
    scorecards: list[JudgeScorecard] = []
    scorecard = judge_reference_free(current, paper, gateway, judge_model_id)
    scorecards.append(scorecard)
    regenerations = 0
    while scorecard.total < threshold and regenerations < max_iters:
        regenerations += 1
        try:
            current = agent_runner(feedback_text(scorecard), current.iteration + 1)
        except Exception as exc:  # noqa: BLE001 - degraded continue, not abort
            log.warning("regeneration failed, keeping previous output: %s", exc)
            break
        scorecard = judge_reference_free(current, paper, gateway, judge_model_id)
        scorecards.append(scorecard)
    return current, scorecards

from __future__ import annotations

import pytest

from conftest import ScriptedBackend, make_gateway
from limgen.agents import (
    AgentKind,
    AgentOutput,
    PROVENANCE_BY_AGENT,
    UnparseableOutput,
    parse_agent_output,
    run_analyzer,
    run_citation,
    run_extractor,
    run_reviewer,
)
from limgen.model import PaperRecord, Provenance, Section
from limgen.rag import Chunk, SourceKind


def stripped_paper():
    return PaperRecord(
        paper_id="p",
        title="T",
        sections=(
            Section("Abstract", "We do things.", 0),
            Section("Discussion", "Sample size is small.", 1),
        ),
    )


def test_parse_bullets_with_explanation_field():
    raw = (
        "- The sample is small. Explanation: only 12 subjects were recruited.\n"
        "- **No baselines** were compared. Impact: claims are unsupported."
    )
    items = parse_agent_output(raw, AgentKind.ANALYZER)
    assert [i.text for i in items] == ["The sample is small.", "No baselines were compared."]
    assert items[0].justification.startswith("Explanation:")
    assert items[1].justification.startswith("Impact:")
    assert all(i.provenance is Provenance.INFERRED for i in items)


def test_parse_numbered_list_first_sentence_split():
    raw = "1. Data is private. Reproducibility suffers as a result.\n2) Narrow scope only."
    items = parse_agent_output(raw, AgentKind.REVIEWER)
    assert items[0].text == "Data is private."
    assert items[0].justification == "Reproducibility suffers as a result."
    assert items[1].text == "Narrow scope only."
    assert items[1].justification is None


def test_parse_strips_markdown_and_tags():
    items = parse_agent_output("- *Weak* evaluation [Author-stated]", AgentKind.EXTRACTOR)
    assert items[0].text == "Weak evaluation"


def test_parse_source_ref_extracted():
    items = parse_agent_output(
        "- Evaluation is narrow. (Section: Discussion)", AgentKind.EXTRACTOR
    )
    assert items[0].source_ref == "Discussion"


def test_parse_sentinel_yields_no_items():
    assert parse_agent_output(
        "No limitations explicitly stated in the article.", AgentKind.EXTRACTOR
    ) == []
    assert parse_agent_output("", AgentKind.EXTRACTOR) == []


def test_parse_unstructured_long_text_raises():
    prose = "This is a long paragraph of analysis without any bullet structure at all."
    with pytest.raises(UnparseableOutput):
        parse_agent_output(prose, AgentKind.ANALYZER)


def test_provenance_mapping_per_agent():
    assert PROVENANCE_BY_AGENT == {
        AgentKind.EXTRACTOR: Provenance.AUTHOR_STATED,
        AgentKind.ANALYZER: Provenance.INFERRED,
        AgentKind.REVIEWER: Provenance.PEER_REVIEW_DERIVED,
        AgentKind.CITATION: Provenance.CITED,
    }


@pytest.mark.parametrize(
    "runner,kind",
    [
        (run_extractor, AgentKind.EXTRACTOR),
        (run_analyzer, AgentKind.ANALYZER),
        (run_reviewer, AgentKind.REVIEWER),
    ],
)
def test_text_agents_reject_unstripped_paper(runner, kind):
    paper = PaperRecord(
        paper_id="p",
        title="T",
        sections=(Section("Limitations", "secret ground truth", 0),),
    )
    with pytest.raises(ValueError, match="ground-truth"):
        runner(paper, make_gateway(ScriptedBackend()), "m")


def test_text_agent_runs_and_parses():
    backend = ScriptedBackend(by_purpose={"agent:extractor": "- Sample size is small."})
    output = run_extractor(stripped_paper(), make_gateway(backend), "m", iteration=2)
    assert output.agent_kind is AgentKind.EXTRACTOR
    assert output.iteration == 2
    assert [i.text for i in output.items] == ["Sample size is small."]
    prompt = backend.requests[0].messages[0].content
    assert "Sample size is small." in prompt  # paper text included


def test_feedback_is_appended_to_prompt():
    backend = ScriptedBackend(by_purpose={"agent:analyzer": "- An item here."})
    run_analyzer(stripped_paper(), make_gateway(backend), "m", feedback="FIX DEPTH")
    assert "FIX DEPTH" in backend.requests[0].messages[0].content


def chunk(i, body, enrichment=None):
    return Chunk(
        chunk_id=f"cited_in:x:{i}",
        source_paper_id="x",
        source_kind=SourceKind.CITED_IN,
        heading=f"Sec{i}",
        body=body,
        enrichment=enrichment,
    )


def test_citation_agent_includes_retained_chunks():
    backend = ScriptedBackend(by_purpose={"agent:citation": "- Cited work is broader."})
    chunks = [chunk(0, "first passage"), chunk(1, "second passage")]
    output = run_citation(stripped_paper(), chunks, make_gateway(backend), "m")
    prompt = backend.requests[0].messages[0].content
    assert "first passage" in prompt and "second passage" in prompt
    assert "[x / Sec0]" in prompt
    assert output.agent_kind is AgentKind.CITATION


def test_citation_agent_drops_lowest_ranked_over_budget():
    backend = ScriptedBackend(by_purpose={"agent:citation": "- An item."})
    chunks = [chunk(0, "a" * 30), chunk(1, "b" * 30), chunk(2, "c" * 30)]
    run_citation(
        stripped_paper(), chunks, make_gateway(backend), "m", context_budget_chars=70
    )
    prompt = backend.requests[0].messages[0].content
    assert "a" * 30 in prompt and "b" * 30 in prompt
    assert "c" * 30 not in prompt


def test_citation_agent_paper_only_mode_flagged():
    backend = ScriptedBackend(by_purpose={"agent:citation": "- Something only here."})
    output = run_citation(stripped_paper(), [], make_gateway(backend), "m")
    assert output.raw_text.startswith("[paper-only mode: no retained chunks]")
    assert "no retained passages" in backend.requests[0].messages[0].content


def test_agent_output_json_roundtrip():
    backend = ScriptedBackend(by_purpose={"agent:reviewer": "- Needs more baselines."})
    output = run_reviewer(stripped_paper(), make_gateway(backend), "m")
    assert AgentOutput.from_json(output.to_json()) == output

import difflib
import re

import pytest
from hypothesis import given, strategies as st

from provkg.citeverify import extract_pmids
from provkg.consensus import TIER_SCORES, Edge, Tier, edge_key
from provkg.extraction import ModelProvider
from provkg.fixtures import EchoSynthesisProvider
from provkg.normalize import NormalizedEntity
from provkg.synthesis import (ARMS, ClinicalOutput, ClinicalScenario, PrivacyError, RagIndex,
                              build_prompt, chunk_spans, format_evidence_block, manifest_for,
                              parse_evidence_block, retrieve_rag_chunks, synthesize,
                              validate_privacy_config)
from provkg.temporal import TemporalAnchor

DMD = NormalizedEntity("DMD", "C0013264", "Disease")
SCEN = ClinicalScenario("s1", "dmd_bmd", "differential", "A 6-year-old boy with calf hypertrophy.",
                        ("Gowers sign",))


def edge(obj, pred="MANIFESTS_AS", tier=Tier.GOLD, pmids=("11111111",), anchor=None):
    o = NormalizedEntity(obj, None, "Symptom")
    return Edge(edge_key(DMD, pred, o), DMD, pred, o, tier, TIER_SCORES[tier], frozenset({"m"}),
                frozenset(pmids), f"{obj} was \"common\"", is_temporal=anchor is not None,
                anchor=anchor)


def test_chunk_offsets_for_1200_chars():
    assert chunk_spans(1200) == [(0, 500), (420, 920), (840, 1200)]


@given(st.integers(1, 5000), st.integers(2, 600), st.integers(0, 200))
def test_chunks_cover_text(length, size, overlap):
    if overlap >= size:
        with pytest.raises(ValueError):
            chunk_spans(length, size, overlap)
        return
    spans = chunk_spans(length, size, overlap)
    assert spans[0][0] == 0 and spans[-1][1] == length
    for (a, b), (c, d) in zip(spans, spans[1:]):
        assert c - a == size - overlap and b - a == size
        assert c <= b  # windows overlap or touch, never leave a gap


def test_retrieval_topk_and_ties():
    docs = [("a", "dystrophin " * 100), ("b", "influenza vaccine " * 10)]
    idx = RagIndex(docs)
    assert idx.retrieve("dystrophin", k=1)[0].doc_id == "a"
    twins = RagIndex([("x", "same text here"), ("y", "same text here")])
    assert [c.chunk_id for c in twins.retrieve("same text", k=2)] == [0, 1]
    assert len(retrieve_rag_chunks(docs, "x", k=100)) == len(idx)
    with pytest.raises(ValueError):
        RagIndex([])


def test_evidence_block_format():
    e = edge("Gowers sign", pred="HAS_ONSET_AGE", anchor=TemporalAnchor.from_display("P3Y-P5Y"))
    block = format_evidence_block([e])
    lines = block.splitlines()
    assert lines == ["[DMD] ->HAS_ONSET_AGE-> [Gowers sign]",
                     "PMID: 11111111 | Tier: GOLD | Temporal: P3Y-P5Y",
                     "Evidence: \"Gowers sign was 'common'\""]
    assert "Temporal:" not in format_evidence_block([edge("ptosis")])
    assert format_evidence_block([]) == ""
    parsed = parse_evidence_block(block)
    assert parsed[0]["t"] == "P3Y-P5Y" and parsed[0]["tier"] == "GOLD"


def test_arm_isolation():
    edges = [edge("Gowers sign"), edge("calf hypertrophy", tier=Tier.SILVER, pmids=("1", "2"))]
    chunks = RagIndex([("g", "calf hypertrophy " * 40)]).retrieve("calf", 2)
    prompts = {
        "vanilla": build_prompt("vanilla", SCEN),
        "guideline_rag": build_prompt("guideline_rag", SCEN, chunks),
        "heg_tkg": build_prompt("heg_tkg", SCEN, edges),
    }
    stripped = {a: p.user.replace(p.evidence_segment, "") for a, p in prompts.items()}
    assert len(set(stripped.values())) == 1
    # the only differing region of the user message is the evidence segment
    for arm in ("guideline_rag", "heg_tkg"):
        sm = difflib.SequenceMatcher(a=prompts["vanilla"].user, b=prompts[arm].user, autojunk=False)
        inserted = "".join(prompts[arm].user[j1:j2] for op, _, _, j1, j2 in sm.get_opcodes() if op != "equal")
        assert inserted == prompts[arm].evidence_segment
    assert prompts["vanilla"].evidence_segment == ""


def test_unknown_template():
    with pytest.raises(KeyError):
        build_prompt("oracle", SCEN)


def test_heg_citations_come_from_manifest():
    edges = [edge("Gowers sign"), edge("calf hypertrophy", tier=Tier.SILVER, pmids=("22222222", "33333333"))]
    out = synthesize(build_prompt("heg_tkg", SCEN, edges), EchoSynthesisProvider(),
                     scenario_id="s1", manifest=manifest_for(edges))
    cited = set(extract_pmids(out.text))
    assert cited and cited <= out.manifest_pmids
    assert out.phi_compliant and out.params == {"temperature": 0.0, "max_tokens": 8000}


def test_vanilla_has_empty_manifest(tmp_path):
    edges = [edge("Gowers sign")]
    out = synthesize(build_prompt("vanilla", SCEN), EchoSynthesisProvider(), scenario_id="s1",
                     manifest=manifest_for(edges))
    assert out.evidence_manifest == [] and extract_pmids(out.text) == []
    back = ClinicalOutput.read(out.write(tmp_path))
    assert back == out


class Remote(ModelProvider):
    id = "remote"
    endpoint = "https://api.example.com/v1/chat"

    def complete(self, system, user, **kw):
        return "ok"


def test_remote_provider_not_phi_compliant():
    out = synthesize(build_prompt("vanilla", SCEN), Remote())
    assert not out.phi_compliant


def test_privacy_gate():
    assert validate_privacy_config({"synthesis": "http://localhost:11434", "judge": None}).ok
    with pytest.raises(PrivacyError) as ei:
        validate_privacy_config({"synthesis": "https://api.openai.com/v1"})
    assert ei.value.component == "synthesis"
    rep = validate_privacy_config({"judge": "https://api.example.org"}, strict=False)
    assert not rep.ok and "judge" in rep.warnings[0]


def test_arms_constant():
    assert ARMS == ("vanilla", "guideline_rag", "heg_tkg")
    assert all(re.fullmatch(r"[a-z_]+", a) for a in ARMS)

import json
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from provkg.citeverify import ZERO_PMID_REPORT
from provkg.extraction import ModelProvider
from provkg.fixtures import RubricJudge
from provkg.judgepanel import (D1_INSTRUCTION, DIMENSIONS, ClaimPair, JudgeCase, JudgeParseError,
                               LikertScores, NliLabel, NliVerdict, SampleShortfall,
                               aggregate_nli, aggregate_panel, blind_and_shuffle,
                               build_judge_prompt, extract_claims, judge_case, load_scores, nli_judge,
                               parse_judge_reply, stratified_sample, write_scores)


def cases(n):
    return [JudgeCase(f"c{i:03d}", f"s{i // 3}", ("vanilla", "guideline_rag", "heg_tkg")[i % 3],
                      "dmd_bmd", f"scenario {i}", f"output {i}") for i in range(n)]


class Scripted(ModelProvider):
    def __init__(self, replies):
        self.id = "scripted"
        self.endpoint = None
        self.replies = list(replies)
        self.prompts = []

    def complete(self, system, user, **kw):
        self.prompts.append(user)
        return self.replies.pop(0)


ALL5 = json.dumps({d: 5 for d in DIMENSIONS} | {"brief_justification": "fine"})


# --------------------------------------------------------------------------- blinding

def test_blinding_deterministic_and_invertible():
    cs = cases(108)
    a, key_a = blind_and_shuffle(cs, seed=42)
    b, key_b = blind_and_shuffle(list(reversed(cs)), seed=42)
    assert a == b and key_a == key_b
    c, _ = blind_and_shuffle(cs, seed=7)
    assert [x.output_text for x in a] != [x.output_text for x in c]
    assert {key_a[x.blind_id].output_text for x in a} == {c.output_text for c in cs}
    assert all(key_a[x.blind_id].output_text == x.output_text for x in a)


def test_blinding_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        blind_and_shuffle(cases(3) + cases(1))


# --------------------------------------------------------------------------- prompts and parsing

def test_v2_prompt_adds_audit_and_instruction_only():
    v1 = build_judge_prompt("v1", "scen", "out")
    v2 = build_judge_prompt("v2", "scen", "out", ZERO_PMID_REPORT)
    assert ZERO_PMID_REPORT in v2 and D1_INSTRUCTION in v2
    assert v2.replace(ZERO_PMID_REPORT + "\n", "").replace(D1_INSTRUCTION, "").replace("\n\n\n", "\n\n") \
        .replace("\n\n", "\n") == v1.replace("\n\n", "\n")
    with pytest.raises(ValueError):
        build_judge_prompt("v2", "scen", "out")
    with pytest.raises(ValueError):
        build_judge_prompt("v3", "scen", "out")


def test_parse_reply_errors():
    assert parse_judge_reply(ALL5)[DIMENSIONS[0]] == 5
    missing = json.loads(ALL5)
    del missing["D4_nonexpert_safety"]
    with pytest.raises(JudgeParseError, match="D4"):
        parse_judge_reply(json.dumps(missing))
    for bad in (6, 0, 2.5, "4", True):
        doc = json.loads(ALL5) | {"D1_verifiability": bad}
        with pytest.raises(JudgeParseError) as ei:
            parse_judge_reply(json.dumps(doc))
        assert ei.value.raw == json.dumps(doc)


def test_judge_case_all_fives():
    s = judge_case(cases(1)[0], "v1", None, Scripted([ALL5]))
    assert s.values == (5, 5, 5, 5, 5) and s.arm == "vanilla"


def test_reprompt_then_missing():
    j = Scripted(["not json", ALL5])
    assert judge_case(cases(1)[0], "v1", None, j) is not None
    assert j.prompts[1].endswith("described above.")
    assert judge_case(cases(1)[0], "v1", None, Scripted(["nope", "{}"])) is None


def test_v2_zero_pmid_gives_low_d1():
    s = judge_case(cases(1)[0], "v2", ZERO_PMID_REPORT, RubricJudge())
    assert s.d1 <= 2


# --------------------------------------------------------------------------- aggregation

def score(case, arm, pair, d1):
    return LikertScores(case, "j", "v2", d1, 3, 3, 3, 3, scenario_id=case, arm=arm, disease_pair=pair)


def test_aggregate_panel_deltas_and_bh():
    scores = [score(f"h{i}", "heg_tkg", "dmd_bmd", 5 if i % 4 else 4) for i in range(12)]
    scores += [score(f"v{i}", "vanilla", "dmd_bmd", 1 if i % 2 else 2) for i in range(12)]
    summary = aggregate_panel(scores, baselines=("vanilla",))
    h, v = summary.cell("dmd_bmd", "heg_tkg", "D1"), summary.cell("dmd_bmd", "vanilla", "D1")
    assert h.n == v.n == 12
    (c,) = [c for c in summary.comparisons if c.dimension == "D1"]
    assert c.delta == pytest.approx(h.mean - v.mean)
    assert c.p < 0.001 and c.q == pytest.approx(c.p)
    d2 = [c for c in summary.comparisons if c.dimension == "D2"][0]
    assert d2.delta == 0 and d2.d == 0.0


def test_single_arm_has_no_deltas():
    summary = aggregate_panel([score("a", "heg_tkg", "dmd_bmd", 5), score("b", "heg_tkg", "dmd_bmd", 4)])
    assert summary.comparisons == []


# --------------------------------------------------------------------------- claims

def test_extract_claims_expansion_and_filter():
    text = ("Steroids preserve ambulation in boys [PMID:11111111, GOLD] [PMID:22222222, SILVER].\n"
            "GOLD = Tier 1 curated sources such as guidelines [PMID:33333333, GOLD].\n"
            "Cardiomyopathy appears in the second decade without any tag.\n"
            "Creatine kinase is markedly elevated early [PMID:44444444, BRONZE].")
    pairs, filtered = extract_claims([("s1", "dmd_bmd", text)])
    assert filtered == 1
    assert [(p.pmid, p.tier) for p in pairs] == [("11111111", "GOLD"), ("22222222", "SILVER"),
                                                 ("44444444", "BRONZE")]
    assert pairs[0].claim == pairs[1].claim == "Steroids preserve ambulation in boys ."


def claim_rows(spec):
    """spec: {(pair, tier): [(pmid, count)]}"""
    out = []
    for (pair, tier), rows in spec.items():
        for pmid, count in rows:
            out += [ClaimPair(f"claim {pair} {tier} {pmid} {i}", pmid, tier, "s", pair) for i in range(count)]
    return out


def test_sample_cap_per_pmid():
    rows = claim_rows({("dmd_bmd", "GOLD"): [("1", 9)], ("dmd_bmd", "SILVER"): [(str(i), 2) for i in range(2, 40)]})
    got = stratified_sample(rows, n=40)
    assert Counter(r.pmid for r in got)["1"] <= 5
    assert max(Counter(r.pmid for r in got).values()) <= 5
    assert got == stratified_sample(rows, n=40)
    assert got != stratified_sample(rows, n=40, seed=1)


def test_sample_small_cell_taken_whole():
    rows = claim_rows({("a", "GOLD"): [("1", 3)],
                       ("a", "SILVER"): [(str(i), 1) for i in range(100, 160)],
                       ("b", "BRONZE"): [(str(i), 1) for i in range(200, 230)]})
    got = stratified_sample(rows, n=40)
    per = Counter((r.disease_pair, r.tier) for r in got)
    assert per[("a", "GOLD")] == 3
    # floors take 3 + 12 + 12; the other 13 split by leftover capacity 48 : 18
    # -> 9.45 and 3.55, the spare unit goes to the larger remainder
    assert per[("a", "SILVER")] == 12 + 9
    assert per[("b", "BRONZE")] == 12 + 4


def test_sample_shortfall():
    rows = claim_rows({("a", "GOLD"): [("1", 9), ("2", 2)]})
    with pytest.raises(SampleShortfall, match="7 of 20"):
        stratified_sample(rows, n=20)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.tuples(st.sampled_from(["a", "b", "c"]), st.sampled_from(["GOLD", "SILVER", "BRONZE"])),
                       st.lists(st.tuples(st.sampled_from([str(i) for i in range(10000000, 10000030)]),
                                          st.integers(1, 8)), min_size=1, max_size=6),
                       min_size=1, max_size=9),
       st.integers(1, 80))
def test_sample_invariants(spec, n):
    rows = claim_rows(spec)
    try:
        got = stratified_sample(rows, n=n)
    except SampleShortfall:
        return
    assert len(got) == n and len(set(got)) == n
    assert max(Counter(r.pmid for r in got).values()) <= 5
    assert set(got) <= set(rows)


# --------------------------------------------------------------------------- NLI

def test_nli_judge_parses_and_misses():
    v = nli_judge("c", "1", "t", "a", Scripted(['{"label": "entails", "confidence": 1.4}']))
    assert v.label is NliLabel.ENTAILS and v.confidence == 1.0
    assert nli_judge("c", "1", "t", "a", Scripted(['{"label": "MAYBE"}'])) is None


def test_aggregate_nli():
    vs = [NliVerdict("c", str(i), NliLabel.CONTRADICTS if i < 2 else NliLabel.ENTAILS, tier="SILVER")
          for i in range(200)]
    s = aggregate_nli(vs)
    assert s.rates["CONTRADICTS"] == pytest.approx(0.01)
    lo, hi = s.cis["CONTRADICTS"]
    assert abs(lo - 0.0) <= 0.005 and abs(hi - 0.025) <= 0.005
    assert s.by_tier["SILVER"]["n"] == 200
    allyes = aggregate_nli([NliVerdict("c", "1", NliLabel.ENTAILS)] * 10)
    assert allyes.non_contradiction == 1.0 and allyes.non_contradiction_ci == (1.0, 1.0)
    with pytest.raises(ValueError):
        aggregate_nli([])


@pytest.mark.parametrize("suffix", [".csv", ".jsonl"])
def test_scores_round_trip(tmp_path, suffix):
    scores = [LikertScores(f"c{i}", "j", "v2", 1 + i % 5, 3, 4, 2, 5, "ok, fine", f"s{i}", "heg_tkg", "dmd_bmd")
              for i in range(6)]
    path = tmp_path / f"scores{suffix}"
    write_scores(scores, path)
    assert sorted(load_scores(path), key=lambda s: s.case_id) == scores

import json

import pytest
import requests
from hypothesis import given, strategies as st

from provkg.citeverify import (AuthorYearClass, CitationAudit, EutilsResponseError,
                               EutilsTransportError, PmidVerdict, PubMedClient, RateLimiter,
                               SummaryRecord, Verdict, audit_text, classify_author_year,
                               classify_relevance, extract_author_year, extract_pmids,
                               parse_esummary, render_audit_report, summarize_audits)

KW = ["duchenne", "dystrophin", "corticosteroid"]


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t

    def sleep(self, s):
        self.t += s


def esummary(pmid, title="Dystrophin in boys", journal="Neurology", mesh=()):
    mesh_xml = "".join(f'<Item Name="string" Type="String">{m}</Item>' for m in mesh)
    return (f'<?xml version="1.0"?><eSummaryResult><DocSum><Id>{pmid}</Id>'
            f'<Item Name="Title" Type="String">{title}</Item>'
            f'<Item Name="FullJournalName" Type="String">{journal}</Item>'
            f'<Item Name="MeshHeadingList" Type="List">{mesh_xml}</Item>'
            f'</DocSum></eSummaryResult>')


class FakeResponse:
    def __init__(self, text, status=200):
        self.text = text
        self.status = status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"{self.status}")


class FakeSession:
    def __init__(self, responses):
        self.responses = responses
        self.calls = []

    def get(self, url, params=None, timeout=None):
        self.calls.append(params)
        r = self.responses.get(params["id"])
        if isinstance(r, Exception):
            raise r
        return r or FakeResponse('<eSummaryResult><ERROR>Empty id list</ERROR></eSummaryResult>')


def test_extract_pmids_unique_in_order():
    text = "see [PMID:12345678, GOLD] and PMID 23456789; again PMID:12345678. PMID:1234 too short"
    assert extract_pmids(text) == ["12345678", "23456789"]
    assert extract_pmids("") == []


@given(st.lists(st.integers(100000, 999999999), max_size=15))
def test_extract_pmids_oracle(ids):
    text = " ".join(f"[PMID:{i}, SILVER]" for i in ids)
    assert extract_pmids(text) == list(dict.fromkeys(str(i) for i in ids))


def test_limiter_spacing_with_mock_clock():
    clock = FakeClock()
    lim = RateLimiter(0.35, clock=clock, sleep=clock.sleep)
    stamps = []
    for _ in range(10):
        lim.wait()
        stamps.append(clock())
    assert stamps[-1] - stamps[0] >= 3.15 - 1e-9
    assert all(b - a >= 0.35 - 1e-9 for a, b in zip(stamps, stamps[1:]))


def test_live_client_uses_limiter_and_caches(tmp_path):
    clock = FakeClock()
    sess = FakeSession({str(p): FakeResponse(esummary(str(p))) for p in range(10000001, 10000011)})
    c = PubMedClient(tmp_path / "idx.json", live=True, session=sess,
                     limiter=RateLimiter(0.35, clock=clock, sleep=clock.sleep), api_key="k")
    for p in range(10000001, 10000011):
        assert c.fetch(str(p)).exists
    assert clock() >= 3.15 - 1e-9
    assert sess.calls[0]["api_key"] == "k" and sess.calls[0]["retmode"] == "xml"
    c.fetch("10000001")
    assert len(sess.calls) == 10  # cached
    saved = json.loads((tmp_path / "idx.json").read_text())
    assert saved["10000001"]["title"] == "Dystrophin in boys"


def test_live_transport_and_payload_errors():
    sess = FakeSession({"10000001": requests.ConnectionError("down"),
                        "10000002": FakeResponse("<html>", 200),
                        "10000003": FakeResponse("", 503)})
    clock = FakeClock()
    c = PubMedClient(live=True, session=sess, limiter=RateLimiter(0, clock=clock, sleep=clock.sleep))
    with pytest.raises(EutilsTransportError):
        c.fetch("10000001")
    with pytest.raises(EutilsResponseError):
        c.fetch("10000002")
    with pytest.raises(EutilsTransportError):
        c.fetch("10000003")
    assert not c.fetch("10000004").exists


def test_parse_esummary():
    rec = parse_esummary(esummary("123456", mesh=("Muscular Dystrophy, Duchenne",)), "123456")
    assert rec == SummaryRecord("123456", True, "Dystrophin in boys", "Neurology",
                                ("Muscular Dystrophy, Duchenne",))
    err = ('<eSummaryResult><DocSum><Id>999999</Id><Item Name="error" Type="String">'
           'cannot get document summary</Item></DocSum></eSummaryResult>')
    assert not parse_esummary(err, "999999").exists


def test_relevance_partition():
    rel = SummaryRecord("1", True, "Corticosteroids in Duchenne", "J")
    mesh_only = SummaryRecord("2", True, "A cohort study", "J", ("Dystrophin",))
    off = SummaryRecord("3", True, "Influenza vaccine uptake", "J")
    assert classify_relevance(rel, KW) is Verdict.RELEVANT
    assert classify_relevance(mesh_only, KW) is Verdict.RELEVANT
    assert classify_relevance(mesh_only, KW, title_only=True) is Verdict.WRONG_FIELD
    assert classify_relevance(off, KW) is Verdict.WRONG_FIELD
    assert classify_relevance(SummaryRecord("4", False), KW) is Verdict.NOT_FOUND
    assert classify_relevance(None, KW) is Verdict.NOT_FOUND


def test_keyword_left_boundary():
    assert classify_relevance(SummaryRecord("1", True, "Swallowing problems"), ["lems"]) is Verdict.WRONG_FIELD
    assert classify_relevance(SummaryRecord("1", True, "LEMS cohort"), ["lems"]) is Verdict.RELEVANT


@given(st.lists(st.sampled_from(["rel", "off", "gone"]), max_size=25))
def test_audit_counts_partition(kinds):
    index, text = {}, []
    for i, k in enumerate(kinds):
        pmid = str(20000000 + i)
        text.append(f"[PMID:{pmid}, BRONZE]")
        if k == "rel":
            index[pmid] = {"exists": True, "title": "Duchenne cohort", "journal": "J"}
        elif k == "off":
            index[pmid] = {"exists": True, "title": "Influenza", "journal": "J"}
    a = audit_text(" ".join(text), "o", KW, PubMedClient.from_mapping(index))
    assert sum(a.counts.values()) == len(kinds)
    assert a.counts == {"Relevant": kinds.count("rel"), "WrongField": kinds.count("off"),
                        "NotFound": kinds.count("gone")}


def test_report_zero_and_cap():
    empty = CitationAudit("o", [])
    assert render_audit_report(empty).splitlines()[1].startswith("This output contains **0 PubMed")
    pmids = [str(30000000 + i) for i in range(13)]
    verdicts = [PmidVerdict(p, Verdict.RELEVANT, "T" * 100, "J") for p in pmids]
    report = render_audit_report(CitationAudit("o", pmids, verdicts))
    detail = [l for l in report.splitlines() if l.startswith("  PMID:")]
    assert len(detail) == 10
    assert report.rstrip().endswith("... and 3 more PMIDs verified")
    assert "- **13** (100%) real and clinically relevant" in report
    assert "T" * 77 + "..." in report


def test_audit_invariants():
    with pytest.raises(ValueError):
        CitationAudit("o", ["1", "1"])
    with pytest.raises(ValueError):
        CitationAudit("o", ["1"], [])


def test_author_year():
    text = "As shown by Smith et al. (2019) and Jones et al., 2020; The et al. 2001; Brown et al. 2018."
    refs = extract_author_year(text)
    assert [(a, y) for _, a, y in refs] == [("Smith", "2019"), ("Jones", "2020"), ("The", "2001"),
                                            ("Brown", "2018")]
    idx = {"_author_year": {"smith|2019": ["1"], "jones|2020": ["2"], "brown|2018": ["1", "2"]},
           "1": {"exists": True, "title": "Duchenne", "journal": "J"},
           "2": {"exists": True, "title": "Influenza", "journal": "J"}}
    c = PubMedClient.from_mapping(idx)
    got = [classify_author_year(a, y, c, KW)[0] for _, a, y in refs]
    assert got == [AuthorYearClass.SPECIFIC, AuthorYearClass.WRONG, AuthorYearClass.TOO_VAGUE,
                   AuthorYearClass.AMBIGUOUS]
    assert classify_author_year("Nobody", "1999", c, KW)[0] is AuthorYearClass.NOT_FOUND


def test_pooled_summary_counts_unique():
    a1 = CitationAudit("a", ["1", "2"], [PmidVerdict("1", Verdict.RELEVANT), PmidVerdict("2", Verdict.NOT_FOUND)])
    a2 = CitationAudit("b", ["1"], [PmidVerdict("1", Verdict.RELEVANT)])
    assert summarize_audits([a1, a2]) == {"Relevant": 1, "WrongField": 0, "NotFound": 1, "total": 2}

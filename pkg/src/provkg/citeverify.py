"""PMID extraction, PubMed esummary lookups and citation audit reports."""

from __future__ import annotations

import enum
import json
import logging
import re
import threading
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Sequence

import requests

if TYPE_CHECKING:
    from provkg.pairconfig import DiseasePairConfig
    from provkg.synthesis import ClinicalOutput

log = logging.getLogger(__name__)

PMID_RE = re.compile(r"PMID[:\s]*(\d{6,9})(?!\d)", re.I)
ESUMMARY_URL = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/esummary.fcgi"
MIN_INTERVAL = 0.35


def extract_pmids(text: str) -> list[str]:
    """Unique PMIDs in first-occurrence order."""
    seen: dict[str, None] = {}
    for m in PMID_RE.finditer(text or ""):
        seen.setdefault(m.group(1), None)
    return list(seen)


# --------------------------------------------------------------------------- client

class EutilsTransportError(RuntimeError):
    """Network failure talking to E-utilities. Safe to retry."""


class EutilsResponseError(RuntimeError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class RateLimiter:
    """Minimum spacing between calls, shared by every client that holds it."""

    def __init__(self, min_interval: float = MIN_INTERVAL,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.min_interval = min_interval
        self.clock = clock
        self.sleep = sleep
        self._last: float | None = None
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = self.clock()
            if self._last is not None:
                gap = self.min_interval - (now - self._last)
                if gap > 0:
                    self.sleep(gap)
            self._last = self.clock()


SHARED_LIMITER = RateLimiter()


@dataclass(frozen=True)
class SummaryRecord:
    pmid: str
    exists: bool
    title: str = ""
    journal: str = ""
    mesh_terms: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"exists": self.exists, "title": self.title, "journal": self.journal,
                "mesh_terms": list(self.mesh_terms)}

    @classmethod
    def from_json(cls, pmid: str, d: Mapping) -> "SummaryRecord":
        return cls(pmid, bool(d.get("exists", True)), d.get("title", ""),
                   d.get("journal", ""), tuple(d.get("mesh_terms", ())))


def parse_esummary(xml_text: str, pmid: str) -> SummaryRecord:
    """Parse an ``esummary`` (retmode=xml) payload for one id."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise EutilsResponseError(f"esummary XML for {pmid}: {exc}", xml_text) from None
    if root.tag != "eSummaryResult":
        raise EutilsResponseError(f"unexpected root <{root.tag}>", xml_text)
    for doc in root.iter("DocSum"):
        if (doc.findtext("Id") or "").strip() != pmid:
            continue
        items = {it.get("Name"): it for it in doc.findall("Item")}
        if "error" in items:
            return SummaryRecord(pmid, False)
        title = (items["Title"].text or "").strip() if "Title" in items else ""
        # Elements without children are falsy, so test for None explicitly
        journal_el = items.get("FullJournalName")
        if journal_el is None:
            journal_el = items.get("Source")
        journal = (journal_el.text or "").strip() if journal_el is not None else ""
        mesh = ()
        if "MeshHeadingList" in items:
            mesh = tuple((m.text or "").strip() for m in items["MeshHeadingList"] if (m.text or "").strip())
        return SummaryRecord(pmid, True, title, journal, mesh)
    # esummary answers unknown ids with an <ERROR> element or an empty result
    return SummaryRecord(pmid, False)


class PubMedClient:
    """esummary lookups, live or from a JSON fixture index.

    The index maps PMID → ``{"exists", "title", "journal", "mesh_terms"}``
    and may carry an ``"_author_year"`` table used for author-year lookups.
    Live responses are written back into the index on every fetch.
    """

    def __init__(self, index_path: str | Path | None = None, *, live: bool = False,
                 limiter: RateLimiter | None = None, session: requests.Session | None = None,
                 base_url: str = ESUMMARY_URL, api_key: str | None = None,
                 timeout: float = 30.0, use_cache: bool = True):
        self.index_path = Path(index_path) if index_path else None
        self.live = live
        self.limiter = limiter or SHARED_LIMITER
        self.session = session or (requests.Session() if live else None)
        self.base_url = base_url
        self.api_key = api_key
        self.timeout = timeout
        self.use_cache = use_cache
        self._lock = threading.Lock()
        self.index: dict = {}
        if self.index_path and self.index_path.exists():
            with open(self.index_path, encoding="utf-8") as fh:
                self.index = json.load(fh)

    @classmethod
    def from_mapping(cls, records: Mapping[str, Mapping]) -> "PubMedClient":
        c = cls()
        c.index = {k: dict(v) for k, v in records.items()}
        return c

    @property
    def author_year_index(self) -> Mapping[str, list[str]]:
        return self.index.get("_author_year", {})

    def _cached(self, pmid: str) -> SummaryRecord | None:
        rec = self.index.get(pmid)
        return SummaryRecord.from_json(pmid, rec) if rec is not None else None

    def _store(self, rec: SummaryRecord) -> None:
        with self._lock:
            self.index[rec.pmid] = rec.to_json()
            if self.index_path:
                self.index_path.parent.mkdir(parents=True, exist_ok=True)
                tmp = self.index_path.with_suffix(".tmp")
                tmp.write_text(json.dumps(self.index, indent=1, sort_keys=True), encoding="utf-8")
                tmp.replace(self.index_path)

    def fetch(self, pmid: str) -> SummaryRecord:
        if not self.live:
            return self._cached(pmid) or SummaryRecord(pmid, False)
        if self.use_cache:
            hit = self._cached(pmid)
            if hit is not None:
                return hit
        params = {"db": "pubmed", "id": pmid, "retmode": "xml"}
        if self.api_key:
            params["api_key"] = self.api_key
        self.limiter.wait()
        try:
            r = self.session.get(self.base_url, params=params, timeout=self.timeout)
            r.raise_for_status()
        except requests.RequestException as exc:
            raise EutilsTransportError(f"esummary {pmid}: {exc}") from exc
        rec = parse_esummary(r.text, pmid)
        self._store(rec)
        return rec


def fetch_summary(pmid: str, client: PubMedClient) -> SummaryRecord:
    return client.fetch(pmid)


# --------------------------------------------------------------------------- relevance

class Verdict(str, enum.Enum):
    RELEVANT = "Relevant"
    WRONG_FIELD = "WrongField"
    NOT_FOUND = "NotFound"

    @property
    def tag(self) -> str:
        return {"Relevant": "RELEVANT", "WrongField": "WRONG FIELD", "NotFound": "NOT FOUND"}[self.value]


def _keyword_hit(keywords: Iterable[str], haystacks: Iterable[str]) -> bool:
    text = "\n".join(h.lower() for h in haystacks)
    for kw in keywords:
        # left word boundary only: "lems" must not fire inside "problems",
        # while "corticosteroid" still matches "corticosteroids"
        if re.search(r"(?<!\w)" + re.escape(kw.lower()), text):
            return True
    return False


def classify_relevance(record: SummaryRecord | None, cfg: "DiseasePairConfig | Sequence[str]",
                       title_only: bool = False) -> Verdict:
    if record is None or not record.exists:
        return Verdict.NOT_FOUND
    keywords = cfg if isinstance(cfg, (list, tuple)) else cfg.relevance_keywords
    fields = [record.title] if title_only else [record.title, *record.mesh_terms]
    return Verdict.RELEVANT if _keyword_hit(keywords, fields) else Verdict.WRONG_FIELD


# --------------------------------------------------------------------------- author-year

AUTHOR_YEAR_PATTERNS = (
    re.compile(r"\b(?P<author>[A-Z][A-Za-z'\-]+) et al\.?,?\s*\(?(?P<year>(?:19|20)\d{2})\)?"),
    re.compile(r"\b(?P<author>[A-Z][A-Za-z'\-]+) [A-Z]{1,3}, (?:[A-Z][A-Za-z&.\-]*\s){1,6}?(?P<year>(?:19|20)\d{2})\b"),
)
_VAGUE_AUTHORS = frozenset({"The", "This", "These", "In", "See", "Per", "And", "Our"})


class AuthorYearClass(str, enum.Enum):
    SPECIFIC = "specific"
    AMBIGUOUS = "ambiguous"
    WRONG = "wrong"
    NOT_FOUND = "not_found"
    TOO_VAGUE = "too_vague"


@dataclass(frozen=True)
class AuthorYearRef:
    text: str
    author: str
    year: str
    resolution: AuthorYearClass
    candidates: tuple[str, ...] = ()


def extract_author_year(text: str) -> list[tuple[str, str, str]]:
    """(matched text, author, year) triples, unique, in first-occurrence order."""
    hits: dict[tuple[str, str], tuple[int, str]] = {}
    for pat in AUTHOR_YEAR_PATTERNS:
        for m in pat.finditer(text or ""):
            key = (m.group("author"), m.group("year"))
            if key not in hits or m.start() < hits[key][0]:
                hits[key] = (m.start(), m.group(0))
    ordered = sorted(hits.items(), key=lambda kv: kv[1][0])
    return [(span, a, y) for (a, y), (_, span) in ordered]


def classify_author_year(author: str, year: str, client: PubMedClient,
                         cfg: "DiseasePairConfig | Sequence[str]") -> tuple[AuthorYearClass, tuple[str, ...]]:
    if author in _VAGUE_AUTHORS or len(author) < 3:
        return AuthorYearClass.TOO_VAGUE, ()
    cands = tuple(client.author_year_index.get(f"{author.lower()}|{year}", ()))
    if not cands:
        return AuthorYearClass.NOT_FOUND, ()
    if len(cands) > 1:
        return AuthorYearClass.AMBIGUOUS, cands
    verdict = classify_relevance(client.fetch(cands[0]), cfg)
    cls = AuthorYearClass.SPECIFIC if verdict is Verdict.RELEVANT else AuthorYearClass.WRONG
    return cls, cands


# --------------------------------------------------------------------------- audit

@dataclass(frozen=True)
class PmidVerdict:
    pmid: str
    verdict: Verdict
    title: str = ""
    journal: str = ""


@dataclass
class CitationAudit:
    output_id: str
    pmids: list[str]
    verdicts: list[PmidVerdict] = field(default_factory=list)
    author_year_refs: list[AuthorYearRef] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.pmids)) != len(self.pmids):
            raise ValueError("audit PMIDs must be unique")
        if [v.pmid for v in self.verdicts] != self.pmids:
            raise ValueError("one verdict per PMID, in PMID order")

    def count(self, verdict: Verdict) -> int:
        return sum(1 for v in self.verdicts if v.verdict is verdict)

    @property
    def counts(self) -> dict[str, int]:
        return {v.value: self.count(v) for v in Verdict}

    @property
    def percentages(self) -> dict[str, float]:
        n = len(self.pmids)
        return {k: (100.0 * c / n if n else 0.0) for k, c in self.counts.items()}

    def to_json(self) -> dict:
        return {
            "output_id": self.output_id, "pmids": self.pmids, "counts": self.counts,
            "verdicts": [{"pmid": v.pmid, "verdict": v.verdict.value, "title": v.title,
                          "journal": v.journal} for v in self.verdicts],
            "author_year_refs": [{"text": r.text, "author": r.author, "year": r.year,
                                  "resolution": r.resolution.value, "candidates": list(r.candidates)}
                                 for r in self.author_year_refs],
        }


def audit_text(text: str, output_id: str, cfg: "DiseasePairConfig | Sequence[str]",
               client: PubMedClient, title_only: bool = False) -> CitationAudit:
    pmids = extract_pmids(text)
    verdicts = []
    for p in pmids:
        rec = client.fetch(p)
        verdicts.append(PmidVerdict(p, classify_relevance(rec, cfg, title_only),
                                    rec.title if rec.exists else "", rec.journal if rec.exists else ""))
    refs = []
    for span, author, year in extract_author_year(text):
        cls, cands = classify_author_year(author, year, client, cfg)
        refs.append(AuthorYearRef(span, author, year, cls, cands))
    return CitationAudit(output_id, pmids, verdicts, refs)


def audit_output(output: "ClinicalOutput", cfg: "DiseasePairConfig | Sequence[str]",
                 client: PubMedClient, title_only: bool = False) -> CitationAudit:
    return audit_text(output.text, f"{output.scenario_id}/{output.arm}", cfg, client, title_only)


# --------------------------------------------------------------------------- report

ZERO_PMID_REPORT = (
    "## Citation Audit Report\n"
    "This output contains **0 PubMed identifiers (PMIDs)**. No specific citations\n"
    "can be verified against PubMed. All clinical claims rely on unverifiable\n"
    "parametric knowledge."
)
REPORT_LINE_CAP = 10
TITLE_MAX = 80

_SUMMARY_LABELS = (
    (Verdict.RELEVANT, "real and clinically relevant"),
    (Verdict.WRONG_FIELD, "real but wrong field"),
    (Verdict.NOT_FOUND, "not found in PubMed"),
)


def _short(title: str) -> str:
    return title if len(title) <= TITLE_MAX else title[:TITLE_MAX - 3].rstrip() + "..."


def render_audit_report(audit: CitationAudit, cap: int = REPORT_LINE_CAP) -> str:
    n = len(audit.pmids)
    if n == 0:
        return ZERO_PMID_REPORT
    lines = [
        "## Citation Audit Report",
        f"This output cites **{n} unique PMIDs**. We verified each against the PubMed database:",
    ]
    for verdict, label in _SUMMARY_LABELS:
        c = audit.count(verdict)
        lines.append(f"- **{c}** ({100.0 * c / n:.0f}%) {label}")
    lines.append("")
    for v in audit.verdicts[:cap]:
        if v.verdict is Verdict.NOT_FOUND:
            lines.append(f"  PMID:{v.pmid} [{v.verdict.tag}]")
        else:
            lines.append(f"  PMID:{v.pmid} [{v.verdict.tag}] -- \"{_short(v.title)}\" ({v.journal})")
    if n > cap:
        lines.append(f"  ... and {n - cap} more PMIDs verified")
    return "\n".join(lines)


def summarize_audits(audits: Iterable[CitationAudit]) -> dict[str, int]:
    """Pooled unique-PMID counts across outputs; the first verdict seen for a PMID wins."""
    best: dict[str, Verdict] = {}
    for a in audits:
        for v in a.verdicts:
            best.setdefault(v.pmid, v.verdict)
    out = {v.value: 0 for v in Verdict}
    for v in best.values():
        out[v.value] += 1
    out["total"] = len(best)
    return out

"""Automated output metrics: FC, ETS, Provenance Gap, citation density, temporal claims."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

from provkg.citeverify import extract_pmids
from provkg.temporal import count_temporal_claims, extract_temporal_claims  # noqa: F401

DEFAULT_R = {"heg_tkg": 0.97, "vanilla": 0.80, "guideline_rag": 0.50}
MIN_CLAIM_TOKENS = 4

_TAG_RE = re.compile(r"\[PMID:", re.I)
_HEADER_RE = re.compile(r"^\s{0,3}#{1,6}\s")
_TABLE_RULE_RE = re.compile(r"^\s*\|?\s*:?-{2,}:?\s*(\|\s*:?-{2,}:?\s*)*\|?\s*$")
_SPLIT_RE = re.compile(r"(?<=[.;])\s+")
_MARKUP_RE = re.compile(r"\*\*|__|`")
_BULLET_RE = re.compile(r"^\s*(?:[-*+•]|\d+[.)])\s+")


def feature_coverage(text: str, features: Sequence[str]) -> float:
    if not features:
        raise ValueError("expected_key_features is empty")
    hay = text.casefold()
    return sum(1 for f in features if f.casefold() in hay) / len(features)


def segment_claims(text: str) -> list[str]:
    """Sentence-level claims after dropping headers and table rules.

    Table rows become one claim each; list bullets and emphasis markers are
    stripped; segments shorter than four whitespace tokens are discarded.
    """
    claims = []
    for line in (text or "").splitlines():
        if not line.strip() or _HEADER_RE.match(line) or _TABLE_RULE_RE.match(line):
            continue
        if line.lstrip().startswith("|"):
            line = " ".join(c.strip() for c in line.strip().strip("|").split("|"))
        line = _MARKUP_RE.sub("", _BULLET_RE.sub("", line))
        for seg in _SPLIT_RE.split(line):
            seg = seg.strip()
            if len(seg.split()) >= MIN_CLAIM_TOKENS:
                claims.append(seg)
    return claims


def evidence_traceability(text: str) -> float:
    claims = segment_claims(text)
    if not claims:
        return 0.0
    return sum(1 for c in claims if _TAG_RE.search(c)) / len(claims)


def provenance_gap(fc: float, ets: float, r: float) -> float:
    for name, v in (("fc", fc), ("ets", ets), ("r", r)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")
    return max(fc - ets * r, 0.0)


def word_count(text: str) -> int:
    return len(text.split())


def citation_density_from_counts(pmids: float, words: float) -> float:
    if words <= 0:
        raise ValueError("word count must be positive")
    return pmids / words * 1000.0


def citation_density(text: str) -> float:
    if not text or not text.strip():
        raise ValueError("empty text")
    return citation_density_from_counts(len(extract_pmids(text)), word_count(text))


def temporal_claims(text: str) -> int:
    return count_temporal_claims(text)


@dataclass(frozen=True)
class ProvenanceMetrics:
    fc: float
    ets: float
    r: float
    pg: float
    density: float
    temporal_claims: int
    words: int
    unique_pmids: int


def compute_metrics(text: str, features: Sequence[str], arm: str,
                    r_table: Mapping[str, float] = DEFAULT_R) -> ProvenanceMetrics:
    fc = feature_coverage(text, features)
    ets = evidence_traceability(text)
    r = r_table[arm]
    words = word_count(text)
    pmids = len(extract_pmids(text))
    return ProvenanceMetrics(
        fc=fc, ets=ets, r=r, pg=provenance_gap(fc, ets, r),
        density=citation_density_from_counts(pmids, words) if words else 0.0,
        temporal_claims=temporal_claims(text), words=words, unique_pmids=pmids,
    )


@dataclass(frozen=True)
class PublishedRow:
    scenario_id: str
    output_type: str
    arm: str
    fc: float
    ets: float
    pg: float


def load_published_metrics() -> list[PublishedRow]:
    """Per-scenario FC/ETS/PG values shipped with the package (36 scenarios × 3 arms)."""
    with resources.files("provkg.data").joinpath("published_scenario_metrics.csv").open(
            encoding="utf-8", newline="") as fh:
        return [PublishedRow(r["scenario_id"], r["output_type"], r["arm"],
                             float(r["fc"]), float(r["ets"]), float(r["pg"]))
                for r in csv.DictReader(fh)]

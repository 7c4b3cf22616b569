"""Counterfactual evidence injection and outcome classification."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from provkg.citeverify import extract_pmids
from provkg.consensus import Edge, Tier, TIER_SCORES, edge_key
from provkg.normalize import NormalizedEntity, Resolver
from provkg.synthesis import ClinicalOutput


class Outcome(str, enum.Enum):
    RESISTED = "Resisted"
    PARTIAL = "Partial"
    FAITHFUL = "Faithful"


class MarkerCollision(ValueError):
    pass


@dataclass(frozen=True)
class CounterfactualCase:
    id: str
    disease_pair: str
    scenario_id: str
    injected_statement: str
    injected_edge: Edge
    resist_keywords: tuple[str, ...]
    faithful_keywords: tuple[str, ...]

    def __post_init__(self):
        if len(self.injected_edge.pmid_list) != 1:
            raise ValueError(f"{self.id}: injected edge must carry exactly one marker PMID")

    @property
    def marker_pmid(self) -> str:
        return next(iter(self.injected_edge.pmid_list))

    @classmethod
    def from_dict(cls, d: Mapping) -> "CounterfactualCase":
        s = NormalizedEntity(d["subject"], d.get("subject_cui"), d.get("subject_type", "Entity"),
                             Resolver.DICTIONARY if d.get("subject_cui") else Resolver.NONE)
        o = NormalizedEntity(d["object"], d.get("object_cui"), d.get("object_type", "Entity"),
                             Resolver.DICTIONARY if d.get("object_cui") else Resolver.NONE)
        tier = Tier(d.get("tier", "SILVER"))
        edge = Edge(
            edge_id=edge_key(s, d["predicate"], o), subject=s, predicate=d["predicate"], object=o,
            quality_tier=tier, consensus_score=TIER_SCORES[tier],
            source_models=frozenset({"counterfactual"}), pmid_list=frozenset({str(d["marker_pmid"])}),
            evidence_sample=d["injected_statement"], disease_context=frozenset(d.get("disease_context", ())),
        )
        return cls(d["id"], d["disease_pair"], d["scenario_id"], d["injected_statement"], edge,
                   tuple(d.get("resist_keywords", ())), tuple(d.get("faithful_keywords", ())))


def load_cases(path: str | Path) -> list[CounterfactualCase]:
    with open(path, encoding="utf-8") as fh:
        return [CounterfactualCase.from_dict(d) for d in json.load(fh)]


def inject_counterfactual(evidence: Sequence[Edge], cf: CounterfactualCase,
                          corpus_pmids: Iterable[str] = ()) -> list[Edge]:
    """Put the synthetic edge at the head of the retrieved evidence."""
    known = set(corpus_pmids) | {p for e in evidence for p in e.pmid_list}
    if cf.marker_pmid in known:
        raise MarkerCollision(f"{cf.id}: marker PMID {cf.marker_pmid} already used by the corpus")
    return [cf.injected_edge] + [e for e in evidence if e.edge_id != cf.injected_edge.edge_id]


def remove_counterfactual(evidence: Sequence[Edge], cf: CounterfactualCase) -> list[Edge]:
    return [e for e in evidence if cf.marker_pmid not in e.pmid_list]


def _any(text: str, words: Sequence[str]) -> bool:
    t = text.casefold()
    return any(w.casefold() in t for w in words)


def classify_cf_outcome(output: ClinicalOutput, cf: CounterfactualCase) -> tuple[Outcome, bool]:
    """Keyword verdict plus detectability (marker PMID in manifest or inline tags).

    An output that neither contradicts nor repeats the injection did not
    propagate it and counts as resisted.
    """
    detectable = cf.marker_pmid in output.manifest_pmids or cf.marker_pmid in extract_pmids(output.text)
    contradicts = _any(output.text, cf.resist_keywords)
    repeats = _any(output.text, cf.faithful_keywords)
    if contradicts and repeats:
        outcome = Outcome.PARTIAL
    elif repeats:
        outcome = Outcome.FAITHFUL
    else:
        outcome = Outcome.RESISTED
    return outcome, detectable

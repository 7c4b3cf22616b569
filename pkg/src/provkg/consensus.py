"""Triplet deduplication, quality tiering and Tier-1/Tier-2 integration."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from provkg.normalize import _CUI_RE, NormalizedEntity, Resolver, Triplet, canonical_label, fold
from provkg.pairconfig import TEMPORAL_PREDICATES, classify_disease_context
from provkg.temporal import TemporalAnchor

if TYPE_CHECKING:
    from provkg.pairconfig import DiseasePairConfig

log = logging.getLogger(__name__)


class Tier(str, enum.Enum):
    GOLD = "GOLD"
    SILVER = "SILVER"
    BRONZE = "BRONZE"

    @property
    def score(self) -> float:
        return TIER_SCORES[self]

    @property
    def rank(self) -> int:
        return TIER_RANK[self.value]


TIER_SCORES = {Tier.GOLD: 0.95, Tier.SILVER: 0.85, Tier.BRONZE: 0.70}
TIER_RANK = {"GOLD": 0, "SILVER": 1, "BRONZE": 2}
GRADE = {Tier.GOLD: "High", Tier.SILVER: "Moderate", Tier.BRONZE: "Low"}


def tier_rank(tier: "Tier | str | None") -> int:
    if tier is None:
        return 3
    return TIER_RANK.get(tier.value if isinstance(tier, Tier) else str(tier), 3)


def map_tier_to_grade(tier: Tier | str) -> str:
    return GRADE[Tier(tier)]


def _entity_key(e: NormalizedEntity | str) -> str:
    return e.key if isinstance(e, NormalizedEntity) else fold(e)


def normalized_spo(subject, predicate: str, obj) -> str:
    return f"{_entity_key(subject)}|{predicate.strip().upper()}|{_entity_key(obj)}"


def edge_key(subject: NormalizedEntity | str, predicate: str, obj: NormalizedEntity | str) -> str:
    """MD5 of ``subject|PREDICATE|object`` with case-folded, CUI-substituted entities.

    An identity key, not a security primitive.
    """
    return hashlib.md5(normalized_spo(subject, predicate, obj).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Edge:
    edge_id: str
    subject: NormalizedEntity
    predicate: str
    object: NormalizedEntity
    quality_tier: Tier | None = None
    consensus_score: float | None = None
    source_models: frozenset[str] = frozenset()
    pmid_list: frozenset[str] = frozenset()
    evidence_sample: str = ""
    is_temporal: bool = False
    anchor: TemporalAnchor | None = None
    cross_tier_confirmed: bool = False
    disease_context: frozenset[str] = frozenset()
    is_protected: bool = False
    fired_rules: tuple[str, ...] = ()

    def __post_init__(self):
        if self.quality_tier is not None and self.consensus_score != TIER_SCORES[self.quality_tier]:
            raise ValueError(f"{self.edge_id}: score {self.consensus_score} does not match {self.quality_tier}")
        if self.is_protected and self.quality_tier is not Tier.GOLD:
            raise ValueError(f"{self.edge_id}: protected edges must be GOLD")
        if self.is_temporal and self.anchor is None:
            raise ValueError(f"{self.edge_id}: temporal edge without anchor")

    @property
    def evidence_breadth(self) -> int:
        return len(self.pmid_list)

    @property
    def temporal_value_display(self) -> str:
        return self.anchor.display if self.anchor is not None and self.anchor.resolved else ""

    @property
    def temporal_parse_status(self) -> str:
        return self.anchor.parse_status.value if self.anchor is not None else ""

    @property
    def time_index_months(self) -> int | None:
        return self.anchor.time_index_months if self.anchor is not None and self.anchor.resolved else None

    @property
    def temporal_midpoint_years(self) -> float | None:
        return self.anchor.midpoint_years if self.anchor is not None and self.anchor.resolved else None

    def with_tier(self, tier: Tier, cross_tier: bool | None = None) -> "Edge":
        return replace(self, quality_tier=tier, consensus_score=TIER_SCORES[tier],
                       cross_tier_confirmed=self.cross_tier_confirmed if cross_tier is None else cross_tier)

    # --- record form (stable field order) ---------------------------------------

    def to_record(self) -> dict:
        return {
            "edge_id": self.edge_id,
            "source_name": self.subject.surface,
            "source_cui": self.subject.cui,
            "source_label": self.subject.type_label,
            "relation": self.predicate,
            "target_name": self.object.surface,
            "target_cui": self.object.cui,
            "target_label": self.object.type_label,
            "quality_tier": self.quality_tier.value if self.quality_tier else None,
            "consensus_score": self.consensus_score,
            "source_models": sorted(self.source_models),
            "pmid_list": sorted(self.pmid_list),
            "evidence_sample": self.evidence_sample,
            "is_temporal": self.is_temporal,
            "temporal_value_display": self.temporal_value_display,
            "time_index_months": self.time_index_months,
            "temporal_midpoint_years": self.temporal_midpoint_years,
            "temporal_parse_status": self.temporal_parse_status,
            "cross_tier_confirmed": self.cross_tier_confirmed,
            "evidence_breadth": self.evidence_breadth,
            "disease_context": sorted(self.disease_context),
            "is_protected": self.is_protected,
        }

    @classmethod
    def from_record(cls, r: Mapping) -> "Edge":
        def ent(prefix: str) -> NormalizedEntity:
            cui = str(r.get(f"{prefix}_cui") or "").strip().upper() or None
            if cui is not None and not _CUI_RE.match(cui):
                cui = None  # exported tables sometimes carry placeholder ids
            label = r.get(f"{prefix}_label") or "Entity"
            if isinstance(label, list):
                label = next((l for l in label if l != "Entity"), "Entity")
            label = canonical_label(label)
            return NormalizedEntity(str(r[f"{prefix}_name"]), cui, label,
                                    Resolver.DICTIONARY if cui else Resolver.NONE)

        is_temporal = bool(r.get("is_temporal"))
        status = r.get("temporal_parse_status") or ""
        display = r.get("temporal_value_display") or r.get("temporal_display") or ""
        anchor = None
        if display and status != "unresolved":
            try:
                anchor = TemporalAnchor.from_display(display)
            except ValueError:
                anchor = TemporalAnchor.unresolved(display)
        elif is_temporal or status:
            anchor = TemporalAnchor.unresolved(display)
        tier = Tier(r["quality_tier"]) if r.get("quality_tier") else None
        return cls(
            edge_id=str(r["edge_id"]),
            subject=ent("source"),
            predicate=str(r["relation"]),
            object=ent("target"),
            quality_tier=tier,
            consensus_score=TIER_SCORES[tier] if tier else None,
            source_models=frozenset(r.get("source_models") or ()),
            pmid_list=frozenset(str(p) for p in (r.get("pmid_list") or ())),
            evidence_sample=r.get("evidence_sample") or "",
            is_temporal=is_temporal,
            anchor=anchor,
            cross_tier_confirmed=bool(r.get("cross_tier_confirmed") or r.get("cross_tier")),
            disease_context=frozenset(r.get("disease_context") or ()),
            is_protected=bool(r.get("is_protected")),
        )


def write_edges(edges: Iterable[Edge], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in sorted(edges, key=lambda e: e.edge_id):
            fh.write(json.dumps(e.to_record(), ensure_ascii=False) + "\n")


def read_edges(path: str | Path) -> list[Edge]:
    with open(path, encoding="utf-8") as fh:
        return [Edge.from_record(json.loads(l)) for l in fh if l.strip()]


# --------------------------------------------------------------------------- grouping

def group_triplets(triplets: Iterable[Triplet]) -> dict[str, list[Triplet]]:
    groups: dict[str, list[Triplet]] = defaultdict(list)
    for t in triplets:
        groups[edge_key(t.subject, t.predicate, t.object)].append(t)
    return dict(groups)


def _context_for(t: Triplet, cfg: "DiseasePairConfig") -> set[str]:
    names = classify_disease_context(f"{t.subject.surface} | {t.object.surface}", cfg)
    if not names:
        names = classify_disease_context(t.evidence_quote, cfg)
    if not names:
        cuis = {t.subject.cui, t.object.cui}
        for d in cfg.diseases:
            if cuis & set(d.cuis):
                names.append(d.short_name)
    return set(names)


def merge_group(group: Sequence[Triplet], cfg: "DiseasePairConfig | None" = None,
                temporal_predicates: Iterable[str] = TEMPORAL_PREDICATES,
                fired_rules: Iterable[str] = ()) -> Edge:
    """Merge triplets that share an edge key into one untiered edge."""
    if not group:
        raise ValueError("empty group")
    keys = {edge_key(t.subject, t.predicate, t.object) for t in group}
    if len(keys) != 1:
        raise ValueError("group members do not share a key")
    # representative: highest confidence, then smallest pmid
    ranked = sorted(group, key=lambda t: (-t.confidence, t.pmid, t.source_model))
    rep = ranked[0]

    anchors = [t for t in ranked if t.anchor is not None and t.anchor.resolved]
    anchor = anchors[0].anchor if anchors else None
    for t in anchors[1:]:
        if t.anchor.display != anchor.display:
            log.info("edge %s: anchor %s from %s discarded in favour of %s",
                     keys, t.anchor.display, t.pmid, anchor.display)
    is_temporal = rep.predicate in set(temporal_predicates)
    if is_temporal and anchor is None:
        anchor = next((t.anchor for t in ranked if t.anchor is not None),
                      TemporalAnchor.unresolved())

    context: set[str] = set()
    if cfg is not None:
        for t in group:
            context |= _context_for(t, cfg)

    return Edge(
        edge_id=keys.pop(),
        subject=rep.subject,
        predicate=rep.predicate,
        object=rep.object,
        source_models=frozenset(t.source_model for t in group if t.source_model),
        pmid_list=frozenset(t.pmid for t in group if t.pmid),
        evidence_sample=rep.evidence_quote,
        is_temporal=is_temporal,
        anchor=anchor if is_temporal or anchor is not None else None,
        disease_context=frozenset(context),
        fired_rules=tuple(sorted(set(fired_rules))),
    )


def assign_tier(e: Edge, tier1: Mapping[str, Edge]) -> Edge:
    if e.edge_id in tier1:
        return e.with_tier(Tier.GOLD, cross_tier=True)
    if len(e.source_models) >= 2 or len(e.pmid_list) >= 2:
        return e.with_tier(Tier.SILVER)
    return e.with_tier(Tier.BRONZE)


# --------------------------------------------------------------------------- integration

DEFAULT_ANTONYMS: frozenset[frozenset[str]] = frozenset({
    frozenset({"TREATED_WITH", "LACKS_FEATURE"}),
})


def conflicts(e: Edge, t1: Edge, antonyms: Iterable[frozenset[str]] = DEFAULT_ANTONYMS,
              temporal_predicates: Iterable[str] = TEMPORAL_PREDICATES) -> str | None:
    """Reason string when ``e`` contradicts the curated edge ``t1``, else None."""
    if e.subject.key != t1.subject.key or e.object.key != t1.object.key:
        return None
    if frozenset({e.predicate, t1.predicate}) in set(antonyms):
        return f"antonym predicates {e.predicate}/{t1.predicate}"
    if (e.predicate == t1.predicate and e.predicate in set(temporal_predicates)
            and e.anchor is not None and t1.anchor is not None
            and e.anchor.resolved and t1.anchor.resolved and not e.anchor.overlaps(t1.anchor)):
        return f"disjoint anchors {e.anchor.display} vs {t1.anchor.display}"
    return None


@dataclass
class IntegrationResult:
    edges: list[Edge]
    discarded: list[tuple[str, str, str]] = field(default_factory=list)  # (tier2 id, tier1 id, reason)
    absorbed: list[str] = field(default_factory=list)


def integrate_tiers(tier1: Sequence[Edge], tier2: Sequence[Edge],
                    antonyms: Iterable[frozenset[str]] = DEFAULT_ANTONYMS) -> IntegrationResult:
    """Union of both tiers; curated edges win every conflict."""
    for e in tier1:
        if not e.is_protected:
            raise ValueError(f"tier-1 edge {e.edge_id} is not protected")
    antonyms = set(antonyms)
    merged: dict[str, Edge] = {e.edge_id: e for e in tier1}
    by_pair: dict[tuple[str, str], list[Edge]] = defaultdict(list)
    for e in tier1:
        by_pair[(e.subject.key, e.object.key)].append(e)

    res = IntegrationResult(edges=[])
    kept: list[Edge] = []
    for e in tier2:
        # conflict check first: a same-key temporal edge with a disjoint anchor is a conflict
        reason = None
        for t1 in by_pair.get((e.subject.key, e.object.key), ()):
            reason = conflicts(e, t1, antonyms)
            if reason:
                res.discarded.append((e.edge_id, t1.edge_id, reason))
                log.info("discarding %s: conflicts with protected %s (%s)", e.edge_id, t1.edge_id, reason)
                break
        if reason:
            continue
        if e.edge_id in merged:
            base = merged[e.edge_id]
            merged[e.edge_id] = replace(
                base,
                pmid_list=base.pmid_list | e.pmid_list,
                source_models=base.source_models | e.source_models,
                disease_context=base.disease_context | e.disease_context,
                cross_tier_confirmed=True,
            )
            res.absorbed.append(e.edge_id)
        else:
            kept.append(e)
    res.edges = [merged[e.edge_id] for e in tier1] + kept
    return res


def load_tier1(path: str | Path, cfg: "DiseasePairConfig | None" = None) -> list[Edge]:
    """Curated edges from a JSON list of records.

    Each record carries subject/object names, optional CUIs and labels, the
    predicate, an optional temporal display, PMIDs and disease context.
    """
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    return [curated_edge(r, cfg) for r in records]


def curated_edge(r: Mapping, cfg: "DiseasePairConfig | None" = None) -> Edge:
    s = NormalizedEntity(r["subject"], r.get("subject_cui"), r.get("subject_type", "Entity"),
                         Resolver.DICTIONARY if r.get("subject_cui") else Resolver.NONE)
    o = NormalizedEntity(r["object"], r.get("object_cui"), r.get("object_type", "Entity"),
                         Resolver.DICTIONARY if r.get("object_cui") else Resolver.NONE)
    pred = r["predicate"]
    temporal = set(cfg.temporal_predicates) | TEMPORAL_PREDICATES if cfg else TEMPORAL_PREDICATES
    is_temporal = pred in temporal
    anchor = None
    if r.get("temporal"):
        anchor = TemporalAnchor.from_display(r["temporal"])
    elif is_temporal:
        anchor = TemporalAnchor.unresolved()
    ctx = r.get("disease_context")
    if ctx is None and cfg is not None:
        ctx = classify_disease_context(f"{s.surface} | {o.surface}", cfg)
    return Edge(
        edge_id=edge_key(s, pred, o), subject=s, predicate=pred, object=o,
        quality_tier=Tier.GOLD, consensus_score=TIER_SCORES[Tier.GOLD],
        source_models=frozenset(r.get("source_models") or ["curated"]),
        pmid_list=frozenset(str(p) for p in r.get("pmids", [])),
        evidence_sample=r.get("evidence", ""),
        is_temporal=is_temporal, anchor=anchor,
        disease_context=frozenset(ctx or ()), is_protected=True,
    )

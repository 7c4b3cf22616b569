"""Phase I (graph construction) and Phase II (grounded inference) orchestration."""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

from provkg import consensus, graphstore
from provkg.citeverify import CitationAudit, PubMedClient, audit_output
from provkg.consensus import Edge, Tier
from provkg.extraction import Abstract, ModelProvider, extract_triplets, screen_relevance
from provkg.graphstore import Graph
from provkg.normalize import (RuleEngine, Triplet, apply_correction_rules, build_synonym_table,
                              default_resolvers, normalize_entity)
from provkg.pairconfig import DiseasePairConfig, TEMPORAL_PREDICATES, classify_disease_context
from provkg.synthesis import (ClinicalOutput, ClinicalScenario, RagIndex, SynthesisParams,
                              build_prompt, manifest_for, synthesize, validate_privacy_config)
from provkg.temporal import resolve_temporal

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception | str):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Phase1Result:
    graph: Graph
    edges: list[Edge]
    report: dict
    triplets: list[Triplet] = field(default_factory=list)


def _anchor_for(t: Triplet, cfg: DiseasePairConfig):
    temporal = set(cfg.temporal_predicates) | TEMPORAL_PREDICATES
    if t.temporal_phrase:
        return resolve_temporal(t.temporal_phrase, cfg)
    if t.predicate in temporal:
        return resolve_temporal(t.object.surface, cfg)
    return None


def run_phase1(cfg: DiseasePairConfig, corpus: Sequence[Abstract],
               providers: Sequence[ModelProvider], tier1: Sequence[Edge] = (),
               engine: RuleEngine | None = None) -> Phase1Result:
    """Screen, extract, normalise, correct, anchor, vote, integrate and load."""
    report: dict = {"pair": cfg.pair_id, "abstracts": len(corpus)}
    stage = "screening"
    try:
        if not corpus:
            raise ValueError("empty corpus")
        passed = [a for a in corpus if screen_relevance(a, cfg, providers).passed]
        report["screen_passed"] = len(passed)
        report["screen_pass_rate"] = round(len(passed) / len(corpus), 4)

        stage = "extraction"
        raw = []
        dropped = flagged = 0
        failed = Counter()
        for a in passed:
            res = extract_triplets(a, cfg, providers)
            raw.extend(res.triplets)
            dropped += len(res.dropped)
            flagged += res.flagged
            failed.update(res.failed_providers)
        report.update(raw_triplets=len(raw), dropped_quotes=dropped, out_of_schema=flagged,
                      failed_provider_calls=dict(sorted(failed.items())))

        stage = "normalization"
        resolvers = default_resolvers(build_synonym_table(cfg))
        normalized = []
        for r in raw:
            normalized.append(Triplet(
                subject=normalize_entity(r.subject, resolvers, r.subject_type),
                predicate=r.predicate,
                object=normalize_entity(r.object, resolvers, r.object_type),
                evidence_quote=r.evidence_quote, source_model=r.source_model, pmid=r.pmid,
                temporal_phrase=r.temporal_phrase, out_of_schema=r.out_of_schema,
                confidence=r.confidence,
            ))
        report["cui_resolved_entities"] = sum((t.subject.cui is not None) + (t.object.cui is not None)
                                              for t in normalized)

        stage = "correction"
        corrected, fired_by_key, rule_counts = [], {}, Counter()
        for t in normalized:
            t2, fired = apply_correction_rules(t, engine)
            rule_counts.update(fired)
            corrected.append(t2)
            if fired:
                k = consensus.edge_key(t2.subject, t2.predicate, t2.object)
                fired_by_key.setdefault(k, set()).update(fired)
        report["rules_fired"] = dict(sorted(rule_counts.items()))

        stage = "temporal"
        anchored = []
        resolved = 0
        for t in corrected:
            anchor = _anchor_for(t, cfg)
            if anchor is not None and anchor.resolved:
                resolved += 1
            anchored.append(replace(t, anchor=anchor))
        report["anchors_resolved"] = resolved

        stage = "consensus"
        temporal = set(cfg.temporal_predicates) | TEMPORAL_PREDICATES
        tier1_index = {e.edge_id: e for e in tier1}
        tier2 = []
        for key, group in sorted(consensus.group_triplets(anchored).items()):
            merged = consensus.merge_group(group, cfg, temporal, fired_by_key.get(key, ()))
            tier2.append(consensus.assign_tier(merged, tier1_index))
        report["tier2_edges"] = len(tier2)

        stage = "integration"
        integ = consensus.integrate_tiers(list(tier1), tier2)
        report.update(tier1_edges=len(tier1), absorbed=len(integ.absorbed),
                      discarded_conflicts=len(integ.discarded))
        edges = sorted(integ.edges, key=lambda e: e.edge_id)
        hist = Counter(e.quality_tier.value for e in edges)
        report["tiers"] = {t.value: hist.get(t.value, 0) for t in Tier}

        stage = "graph"
        g = Graph.from_edges(edges, cfg)
        report["graph"] = g.stats()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc
    return Phase1Result(g, edges, report, anchored)


# --------------------------------------------------------------------------- phase II

ROUTES = {
    "differential": ("comparative", "neighbourhood"),
    "temporal_comparative": ("temporal",),
    "temporal": ("temporal",),
    "treatment": ("treatment",),
}


def scenario_diseases(scenario: ClinicalScenario, cfg: DiseasePairConfig) -> list[str]:
    hits = classify_disease_context(scenario.scenario_text, cfg)
    return hits or list(cfg.short_names)


def retrieve_evidence(g: Graph, scenario: ClinicalScenario, cfg: DiseasePairConfig,
                      timings: dict | None = None) -> list[Edge]:
    """Run the routed queries for each mentioned disease; first occurrence wins on duplicates."""
    out: list[Edge] = []
    seen: set[str] = set()
    for disease in scenario_diseases(scenario, cfg):
        spec = cfg.disease(disease)
        for q in ROUTES[scenario.output_type]:
            t0 = time.perf_counter()
            if q == "comparative":
                hits = graphstore.query_comparative(g, disease, cfg)
            elif q == "temporal":
                hits = graphstore.query_temporal(g, disease, cfg)
            elif q == "treatment":
                hits = graphstore.query_treatment(g, disease, cfg)
            else:
                hits = graphstore.query_neighbourhood(g, spec.cuis[0], disease=spec.short_name)
            if timings is not None:
                timings.setdefault(q, []).append(time.perf_counter() - t0)
            for e in hits:
                if e.edge_id not in seen:
                    seen.add(e.edge_id)
                    out.append(e)
    return out


@dataclass
class Phase2Result:
    output: ClinicalOutput
    evidence: list[Edge]
    audit: CitationAudit | None = None
    timings: dict = field(default_factory=dict)


def run_phase2(g: Graph, cfg: DiseasePairConfig, scenario: ClinicalScenario, arm: str,
               provider: ModelProvider, *, rag_index: RagIndex | None = None,
               client: PubMedClient | None = None, strict_privacy: bool = False,
               params: SynthesisParams | None = None, evidence_hook=None,
               rag_k: int = 10) -> Phase2Result:
    """Retrieve, format, prompt, synthesise and optionally audit one (scenario, arm).

    ``evidence_hook`` receives the retrieved edge list and returns the list
    actually shown to the model (used for counterfactual injection).
    """
    validate_privacy_config({"synthesis": provider.endpoint}, strict=strict_privacy)
    timings: dict = {}
    edges: list[Edge] = []
    chunk_ids: list[int] = []
    if arm == "heg_tkg":
        edges = retrieve_evidence(g, scenario, cfg, timings)
        if evidence_hook is not None:
            edges = evidence_hook(edges)
        prompt = build_prompt(arm, scenario, edges)
    elif arm == "guideline_rag":
        if rag_index is None:
            raise ValueError("guideline_rag arm needs a chunk index")
        chunks = rag_index.retrieve(scenario.scenario_text, rag_k)
        chunk_ids = [c.chunk_id for c in chunks]
        prompt = build_prompt(arm, scenario, chunks)
    elif arm == "vanilla":
        prompt = build_prompt(arm, scenario, None)
    else:
        raise ValueError(f"unknown arm {arm!r}")
    out = synthesize(prompt, provider, params, scenario_id=scenario.id,
                     manifest=manifest_for(edges), chunk_ids=chunk_ids)
    audit = audit_output(out, cfg, client) if client is not None else None
    return Phase2Result(out, edges, audit, timings)

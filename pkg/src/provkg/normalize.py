"""Entity resolution to UMLS CUIs and rule-based triplet correction."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from provkg.temporal import TemporalAnchor

NODE_LABELS = frozenset({
    "Disease", "Entity", "Gene", "Protein", "Treatment", "Symptom",
    "ClinicalFinding", "Measurement", "Procedure", "PatientGroup", "Mutation",
    "Autoantibody", "InheritancePattern", "PhysiologicalFunction",
})

_CUI_RE = re.compile(r"^C\d{7}$")

# common aliases emitted by extraction models
_LABEL_ALIASES = {
    "drug": "Treatment", "therapy": "Treatment", "medication": "Treatment",
    "finding": "ClinicalFinding", "sign": "ClinicalFinding", "test": "Measurement",
    "biomarker": "Measurement", "lab": "Measurement", "patient_group": "PatientGroup",
    "population": "PatientGroup", "antibody": "Autoantibody", "inheritance": "InheritancePattern",
    "function": "PhysiologicalFunction", "physfunc": "PhysiologicalFunction",
    "patientgrp": "PatientGroup", "inheritpattern": "InheritancePattern",
}


def canonical_label(label: str | None) -> str:
    if not label:
        return "Entity"
    if label in NODE_LABELS:
        return label
    folded = label.replace(" ", "").replace("_", "").lower()
    for known in NODE_LABELS:
        if known.lower() == folded:
            return known
    return _LABEL_ALIASES.get(label.lower(), _LABEL_ALIASES.get(folded, "Entity"))


class Resolver(enum.Enum):
    DICTIONARY = "Dictionary"
    EMBEDDING = "EmbeddingLinker"
    FALLBACK = "FallbackLinker"
    FUZZY = "Fuzzy"
    NONE = "None"


def fold(text: str) -> str:
    return " ".join(text.split()).casefold()


@dataclass(frozen=True)
class NormalizedEntity:
    surface: str
    cui: str | None = None
    type_label: str = "Entity"
    resolver_used: Resolver = Resolver.NONE

    def __post_init__(self):
        if self.type_label not in NODE_LABELS:
            raise ValueError(f"unknown node label {self.type_label!r}")
        if self.cui is not None and not _CUI_RE.match(self.cui):
            raise ValueError(f"malformed CUI {self.cui!r}")

    @property
    def key(self) -> str:
        """Identity used for graph nodes and edge keys."""
        return self.cui.lower() if self.cui else fold(self.surface)


class EntityResolver(Protocol):
    kind: Resolver

    def resolve(self, surface: str) -> str | None: ...


class DictionaryResolver:
    kind = Resolver.DICTIONARY

    def __init__(self, table: Mapping[str, str]):
        self.table = {fold(k): v for k, v in table.items()}

    def resolve(self, surface: str) -> str | None:
        return self.table.get(fold(surface))


class EmbeddingLinker:
    """Interface for a neural entity linker (no model is bundled)."""

    kind = Resolver.EMBEDDING

    def __init__(self, link: Callable[[str], str | None] | None = None):
        self._link = link

    def resolve(self, surface: str) -> str | None:
        return self._link(surface) if self._link else None


class FallbackLinker(EmbeddingLinker):
    kind = Resolver.FALLBACK


def _token_set(text: str) -> frozenset[str]:
    return frozenset(re.findall(r"\w+", fold(text)))


class FuzzyResolver:
    """Token-set Jaccard against the dictionary keys; best score >= threshold wins."""

    kind = Resolver.FUZZY

    def __init__(self, table: Mapping[str, str], threshold: float = 0.8):
        self.entries = sorted((fold(k), _token_set(k), v) for k, v in table.items())
        self.threshold = threshold

    def resolve(self, surface: str) -> str | None:
        q = _token_set(surface)
        if not q:
            return None
        best: tuple[float, str] | None = None
        for _, toks, cui in self.entries:
            if not toks:
                continue
            score = len(q & toks) / len(q | toks)
            if score >= self.threshold and (best is None or score > best[0]):
                best = (score, cui)
        return best[1] if best else None


def default_resolvers(synonyms: Mapping[str, str]) -> list:
    return [DictionaryResolver(synonyms), EmbeddingLinker(), FallbackLinker(),
            FuzzyResolver(synonyms)]


def build_synonym_table(cfg) -> dict[str, str]:
    """Disease names/patterns from the pair config plus its synonym block."""
    table: dict[str, str] = {}
    for d in cfg.diseases:
        for name in (d.full_name, d.short_name, *d.text_patterns):
            table.setdefault(fold(name), d.cuis[0])
    if cfg.parent and cfg.parent.get("cui"):
        table.setdefault(fold(cfg.parent.get("name", "")), cfg.parent["cui"])
    table.update({fold(k): v for k, v in cfg.synonyms.items()})
    return table


def normalize_entity(surface: str, resolvers: Sequence, type_label: str = "Entity") -> NormalizedEntity:
    """Try resolvers in order; the first hit wins."""
    if not surface or not surface.strip():
        raise ValueError("empty surface form")
    label = canonical_label(type_label)
    for r in resolvers:
        cui = r.resolve(surface)
        if cui:
            return NormalizedEntity(surface, cui, label, r.kind)
    return NormalizedEntity(surface, None, label, Resolver.NONE)


# --------------------------------------------------------------------------- correction rules

@dataclass(frozen=True)
class Triplet:
    subject: NormalizedEntity
    predicate: str
    object: NormalizedEntity
    evidence_quote: str = ""
    source_model: str = ""
    pmid: str = ""
    temporal_phrase: str | None = None
    out_of_schema: bool = False
    confidence: float = 1.0
    anchor: TemporalAnchor | None = None


Guard = Callable[[Triplet], bool]
Transform = Callable[[Triplet], Triplet]


@dataclass(frozen=True)
class CorrectionRule:
    id: str
    name: str
    subject_type: str
    predicate: str
    object_type: str
    transform: Transform
    rationale: str
    guard: Guard | None = None

    def matches(self, t: Triplet) -> bool:
        return (t.subject.type_label == self.subject_type
                and t.predicate == self.predicate
                and t.object.type_label == self.object_type
                and (self.guard is None or self.guard(t)))


def _retype(e: NormalizedEntity, label: str) -> NormalizedEntity:
    return replace(e, type_label=label)


def _invert(t: Triplet, predicate: str | None = None, s_label: str | None = None,
            o_label: str | None = None) -> Triplet:
    new_s = _retype(t.object, s_label) if s_label else t.object
    new_o = _retype(t.subject, o_label) if o_label else t.subject
    return replace(t, subject=new_s, object=new_o, predicate=predicate or t.predicate)


def _repredicate(t: Triplet, predicate: str, s_label: str | None = None,
                 o_label: str | None = None) -> Triplet:
    return replace(
        t, predicate=predicate,
        subject=_retype(t.subject, s_label) if s_label else t.subject,
        object=_retype(t.object, o_label) if o_label else t.object,
    )


THERAPEUTIC_PROCEDURES = (
    "plasmapheresis", "plasma exchange", "thymectomy", "surgery", "surgical",
    "ivig", "immunoglobulin", "immunoadsorption", "transplant", "ventilation",
    "spinal fusion", "tracheostomy", "resection", "tendon release",
    "physiotherapy", "physical therapy", "gene therapy", "exon skipping",
)
DIAGNOSTIC_PROCEDURES = (
    "biopsy", "emg", "electromyography", "nerve conduction", "ncs", "mri",
    "repetitive nerve stimulation", "rns", "single-fiber", "single fibre",
    "single fiber", "ultrasound", "lumbar puncture", "csf analysis",
    "genetic testing", "echocardiography", "spirometry",
)
INHERITANCE_MARKERS = ("x-linked", "autosomal", "recessive", "dominant", "inheritance", "mitochondrial")


def _has_any(text: str, words: Iterable[str]) -> bool:
    t = fold(text)
    return any(re.search(r"(?<!\w)" + re.escape(w) + r"(?!\w)", t) for w in words)


def _therapeutic(e: NormalizedEntity) -> bool:
    return _has_any(e.surface, THERAPEUTIC_PROCEDURES)


def _autoantibody(e: NormalizedEntity) -> bool:
    s = fold(e.surface)
    return s.startswith(("anti-", "anti ")) or "antibod" in s or "autoantib" in s


def _gene_like(e: NormalizedEntity) -> bool:
    letters = re.sub(r"[^A-Za-z]", "", e.surface)
    return (bool(letters) and letters.isupper()) or bool(re.search(r"\bgene\b", e.surface, re.I))


def _strip_deficiency(t: Triplet) -> Triplet:
    stripped = re.sub(r"\s*\bdeficien(?:cy|t)\b\s*", " ", t.object.surface, flags=re.I).strip()
    obj = NormalizedEntity(stripped or t.object.surface, None, "Protein", Resolver.NONE)
    return replace(t, predicate="LACKS_FEATURE", object=obj)


RULES: dict[str, CorrectionRule] = {r.id: r for r in [
    CorrectionRule("1", "invert_caused_by_mutation", "Gene", "CAUSED_BY_MUTATION", "Disease",
                   lambda t: _invert(t), "Fix direction inversion"),
    CorrectionRule("2", "invert_treated_with", "Treatment", "TREATED_WITH", "Disease",
                   lambda t: _invert(t), "Fix direction inversion"),
    CorrectionRule("3", "procedure_to_monitored", "Procedure", "TREATED_WITH", "Disease",
                   lambda t: _invert(t, "MONITORED_WITH"), "Diagnostics are not treatments",
                   guard=lambda t: not _therapeutic(t.subject)),
    CorrectionRule("3b", "therapeutic_proc_invert", "Procedure", "TREATED_WITH", "Disease",
                   lambda t: _invert(t), "Therapeutic procedure: invert only",
                   guard=lambda t: _therapeutic(t.subject)),
    CorrectionRule("4", "mutation_occurs_in", "Mutation", "ASSOCIATED_WITH", "Gene",
                   lambda t: _repredicate(t, "OCCURS_IN"), "Refine generic predicate"),
    CorrectionRule("5", "inheritance_pattern", "Disease", "ASSOCIATED_WITH", "Entity",
                   lambda t: _repredicate(t, "HAS_INHERITANCE", o_label="InheritancePattern"),
                   "Object names an inheritance mode",
                   guard=lambda t: _has_any(t.object.surface, INHERITANCE_MARKERS)),
    CorrectionRule("6", "entity_treatment_invert", "Entity", "TREATED_WITH", "Disease",
                   lambda t: _invert(t, o_label="Treatment"), "Direction plus retype"),
    CorrectionRule("7", "measurement_to_monitored", "Measurement", "TREATED_WITH", "Disease",
                   lambda t: _invert(t, "MONITORED_WITH"), "Measurements are not treatments"),
    CorrectionRule("8", "onset_to_symptom_onset", "PatientGroup", "HAS_ONSET_AGE", "Symptom",
                   lambda t: _repredicate(t, "SYMPTOM_ONSET_AT"), "Refine temporal predicate"),
    CorrectionRule("9", "develops_to_loses_func", "PatientGroup", "DEVELOPS_COMPLICATION_AT",
                   "PhysiologicalFunction", lambda t: _repredicate(t, "LOSES_FUNCTION_AT"),
                   "Evidence describes a loss of function",
                   guard=lambda t: "loss" in fold(t.evidence_quote)),
    CorrectionRule("10", "retype_entity_assoc", "Entity", "ASSOCIATED_WITH", "Disease",
                   lambda t: _repredicate(t, "USED_FOR_DIAGNOSIS", s_label="Procedure"),
                   "Subject is a diagnostic procedure",
                   guard=lambda t: _has_any(t.subject.surface, DIAGNOSTIC_PROCEDURES)),
    CorrectionRule("11", "patgrp_proc_to_monitored", "PatientGroup", "TREATED_WITH", "Procedure",
                   lambda t: _repredicate(t, "MONITORED_WITH"), "Diagnostic procedure for patients",
                   guard=lambda t: not _therapeutic(t.object)),
    CorrectionRule("12", "proc_assoc_to_diagnosis", "Procedure", "ASSOCIATED_WITH", "Disease",
                   lambda t: _repredicate(t, "USED_FOR_DIAGNOSIS"), "Refine generic association"),
    CorrectionRule("13", "caused_by_protein_state", "Disease", "CAUSED_BY_MUTATION", "Entity",
                   _strip_deficiency, "Object is a protein deficiency state",
                   guard=lambda t: bool(re.search(r"\bdeficien(?:cy|t)\b", t.object.surface, re.I))),
    CorrectionRule("14", "retype_entity_to_gene", "Disease", "CAUSED_BY_MUTATION", "Entity",
                   lambda t: _repredicate(t, "CAUSED_BY_MUTATION", o_label="Gene"),
                   "Retype entity as gene", guard=lambda t: _gene_like(t.object)),
    CorrectionRule("15", "protein_assoc_to_target", "Protein", "ASSOCIATED_WITH", "Disease",
                   lambda t: _invert(t), "Invert receptor-disease direction"),
    CorrectionRule("16", "autoantibody_retype", "Disease", "CAUSED_BY_MUTATION", "Entity",
                   lambda t: _repredicate(t, "CAUSED_BY", o_label="Autoantibody"),
                   "Retype autoantibody", guard=lambda t: _autoantibody(t.object)),
    CorrectionRule("17", "measurement_to_diagnosis", "Measurement", "ASSOCIATED_WITH", "Disease",
                   lambda t: _repredicate(t, "USED_FOR_DIAGNOSIS"), "Antibody measurements"),
]}

DEFAULT_ORDER: tuple[str, ...] = (
    "16", "1", "2", "3", "3b", "4", "5", "6", "7", "8", "9", "10", "11", "12", "13", "14", "15", "17",
)


@dataclass
class RuleEngine:
    order: tuple[str, ...] = DEFAULT_ORDER
    rules: Mapping[str, CorrectionRule] = field(default_factory=lambda: RULES)

    def __post_init__(self):
        missing = set(self.order) - set(self.rules)
        if missing:
            raise ValueError(f"unknown rule ids {sorted(missing)}")

    def apply(self, t: Triplet) -> tuple[Triplet, list[str]]:
        fired = []
        for rid in self.order:
            rule = self.rules[rid]
            if rule.matches(t):
                t = rule.transform(t)
                fired.append(rid)
        return t, fired


_DEFAULT_ENGINE = RuleEngine()


def apply_correction_rules(t: Triplet, engine: RuleEngine | None = None) -> tuple[Triplet, list[str]]:
    """Single ordered pass; each rule transforms at most once."""
    return (engine or _DEFAULT_ENGINE).apply(t)

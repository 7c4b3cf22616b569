"""Disease-pair configuration and the retrieval predicate schema.

A pair configuration is a YAML document with the layout::

    disease_pair: dmd_bmd
    label: "Duchenne vs Becker Muscular Dystrophy"
    classification:
      diseases: [{short_name, full_name, cuis, text_patterns, ontology_id, mondo_id}, ...]
      shared: {cuis, text_patterns, parent}
    pubmed: {mesh_terms, ...}
    temporal_predicates: [...]
    relevance_keywords: [...]          # optional for the bundled pairs
    temporal_tables: {fuzzy: {phrase: [start, end]}, stage: {...}}
    synonyms: {surface form: CUI}
    extraction: {prompt_context, screening_keywords, few_shot_examples}

Unknown top-level keys are kept verbatim in ``extra`` so that a
load/serialize round trip is lossless.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised for an invalid pair configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class Predicate(str, enum.Enum):
    ASSOCIATED_WITH = "ASSOCIATED_WITH"
    MANIFESTS_AS = "MANIFESTS_AS"
    TREATED_WITH = "TREATED_WITH"
    RESPONDS_TO = "RESPONDS_TO"
    HAS_MEASUREMENT = "HAS_MEASUREMENT"
    HAS_ONSET_AGE = "HAS_ONSET_AGE"
    HAS_SEVERITY = "HAS_SEVERITY"
    HAS_PREVALENCE = "HAS_PREVALENCE"
    LACKS_FEATURE = "LACKS_FEATURE"
    HAS_DIAGNOSIS_AGE = "HAS_DIAGNOSIS_AGE"
    HAS_DURATION = "HAS_DURATION"
    GENERALIZED_AT = "GENERALIZED_AT"
    REMISSION_AT = "REMISSION_AT"
    PRECEDES = "PRECEDES"
    CRISIS_AT = "CRISIS_AT"
    DEVELOPS_COMPLICATION_AT = "DEVELOPS_COMPLICATION_AT"
    PRESERVES_FUNCTION = "PRESERVES_FUNCTION"
    HAS_SURVIVAL_TO = "HAS_SURVIVAL_TO"
    DIFFERENTIATES_FROM = "DIFFERENTIATES_FROM"
    REQUIRES_INTERVENTION_AT = "REQUIRES_INTERVENTION_AT"

    @property
    def is_temporal(self) -> bool:
        return self.value in TEMPORAL_PREDICATES

    @property
    def is_treatment(self) -> bool:
        return self.value in TREATMENT_PREDICATES

    @property
    def is_differential(self) -> bool:
        return self.value in DIFFERENTIAL_PREDICATES


ALL_PREDICATES: tuple[str, ...] = tuple(p.value for p in Predicate)

DIFFERENTIAL_PREDICATES = frozenset({
    "MANIFESTS_AS", "ASSOCIATED_WITH", "TREATED_WITH", "RESPONDS_TO",
    "LACKS_FEATURE", "DIFFERENTIATES_FROM", "HAS_PREVALENCE", "HAS_ONSET_AGE",
    "HAS_SEVERITY",
})

TEMPORAL_PREDICATES = frozenset({
    "HAS_ONSET_AGE", "HAS_DIAGNOSIS_AGE", "GENERALIZED_AT", "CRISIS_AT",
    "REMISSION_AT", "DEVELOPS_COMPLICATION_AT", "REQUIRES_INTERVENTION_AT",
    "HAS_SURVIVAL_TO", "HAS_DURATION", "PRECEDES",
})

TREATMENT_PREDICATES = frozenset({"TREATED_WITH", "RESPONDS_TO"})


# Per-pair relevance keywords used when a configuration does not carry its own.
DEFAULT_RELEVANCE_KEYWORDS: dict[str, tuple[str, ...]] = {
    "mg_lems": (
        "myasthenia", "lambert-eaton", "lems", "neuromuscular junction",
        "acetylcholine receptor", "achr", "musk", "thymoma", "thymectomy",
        "pyridostigmine", "complement", "eculizumab", "efgartigimod",
    ),
    "dmd_bmd": (
        "duchenne", "becker", "muscular dystrophy", "dystrophin", "dmd", "bmd",
        "dystrophinopathy", "exon skipping", "corticosteroid", "cardiomyopathy",
        "ambulation",
    ),
    "cidp_gbs": (
        "cidp", "guillain-barré", "guillain-barre", "gbs", "demyelinating",
        "polyneuropathy", "ivig", "plasmapheresis", "nerve conduction",
        "areflexia", "albumin-cytologic",
    ),
}


@dataclass(frozen=True)
class DiseaseSpec:
    short_name: str
    full_name: str
    cuis: tuple[str, ...]
    text_patterns: tuple[str, ...]
    ontology_id: str | None = None
    mondo_id: str | None = None


@dataclass(frozen=True)
class DiseasePairConfig:
    pair_id: str
    label: str
    diseases: tuple[DiseaseSpec, ...]
    shared_patterns: tuple[str, ...] = ()
    shared_cuis: tuple[str, ...] = ()
    parent: dict[str, Any] | None = None
    mesh_terms: tuple[str, ...] = ()
    pubmed: dict[str, Any] = field(default_factory=dict)
    temporal_predicates: tuple[str, ...] = ()
    relevance_keywords: tuple[str, ...] = ()
    fuzzy_temporal_table: dict[str, tuple[str, str]] = field(default_factory=dict)
    stage_temporal_table: dict[str, tuple[str, str]] = field(default_factory=dict)
    synonyms: dict[str, str] = field(default_factory=dict)
    extraction: dict[str, Any] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)
    # keywords came from the config document rather than the built-in table
    relevance_keywords_declared: bool = True

    def disease(self, short_name: str) -> DiseaseSpec:
        for d in self.diseases:
            if d.short_name.lower() == short_name.lower():
                return d
        raise KeyError(f"unknown disease {short_name!r} for pair {self.pair_id}")

    @property
    def short_names(self) -> list[str]:
        return [d.short_name for d in self.diseases]

    def __hash__(self) -> int:
        return hash((self.pair_id, self.diseases))


# --------------------------------------------------------------------------- loading

def _require(doc: dict, key: str, path: str) -> Any:
    if not isinstance(doc, dict) or key not in doc or doc[key] is None:
        raise ConfigError(f"{path}.{key}" if path else key, "required field missing")
    return doc[key]


def _str_list(value: Any, path: str) -> tuple[str, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        raise ConfigError(path, "expected a list")
    return tuple(str(v) for v in value)


def _interval_table(value: Any, path: str) -> dict[str, tuple[str, str]]:
    # imported lazily: temporal depends on this module
    from provkg.temporal import parse_duration

    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, "expected a mapping of phrase -> [start, end]")
    table: dict[str, tuple[str, str]] = {}
    for phrase, bounds in value.items():
        if not (isinstance(bounds, list) and len(bounds) == 2):
            raise ConfigError(f"{path}.{phrase}", "expected [start, end]")
        start, end = (str(b) for b in bounds)
        try:
            if parse_duration(start) > parse_duration(end):
                raise ConfigError(f"{path}.{phrase}", "end precedes start")
        except ValueError as exc:
            raise ConfigError(f"{path}.{phrase}", str(exc)) from None
        table[str(phrase).lower()] = (start, end)
    return table


_KNOWN_KEYS = {
    "disease_pair", "label", "classification", "pubmed", "temporal_predicates",
    "relevance_keywords", "temporal_tables", "synonyms", "extraction",
}


def config_from_dict(doc: Any) -> DiseasePairConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a mapping")
    pair_id = str(_require(doc, "disease_pair", "")).strip()
    if not pair_id:
        raise ConfigError("disease_pair", "must be non-empty")

    classification = _require(doc, "classification", "")
    raw_diseases = _require(classification, "diseases", "classification")
    if not isinstance(raw_diseases, list) or not raw_diseases:
        raise ConfigError("classification.diseases", "at least one disease is required")

    diseases = []
    for i, d in enumerate(raw_diseases):
        path = f"classification.diseases[{i}]"
        if not isinstance(d, dict):
            raise ConfigError(path, "expected a mapping")
        cuis = _str_list(_require(d, "cuis", path), f"{path}.cuis")
        patterns = _str_list(_require(d, "text_patterns", path), f"{path}.text_patterns")
        if not cuis:
            raise ConfigError(f"{path}.cuis", "at least one CUI is required")
        if not patterns:
            raise ConfigError(f"{path}.text_patterns", "at least one pattern is required")
        diseases.append(DiseaseSpec(
            short_name=str(_require(d, "short_name", path)),
            full_name=str(_require(d, "full_name", path)),
            cuis=cuis,
            text_patterns=patterns,
            ontology_id=d.get("ontology_id"),
            mondo_id=d.get("mondo_id"),
        ))

    shared = classification.get("shared") or {}
    pubmed = doc.get("pubmed") or {}

    temporal_predicates = _str_list(doc.get("temporal_predicates"), "temporal_predicates")
    for i, name in enumerate(temporal_predicates):
        if name not in ALL_PREDICATES:
            raise ConfigError(f"temporal_predicates[{i}]", f"unknown predicate {name!r}")

    declared = doc.get("relevance_keywords") is not None
    keywords = _str_list(doc.get("relevance_keywords"), "relevance_keywords")
    if not declared:
        keywords = DEFAULT_RELEVANCE_KEYWORDS.get(pair_id, ())
    if not keywords:
        raise ConfigError("relevance_keywords", "must be non-empty")

    tables = doc.get("temporal_tables")
    if tables is None:
        from provkg.temporal import DEFAULT_FUZZY_TABLE, DEFAULT_STAGE_TABLE
        fuzzy, stage = dict(DEFAULT_FUZZY_TABLE), dict(DEFAULT_STAGE_TABLE)
    else:
        fuzzy = _interval_table(tables.get("fuzzy"), "temporal_tables.fuzzy")
        stage = _interval_table(tables.get("stage"), "temporal_tables.stage")

    synonyms = doc.get("synonyms") or {}
    if not isinstance(synonyms, dict):
        raise ConfigError("synonyms", "expected a mapping of surface -> CUI")

    return DiseasePairConfig(
        pair_id=pair_id,
        label=str(doc.get("label", pair_id)),
        diseases=tuple(diseases),
        shared_patterns=_str_list(shared.get("text_patterns"), "classification.shared.text_patterns"),
        shared_cuis=_str_list(shared.get("cuis"), "classification.shared.cuis"),
        parent=shared.get("parent"),
        mesh_terms=_str_list(pubmed.get("mesh_terms"), "pubmed.mesh_terms"),
        pubmed=dict(pubmed),
        temporal_predicates=temporal_predicates,
        relevance_keywords=keywords,
        fuzzy_temporal_table=fuzzy,
        stage_temporal_table=stage,
        synonyms={str(k).lower(): str(v) for k, v in synonyms.items()},
        extraction=dict(doc.get("extraction") or {}),
        extra={k: v for k, v in doc.items() if k not in _KNOWN_KEYS},
        relevance_keywords_declared=declared,
    )


def load_config(text: str) -> DiseasePairConfig:
    """Parse a pair configuration document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<document>", f"parse failure: {exc}") from None
    return config_from_dict(doc)


def load_config_file(path: str | Path) -> DiseasePairConfig:
    return load_config(Path(path).read_text(encoding="utf-8"))


def bundled_config(pair_id: str) -> DiseasePairConfig:
    """Return one of the shipped pair configurations (mg_lems, dmd_bmd, cidp_gbs)."""
    res = resources.files("provkg") / "data" / f"{pair_id}.yaml"
    if not res.is_file():
        raise KeyError(f"no bundled configuration for {pair_id!r}")
    return load_config(res.read_text(encoding="utf-8"))


def resolve_config(pair: str) -> DiseasePairConfig:
    """``pair`` is either a bundled pair id or a path to a YAML file."""
    p = Path(pair)
    if p.suffix in (".yaml", ".yml") or p.exists():
        return load_config_file(p)
    return bundled_config(pair)


def config_to_dict(cfg: DiseasePairConfig) -> dict[str, Any]:
    shared: dict[str, Any] = {
        "cuis": list(cfg.shared_cuis),
        "text_patterns": list(cfg.shared_patterns),
    }
    if cfg.parent is not None:
        shared["parent"] = cfg.parent
    doc: dict[str, Any] = {
        "disease_pair": cfg.pair_id,
        "label": cfg.label,
        "classification": {
            "diseases": [
                {k: v for k, v in {
                    "short_name": d.short_name,
                    "full_name": d.full_name,
                    "cuis": list(d.cuis),
                    "text_patterns": list(d.text_patterns),
                    "ontology_id": d.ontology_id,
                    "mondo_id": d.mondo_id,
                }.items() if v is not None}
                for d in cfg.diseases
            ],
            "shared": shared,
        },
        "pubmed": cfg.pubmed,
        "temporal_predicates": list(cfg.temporal_predicates),
        "temporal_tables": {
            "fuzzy": {k: list(v) for k, v in cfg.fuzzy_temporal_table.items()},
            "stage": {k: list(v) for k, v in cfg.stage_temporal_table.items()},
        },
        "synonyms": dict(cfg.synonyms),
        "extraction": cfg.extraction,
    }
    if cfg.relevance_keywords_declared:
        doc["relevance_keywords"] = list(cfg.relevance_keywords)
    doc.update(cfg.extra)
    return doc


def serialize_config(cfg: DiseasePairConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, allow_unicode=True)


# --------------------------------------------------------------------------- classification

def _pattern_hit(pattern: str, text: str) -> bool:
    # word-bounded: bare substring matching turns "lems" into a hit on "problems"
    return re.search(r"(?<!\w)" + re.escape(pattern.lower()) + r"(?!\w)", text) is not None


def classify_disease_context(text: str, cfg: DiseasePairConfig) -> list[str]:
    """Disease short names whose patterns or CUIs occur in ``text``.

    A span that only matches the pair's shared patterns (e.g. "dystrophin")
    belongs to both diseases.
    """
    folded = text.lower()
    hits = []
    for d in cfg.diseases:
        if any(_pattern_hit(p, folded) for p in d.text_patterns) or any(
            c.lower() in folded for c in d.cuis
        ):
            hits.append(d.short_name)
    if hits:
        return hits
    if any(_pattern_hit(p, folded) for p in cfg.shared_patterns) or any(
        c.lower() in folded for c in cfg.shared_cuis
    ):
        return [d.short_name for d in cfg.diseases]
    return []

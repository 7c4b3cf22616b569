"""Prompt construction for the three arms, chunk retrieval and the privacy gate."""

from __future__ import annotations

import json
import logging
import re
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlparse

import numpy as np

from provkg.consensus import Edge
from provkg.extraction import ModelProvider

log = logging.getLogger(__name__)

ARMS = ("vanilla", "guideline_rag", "heg_tkg")
OUTPUT_TYPES = ("differential", "temporal_comparative", "temporal", "treatment")


@dataclass(frozen=True)
class ClinicalScenario:
    id: str
    disease_pair: str
    output_type: str
    scenario_text: str
    expected_key_features: tuple[str, ...]
    source_reference: str = ""

    def __post_init__(self):
        if self.output_type not in OUTPUT_TYPES:
            raise ValueError(f"{self.id}: unknown output_type {self.output_type!r}")
        if not self.expected_key_features:
            raise ValueError(f"{self.id}: expected_key_features is empty")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClinicalScenario":
        return cls(
            id=d["id"], disease_pair=d["disease_pair"], output_type=d["output_type"],
            scenario_text=d["scenario_text"],
            expected_key_features=tuple(d["expected_key_features"]),
            source_reference=d.get("source_reference", ""),
        )


def load_scenarios(path: str | Path) -> list[ClinicalScenario]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [ClinicalScenario.from_dict(d) for d in doc]


@dataclass(frozen=True)
class ManifestEntry:
    edge_id: str
    pmids: tuple[str, ...]
    tier: str


@dataclass
class ClinicalOutput:
    scenario_id: str
    arm: str
    text: str
    evidence_manifest: list[ManifestEntry] = field(default_factory=list)
    chunk_ids: list[int] = field(default_factory=list)
    provider: str = ""
    phi_compliant: bool = False
    params: dict = field(default_factory=dict)

    @property
    def manifest_pmids(self) -> set[str]:
        return {p for m in self.evidence_manifest for p in m.pmids}

    def sidecar(self) -> dict:
        return {
            "scenario_id": self.scenario_id, "arm": self.arm, "provider": self.provider,
            "phi_compliant": self.phi_compliant, "params": self.params,
            "evidence_manifest": [asdict(m) for m in self.evidence_manifest],
            "chunk_ids": self.chunk_ids,
        }

    def write(self, directory: str | Path) -> Path:
        d = Path(directory) / self.arm
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{self.scenario_id}.md").write_text(self.text, encoding="utf-8")
        (d / f"{self.scenario_id}.manifest.json").write_text(
            json.dumps(self.sidecar(), indent=2, sort_keys=True), encoding="utf-8")
        return d / f"{self.scenario_id}.md"

    @classmethod
    def read(cls, path: str | Path) -> "ClinicalOutput":
        path = Path(path)
        side = path.with_name(path.stem + ".manifest.json")
        meta = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
        return cls(
            scenario_id=meta.get("scenario_id", path.stem),
            arm=meta.get("arm", path.parent.name),
            text=path.read_text(encoding="utf-8"),
            evidence_manifest=[ManifestEntry(m["edge_id"], tuple(m["pmids"]), m["tier"])
                               for m in meta.get("evidence_manifest", [])],
            chunk_ids=meta.get("chunk_ids", []),
            provider=meta.get("provider", ""),
            phi_compliant=meta.get("phi_compliant", False),
            params=meta.get("params", {}),
        )


# --------------------------------------------------------------------------- evidence block

def format_evidence_block(edges: Sequence[Edge]) -> str:
    """Three lines per edge: triple, provenance metadata, quoted evidence."""
    blocks = []
    for e in edges:
        pmids = ", ".join(sorted(e.pmid_list)) or "n/a"
        meta = f"PMID: {pmids} | Tier: {e.quality_tier.value if e.quality_tier else 'UNTIERED'}"
        if e.is_temporal:
            meta += f" | Temporal: {e.temporal_value_display or 'unresolved'}"
        quote = e.evidence_sample.replace('"', "'")
        blocks.append(f"[{e.subject.surface}] ->{e.predicate}-> [{e.object.surface}]\n"
                      f"{meta}\nEvidence: \"{quote}\"")
    return "\n\n".join(blocks)


_BLOCK_RE = re.compile(
    r"^\[(?P<s>.+?)\] ->(?P<p>[A-Z_]+)-> \[(?P<o>.+?)\]\n"
    r"PMID: (?P<pmids>[^|\n]+) \| Tier: (?P<tier>\w+)(?: \| Temporal: (?P<t>[^\n]+))?\n"
    r"Evidence: \"(?P<q>.*)\"$",
    re.M,
)


def parse_evidence_block(text: str) -> list[dict]:
    return [m.groupdict() for m in _BLOCK_RE.finditer(text)]


# --------------------------------------------------------------------------- chunk retrieval

CHUNK_SIZE = 500
CHUNK_OVERLAP = 80


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    doc_id: str
    start: int
    end: int
    text: str


def chunk_spans(length: int, size: int = CHUNK_SIZE, overlap: int = CHUNK_OVERLAP) -> list[tuple[int, int]]:
    """Windows of ``size`` characters every ``size - overlap``; the short tail is kept."""
    if size <= overlap:
        raise ValueError("chunk size must exceed overlap")
    stride = size - overlap
    spans = []
    start = 0
    while start < length:
        end = min(start + size, length)
        spans.append((start, end))
        if end == length:
            break
        start += stride
    return spans


def chunk_corpus(docs: Sequence[tuple[str, str]], size: int = CHUNK_SIZE,
                 overlap: int = CHUNK_OVERLAP) -> list[Chunk]:
    chunks = []
    for doc_id, text in docs:
        for s, e in chunk_spans(len(text), size, overlap):
            chunks.append(Chunk(len(chunks), doc_id, s, e, text[s:e]))
    return chunks


class HashingEmbedder:
    """Character 3-gram feature hashing; deterministic across processes."""

    def __init__(self, dim: int = 4096, n: int = 3):
        self.dim = dim
        self.n = n

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            t = " ".join(text.lower().split())
            for i in range(max(len(t) - self.n + 1, 0)):
                out[row, zlib.crc32(t[i:i + self.n].encode("utf-8")) % self.dim] += 1.0
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return out / norms


class RagIndex:
    def __init__(self, docs: Sequence[tuple[str, str]], embedder=None,
                 size: int = CHUNK_SIZE, overlap: int = CHUNK_OVERLAP):
        if not docs or not any(t for _, t in docs):
            raise ValueError("empty corpus")
        self.embedder = embedder or HashingEmbedder()
        self.chunks = chunk_corpus(docs, size, overlap)
        self.matrix = self.embedder.embed([c.text for c in self.chunks])

    def __len__(self) -> int:
        return len(self.chunks)

    def retrieve(self, query: str, k: int = 10) -> list[Chunk]:
        q = self.embedder.embed([query])[0]
        sims = self.matrix @ q
        # round away float noise so equal scores tie-break on chunk id
        order = sorted(range(len(self.chunks)), key=lambda i: (-round(float(sims[i]), 12), i))
        return [self.chunks[i] for i in order[:k]]


def retrieve_rag_chunks(corpus: Sequence[tuple[str, str]] | RagIndex, query: str, k: int = 10,
                        embedder=None) -> list[Chunk]:
    index = corpus if isinstance(corpus, RagIndex) else RagIndex(corpus, embedder)
    return index.retrieve(query, k)


# --------------------------------------------------------------------------- prompts

HEG_DIFFERENTIAL = """\
You are a senior clinical neurologist writing an evidence-grounded differential
diagnosis for a colleague. You have access to a curated knowledge graph with
hierarchical evidence tiers.

Your response should be as DETAILED and COMPREHENSIVE as a clinical consultation
note -- not a brief summary. For each differentiating feature, provide the clinical
reasoning, not just the fact. Think like a neurologist explaining to a fellow.

EVIDENCE CITATION RULES:
- The knowledge graph evidence uses PMID-based citations like [PMID:36637960, GOLD].
  Preserve these exact citation tags when referencing evidence.
- GOLD = Tier 1 curated sources (GeneReviews, OMIM, clinical guidelines) -- highest reliability.
- SILVER = Cross-validated across multiple extraction models -- good confidence.
- BRONZE = Single study or single model -- use with appropriate caveats.
- You MAY -- and SHOULD -- supplement with your clinical expertise to explain WHY
  a feature differentiates, to add pathophysiological context, and to cover
  features that are clinically important but absent from the KG evidence. Clearly
  distinguish: "[PMID:..., GOLD]" for KG-backed claims vs "Clinically, ..." for
  your expert knowledge.
- When evidence conflicts are flagged, present BOTH sides and discuss the
  likely explanation.
- If the KG evidence is sparse for a feature category, state this explicitly and
  supplement with your clinical knowledge, clearly marked as such.

STRUCTURE your response as:
1. A structured comparison table covering: Clinical Features, Antibodies/Biomarkers,
   Autonomic Features, Reflexes/EMG, Treatment Approach, Temporal Course, Associated Conditions
2. For each feature, explain the pathophysiological basis for the difference
3. A clinical synthesis paragraph: what features in this specific patient point toward
   which diagnosis, what tests to order, and what red flags to watch for
4. An evidence quality note: summarize what is backed by guidelines vs single studies"""

HEG_TEMPORAL = """\
You are a senior clinical neurologist writing a disease progression comparison
for a colleague. You have access to temporal evidence from a curated knowledge
graph with specific time anchors derived from clinical guidelines and literature.

Your response should be DETAILED -- a clinical teaching case, not a bullet list.
For each time window, explain what is happening pathophysiologically, what the
clinician should monitor, and what interventions are indicated.

EVIDENCE CITATION RULES:
- Preserve the PMID-based citation tags from the evidence (e.g., [PMID:36637960, GOLD]).
- GOLD = curated guidelines, SILVER = cross-validated, BRONZE = single study.
- You MAY -- and SHOULD -- add clinical interpretation around the temporal data,
  explain what clinicians should do at each time window, and fill gaps where the
  KG evidence is sparse. Clearly mark KG-backed claims (with citations) vs your
  expert supplementation (with "Clinically, ...").
- When comparing two diseases, explicitly highlight where their temporal trajectories
  DIVERGE -- these are the clinically actionable differences for differential diagnosis.
- If a time window has no KG evidence, say so and provide expert guidance.

STRUCTURE your response as:
1. A quick-reference milestone comparison (side-by-side table or timeline)
2. Detailed time-window-by-time-window analysis with clinical implications
3. For each divergence point: explain why the difference matters clinically
4. A synthesis: key temporal red flags that distinguish these conditions
5. Note evidence gaps -- which time windows lack high-quality data"""

HEG_TREATMENT = """\
You are a senior clinical neurologist writing treatment recommendations for a
colleague. You have access to treatment evidence from a curated knowledge graph
with hierarchical quality tiers.

Your response should be as DETAILED as a treatment protocol -- dosing, monitoring,
expected timelines, and escalation logic. Think like a neurologist writing a
management plan.

EVIDENCE CITATION RULES:
- Preserve PMID-based citation tags from the evidence (e.g., [PMID:36637960, GOLD]).
- GOLD = guideline-level evidence, SILVER = cross-validated, BRONZE = single study.
- Present treatments ordered by evidence quality (GOLD-supported first).
- You MAY -- and SHOULD -- explain mechanisms of action, dosing protocols, monitoring
  parameters, and clinical rationale using your expertise. Treatments mentioned in the
  KG evidence must cite their source. You may also mention clinically important
  treatments NOT in the KG evidence if they are well-established, but clearly
  mark them as "Clinically established (not in current KG)" so the provenance
  distinction is transparent.

STRUCTURE your response as:
1. First-line treatment with evidence tier, dosing, and rationale
2. Second-line options with escalation criteria and timing
3. For each treatment: mechanism, expected response timeline, monitoring requirements
4. Emerging therapies / newer agents with evidence tier
5. Treatments with conflicting evidence: present both sides with tiers
6. Clinical synthesis: recommended treatment algorithm for this specific patient
7. Evidence quality summary: what is guideline-backed vs. emerging vs. expert opinion"""

VANILLA_DIFFERENTIAL = """\
You are a clinical neurology expert. Provide a detailed, evidence-based
differential diagnosis for the clinical scenario presented. Cover clinical
features, antibodies/biomarkers, treatment differences, temporal course,
and associated conditions."""

VANILLA_TEMPORAL = """\
You are a clinical neurology expert. Provide a detailed disease progression
timeline for the clinical scenario presented. Include onset patterns, key
milestones, treatment timing, and long-term prognosis."""

VANILLA_TREATMENT = """\
You are a clinical neurology expert. Provide comprehensive, evidence-based
treatment recommendations for the clinical scenario presented. Cover first-line
and second-line options, mechanisms, and expected outcomes."""

GUIDELINE_RAG = """\
You are a clinical neurology expert. You have been provided with reference
text from authoritative clinical sources (GeneReviews, OMIM, clinical
guidelines). Use this reference material to inform your answer.

Your response should be DETAILED and clinically comprehensive. Where possible,
indicate which source a claim comes from (e.g., "per GeneReviews..." or
"according to OMIM..."). You may supplement with your clinical knowledge but
prioritise the provided reference text.

Be as thorough as you would be when writing a clinical consultation report."""

SYSTEM_PROMPTS: dict[tuple[str, str], str] = {}
for _t in OUTPUT_TYPES:
    _kind = "temporal" if _t.startswith("temporal") else _t
    SYSTEM_PROMPTS[("heg_tkg", _t)] = {"differential": HEG_DIFFERENTIAL, "temporal": HEG_TEMPORAL,
                                       "treatment": HEG_TREATMENT}[_kind]
    SYSTEM_PROMPTS[("vanilla", _t)] = {"differential": VANILLA_DIFFERENTIAL, "temporal": VANILLA_TEMPORAL,
                                       "treatment": VANILLA_TREATMENT}[_kind]
    SYSTEM_PROMPTS[("guideline_rag", _t)] = GUIDELINE_RAG

TASK_LINES = {
    "differential": "Task: write the differential diagnosis for this patient.",
    "temporal_comparative": "Task: compare the disease trajectories of both conditions over time.",
    "temporal": "Task: describe the expected disease trajectory for this patient over time.",
    "treatment": "Task: write the treatment recommendations for this patient.",
}


@dataclass(frozen=True)
class Prompt:
    system: str
    user: str
    arm: str
    output_type: str
    evidence_segment: str = ""


def format_chunks(chunks: Sequence[Chunk]) -> str:
    return "\n\n".join(f"[{c.chunk_id}] ({c.doc_id}) {c.text.strip()}" for c in chunks)


def build_prompt(arm: str, scenario: ClinicalScenario,
                 evidence: Sequence[Edge] | Sequence[Chunk] | str | None = None) -> Prompt:
    """System prompt by (arm, output type); the user message varies only in its evidence segment."""
    key = (arm, scenario.output_type)
    if key not in SYSTEM_PROMPTS:
        raise KeyError(f"no prompt template for arm={arm!r}, output_type={scenario.output_type!r}")
    if arm == "vanilla":
        segment = ""
    else:
        if isinstance(evidence, str):
            body = evidence
        elif arm == "heg_tkg":
            body = format_evidence_block(list(evidence or []))
        else:
            body = format_chunks(list(evidence or []))
        title = "Knowledge Graph Evidence" if arm == "heg_tkg" else "Reference Text"
        segment = f"## {title}\n{body}\n\n"
    user = (f"## Clinical Scenario\n{scenario.scenario_text.strip()}\n\n"
            f"{segment}"
            f"{TASK_LINES[scenario.output_type]}\n")
    return Prompt(SYSTEM_PROMPTS[key], user, arm, scenario.output_type, segment)


# --------------------------------------------------------------------------- privacy

LOCAL_HOSTS = frozenset({"localhost", "127.0.0.1", "::1", "0.0.0.0"})


class PrivacyError(RuntimeError):
    def __init__(self, component: str, host: str):
        super().__init__(f"privacy gate: component '{component}' routes data to non-local host {host!r}")
        self.component = component
        self.host = host


@dataclass(frozen=True)
class PrivacyReport:
    ok: bool
    warnings: tuple[str, ...] = ()


def _host(endpoint: str | None) -> str | None:
    if not endpoint:
        return None
    parsed = urlparse(endpoint if "://" in endpoint else f"//{endpoint}")
    return parsed.hostname


def validate_privacy_config(cfg: Mapping[str, str | None], strict: bool = True,
                            allowlist: Iterable[str] = LOCAL_HOSTS) -> PrivacyReport:
    """Check every component endpoint against the local-host allowlist.

    ``cfg`` maps component names (``synthesis``, ``judge``, ...) to endpoint
    URLs; ``None`` means an in-process or fixture backend.
    """
    allowed = {h.lower() for h in allowlist}
    warnings = []
    for component in sorted(cfg):
        host = _host(cfg[component])
        if host is None or host.lower() in allowed:
            continue
        if strict:
            raise PrivacyError(component, host)
        msg = f"component '{component}' sends data to non-local host {host}"
        log.warning("privacy gate: %s", msg)
        warnings.append(msg)
    return PrivacyReport(ok=not warnings, warnings=tuple(warnings))


def is_local(provider: ModelProvider, allowlist: Iterable[str] = LOCAL_HOSTS) -> bool:
    host = _host(provider.endpoint)
    return host is None or host.lower() in {h.lower() for h in allowlist}


# --------------------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class SynthesisParams:
    temperature: float = 0.0
    max_tokens: int = 8000


def synthesize(prompt: Prompt, provider: ModelProvider, params: SynthesisParams | None = None, *,
               scenario_id: str = "", manifest: Sequence[ManifestEntry] = (),
               chunk_ids: Sequence[int] = ()) -> ClinicalOutput:
    params = params or SynthesisParams()
    text = provider.complete(prompt.system, prompt.user, call_type="synthesize",
                             temperature=params.temperature, max_tokens=params.max_tokens)
    return ClinicalOutput(
        scenario_id=scenario_id, arm=prompt.arm, text=text,
        evidence_manifest=list(manifest) if prompt.arm == "heg_tkg" else [],
        chunk_ids=list(chunk_ids) if prompt.arm == "guideline_rag" else [],
        provider=provider.id, phi_compliant=is_local(provider),
        params=asdict(params),
    )


def manifest_for(edges: Iterable[Edge]) -> list[ManifestEntry]:
    return [ManifestEntry(e.edge_id, tuple(sorted(e.pmid_list)),
                          e.quality_tier.value if e.quality_tier else "") for e in edges]

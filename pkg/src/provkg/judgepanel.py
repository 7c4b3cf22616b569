"""Blinded LLM-judge rounds (v1, citation-aware v2) and the claim-support NLI audit."""

from __future__ import annotations

import csv
import enum
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from provkg import statkit
from provkg.citeverify import PMID_RE
from provkg.evalmetrics import segment_claims
from provkg.extraction import ModelProvider, ProviderError, _parse_json_reply

log = logging.getLogger(__name__)

DIMENSIONS = ("D1_verifiability", "D2_actionability", "D3_temporal_precision",
              "D4_nonexpert_safety", "D5_clinical_completeness")
DIM_SHORT = ("D1", "D2", "D3", "D4", "D5")
ROUNDS = ("v1", "v2")


# --------------------------------------------------------------------------- blinding

@dataclass(frozen=True)
class JudgeCase:
    case_id: str
    scenario_id: str
    arm: str
    disease_pair: str
    scenario_text: str
    output_text: str


@dataclass(frozen=True)
class BlindedCase:
    blind_id: str
    scenario_text: str
    output_text: str


def blind_and_shuffle(cases: Sequence[JudgeCase], seed: int = statkit.DEFAULT_SEED
                      ) -> tuple[list[BlindedCase], dict[str, JudgeCase]]:
    """Permute cases with a seeded generator and replace ids with opaque tokens."""
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        dup = sorted(k for k, v in Counter(ids).items() if v > 1)
        raise ValueError(f"duplicate case ids: {dup}")
    rng = np.random.default_rng(seed)
    ordered = sorted(cases, key=lambda c: c.case_id)
    perm = rng.permutation(len(ordered))
    blinded, key = [], {}
    used: set[str] = set()
    for i in perm:
        token = rng.bytes(6).hex()
        while token in used:
            token = rng.bytes(6).hex()
        used.add(token)
        c = ordered[int(i)]
        blinded.append(BlindedCase(token, c.scenario_text, c.output_text))
        key[token] = c
    return blinded, key


# --------------------------------------------------------------------------- prompts

RUBRICS = {
    "D1": "Score 1-5 on whether clinical claims can be traced to specific published evidence. "
          "Does the output cite specific PMIDs, studies, or guidelines? Can a clinician verify "
          "each claim within 1 minute? Score 5 if most claims have verifiable citations; 1 if no citations.",
    "D2": "Score 1-5 on whether the output provides actionable clinical guidance. Does it specify "
          "concrete next steps, dosing, monitoring, or referral criteria? Score 5 if immediately "
          "actionable; 1 if only general information.",
    "D3": "Score 1-5 on whether the output provides specific time points for disease milestones, "
          "treatment response windows, and monitoring intervals. Score 5 if precise temporal "
          "anchoring; 1 if only vague temporal language.",
    "D4": "Score 1-5 on whether the output is safe for a non-specialist (e.g., GP) to act on. Are "
          "red flags clearly flagged? Are dangerous diagnostic pitfalls highlighted? Score 5 if safe "
          "for non-expert use; 1 if serious safety risks without specialist oversight.",
    "D5": "Score 1-5 on whether the output covers ALL clinically important features for this "
          "scenario: key differentiating features, relevant investigations, treatment options, "
          "prognosis, and red flags.",
}

JUDGE_HEADER = """\
You are an expert clinical evaluator (board-certified neurologist with 15+ years
of experience in neuromuscular diseases). You are evaluating an AI-generated
clinical output for a rare neuromuscular disease scenario.

## Clinical Scenario
{scenario_text}

## AI-Generated Output
{output_text}
"""

JUDGE_TASK = """\
## Evaluation Task
Rate this output on EACH of the following 5 dimensions using a 1-5 Likert scale:
"""

JUDGE_DIMENSIONS = """\
  D1 (Verifiability): {D1}
  D2 (Actionability): {D2}
  D3 (Temporal Precision): {D3}
  D4 (Non-Expert Safety): {D4}
  D5 (Clinical Completeness): {D5}

## Response Format
Respond ONLY with a JSON object (no markdown, no explanation):
{{
  "D1_verifiability": <1-5>,
  "D2_actionability": <1-5>,
  "D3_temporal_precision": <1-5>,
  "D4_nonexpert_safety": <1-5>,
  "D5_clinical_completeness": <1-5>,
  "brief_justification": "<2-3 sentences explaining your overall assessment>"
}}"""

D1_INSTRUCTION = """\
IMPORTANT: For D1 (Verifiability), use the Citation Audit Report above
as ground truth. If the audit shows 0 PMIDs or mostly wrong-field citations,
D1 should be LOW (1-2). If the audit shows most PMIDs are real and relevant,
D1 should be HIGH (4-5).
"""

REPROMPT_SUFFIX = ("\n\nYour previous reply could not be parsed. Respond ONLY with the JSON "
                   "object described above.")


def build_judge_prompt(round_: str, scenario_text: str, output_text: str,
                       audit_report: str | None = None) -> str:
    if round_ not in ROUNDS:
        raise ValueError(f"unknown round {round_!r}")
    if round_ == "v2" and audit_report is None:
        raise ValueError("v2 judging needs a citation audit report")
    head = JUDGE_HEADER.format(scenario_text=scenario_text, output_text=output_text)
    if round_ == "v2":
        head += "\n" + audit_report.rstrip("\n") + "\n"
    body = JUDGE_TASK
    if round_ == "v2":
        body += D1_INSTRUCTION
    return head + "\n" + body + JUDGE_DIMENSIONS.format(**RUBRICS)


# --------------------------------------------------------------------------- scores

class JudgeParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class LikertScores:
    case_id: str
    judge: str
    round: str
    d1: int
    d2: int
    d3: int
    d4: int
    d5: int
    brief_justification: str = ""
    scenario_id: str = ""
    arm: str = ""
    disease_pair: str = ""

    def __post_init__(self):
        for name, v in zip(DIM_SHORT, self.values):
            if not 1 <= v <= 5:
                raise ValueError(f"{name}={v} outside 1-5")
        if self.round not in ROUNDS:
            raise ValueError(f"unknown round {self.round!r}")

    @property
    def values(self) -> tuple[float, ...]:
        return (self.d1, self.d2, self.d3, self.d4, self.d5)

    def to_record(self) -> dict:
        rec = {"case_id": self.case_id, "judge": self.judge, "round": self.round,
               "scenario_id": self.scenario_id, "arm": self.arm, "disease_pair": self.disease_pair}
        rec.update(dict(zip(DIMENSIONS, self.values)))
        rec["brief_justification"] = self.brief_justification
        return rec


def parse_judge_reply(raw: str) -> dict:
    try:
        doc = _parse_json_reply(raw)
    except ProviderError as exc:
        raise JudgeParseError(str(exc), raw) from None
    if not isinstance(doc, dict):
        raise JudgeParseError("judge reply is not an object", raw)
    out = {}
    for dim in DIMENSIONS:
        if dim not in doc:
            raise JudgeParseError(f"missing {dim}", raw)
        v = doc[dim]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v) or not 1 <= v <= 5:
            raise JudgeParseError(f"{dim}={v!r} is not an integer in 1-5", raw)
        out[dim] = int(v)
    out["brief_justification"] = str(doc.get("brief_justification", ""))
    return out


def judge_case(case: JudgeCase | BlindedCase, round_: str, audit_report: str | None,
               judge: ModelProvider, *, meta: JudgeCase | None = None,
               max_tokens: int = 2000) -> LikertScores | None:
    """Score one case; one re-prompt on a malformed reply, then ``None`` (missing)."""
    prompt = build_judge_prompt(round_, case.scenario_text, case.output_text, audit_report)
    case_id = case.case_id if isinstance(case, JudgeCase) else case.blind_id
    meta = meta or (case if isinstance(case, JudgeCase) else None)
    for attempt in (prompt, prompt + REPROMPT_SUFFIX):
        raw = judge.complete("", attempt, call_type=f"judge_{round_}", temperature=0.0,
                             max_tokens=max_tokens)
        try:
            parsed = parse_judge_reply(raw)
        except JudgeParseError as exc:
            log.warning("judge %s on %s: %s", judge.id, case_id, exc)
            continue
        return LikertScores(
            case_id=case_id, judge=judge.id, round=round_,
            d1=parsed[DIMENSIONS[0]], d2=parsed[DIMENSIONS[1]], d3=parsed[DIMENSIONS[2]],
            d4=parsed[DIMENSIONS[3]], d5=parsed[DIMENSIONS[4]],
            brief_justification=parsed["brief_justification"],
            scenario_id=meta.scenario_id if meta else "", arm=meta.arm if meta else "",
            disease_pair=meta.disease_pair if meta else "",
        )
    return None


def _first(rec: Mapping, *names, default=None):
    for n in names:
        if n in rec and rec[n] not in (None, ""):
            return rec[n]
    return default


def score_from_record(rec: Mapping) -> LikertScores:
    vals = []
    for long, short in zip(DIMENSIONS, DIM_SHORT):
        v = _first(rec, long, short, short.lower())
        if v is None:
            raise ValueError(f"score record lacks {long}")
        vals.append(int(float(v)) if float(v).is_integer() else float(v))
    return LikertScores(
        case_id=str(_first(rec, "case_id", "blind_id", default="")),
        judge=str(_first(rec, "judge", "judge_model", default="")),
        round=str(_first(rec, "round", default="v1")),
        d1=vals[0], d2=vals[1], d3=vals[2], d4=vals[3], d5=vals[4],
        brief_justification=str(_first(rec, "brief_justification", default="")),
        scenario_id=str(_first(rec, "scenario_id", default="")),
        arm=str(_first(rec, "arm", default="")),
        disease_pair=str(_first(rec, "disease_pair", "pair", default="")),
    )


def _read_records(path: Path) -> list[dict]:
    if path.suffix == ".jsonl":
        with open(path, encoding="utf-8") as fh:
            return [json.loads(l) for l in fh if l.strip()]
    if path.suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(doc, dict):
            for k in ("records", "scores", "verdicts", "results"):
                if k in doc:
                    return doc[k]
        return doc
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def load_scores(path: str | Path) -> list[LikertScores]:
    return [score_from_record(r) for r in _read_records(Path(path))]


def write_scores(scores: Iterable[LikertScores], path: str | Path) -> None:
    """CSV for a ``.csv`` path, JSON lines otherwise; ``load_scores`` reads either."""
    rows = [s.to_record() for s in sorted(scores, key=lambda s: (s.case_id, s.judge, s.round))]
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if path.suffix == ".csv":
            fields = list(rows[0]) if rows else ["case_id", "judge", "round", *DIMENSIONS]
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
        else:
            for rec in rows:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- aggregation

@dataclass(frozen=True)
class CellStat:
    mean: float
    sd: float
    n: int


@dataclass(frozen=True)
class Comparison:
    disease_pair: str
    dimension: str
    arm: str
    baseline: str
    delta: float
    d: float
    p: float
    q: float


@dataclass
class PanelSummary:
    cells: dict[tuple[str, str, str], CellStat] = field(default_factory=dict)    # (pair, arm, dim)
    pooled: dict[tuple[str, str], CellStat] = field(default_factory=dict)        # (arm, dim)
    comparisons: list[Comparison] = field(default_factory=list)

    def cell(self, pair: str, arm: str, dim: str) -> CellStat:
        return self.cells[(pair, arm, dim)]


def _stat(values: Sequence[float]) -> CellStat:
    x = np.asarray(sorted(values), dtype=float)
    return CellStat(float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0, int(x.size))


def aggregate_panel(scores: Iterable[LikertScores], treatment: str = "heg_tkg",
                    baselines: Sequence[str] = ("vanilla", "guideline_rag")) -> PanelSummary:
    """Per-(pair, arm, dimension) mean and SD pooled over judges, plus treatment-vs-baseline deltas.

    q-values are BH-corrected within each dimension across every
    (pair, baseline) comparison.
    """
    by_cell: dict[tuple[str, str, str], list[float]] = defaultdict(list)
    by_pool: dict[tuple[str, str], list[float]] = defaultdict(list)
    for s in scores:
        for dim, v in zip(DIM_SHORT, s.values):
            by_cell[(s.disease_pair, s.arm, dim)].append(v)
            by_pool[(s.arm, dim)].append(v)
    out = PanelSummary(
        cells={k: _stat(v) for k, v in sorted(by_cell.items())},
        pooled={k: _stat(v) for k, v in sorted(by_pool.items())},
    )
    pairs = sorted({k[0] for k in by_cell})
    for dim in DIM_SHORT:
        raw = []
        for pair in pairs:
            t = by_cell.get((pair, treatment, dim))
            if not t:
                continue
            for base in baselines:
                b = by_cell.get((pair, base, dim))
                if not b:
                    continue
                delta = float(np.mean(t) - np.mean(b))
                try:
                    d = statkit.cohens_d_samples(b, t)
                except ValueError:  # n < 2, or zero pooled SD with unequal means
                    d = float("nan")
                p = statkit.mann_whitney_u(t, b).p_value
                raw.append((pair, base, delta, d, p))
        qs = statkit.bh_correct([r[4] for r in raw])
        for (pair, base, delta, d, p), q in zip(raw, qs):
            out.comparisons.append(Comparison(pair, dim, treatment, base, delta, d, p, q))
    return out


# --------------------------------------------------------------------------- claims and sampling

TIERS = ("GOLD", "SILVER", "BRONZE")
_TAG_RE = re.compile(r"\[PMID[^\]]*\]", re.I)
_TIER_RE = re.compile(r"\b(GOLD|SILVER|BRONZE)\b", re.I)


@dataclass(frozen=True)
class ClaimPair:
    claim: str
    pmid: str
    tier: str
    scenario_id: str = ""
    disease_pair: str = ""


def load_meta_patterns(path: str | Path | None = None) -> list[re.Pattern]:
    if path is None:
        text = resources.files("provkg.data").joinpath("meta_statement_patterns.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [re.compile(p, re.I) for p in json.loads(text)]


def extract_claims(outputs: Iterable[tuple[str, str, str]],
                   meta_patterns: Sequence[re.Pattern] | None = None) -> tuple[list[ClaimPair], int]:
    """``outputs`` yields (scenario_id, disease_pair, text).

    Returns the (claim, PMID) pairs, one per cited PMID per claim, and the
    number of meta-statements filtered out.
    """
    patterns = load_meta_patterns() if meta_patterns is None else meta_patterns
    pairs: list[ClaimPair] = []
    filtered = 0
    for scenario_id, disease_pair, text in outputs:
        for sent in segment_claims(text):
            tags = _TAG_RE.findall(sent)
            if not tags:
                continue
            if any(p.search(sent) for p in patterns):
                filtered += 1
                continue
            claim = " ".join(_TAG_RE.sub(" ", sent).split())
            seen = set()
            for tag in tags:
                tier_m = _TIER_RE.search(tag)
                tier = tier_m.group(1).upper() if tier_m else "UNTIERED"
                for pmid in [m.group(1) for m in PMID_RE.finditer(tag)] + re.findall(r"(?<=,)\s*(\d{6,9})\b", tag):
                    pmid = pmid.strip()
                    if pmid in seen:
                        continue
                    seen.add(pmid)
                    pairs.append(ClaimPair(claim, pmid, tier, scenario_id, disease_pair))
    return pairs, filtered


class SampleShortfall(ValueError):
    pass


def _largest_remainder(total: int, weights: Mapping[tuple, float], limits: Mapping[tuple, int]) -> dict:
    """Split ``total`` proportionally to ``weights`` without exceeding ``limits``."""
    alloc = {k: 0 for k in weights}
    remaining = total
    while remaining > 0:
        open_ = {k: w for k, w in weights.items() if limits[k] - alloc[k] > 0 and w > 0}
        if not open_:
            break
        wsum = sum(open_.values())
        raw = {k: remaining * w / wsum for k, w in open_.items()}
        give = {k: min(int(v), limits[k] - alloc[k]) for k, v in raw.items()}
        left = remaining - sum(give.values())
        for k in sorted(open_, key=lambda k: (-(raw[k] - int(raw[k])), k)):
            if left <= 0:
                break
            if give[k] < limits[k] - alloc[k]:
                give[k] += 1
                left -= 1
        if sum(give.values()) == 0:
            break
        for k, g in give.items():
            alloc[k] += g
        remaining -= sum(give.values())
    return alloc


def stratified_sample(pairs: Sequence[ClaimPair], n: int = 200, seed: int = statkit.DEFAULT_SEED,
                      floor: int = 12, cap: int = 5) -> list[ClaimPair]:
    """Sample across (disease pair × tier) cells with a per-cell floor and a per-PMID cap.

    Every non-empty cell first receives ``min(floor, capacity)`` rows; the
    remainder is split in proportion to each cell's leftover capacity.
    """
    cells: dict[tuple[str, str], list[ClaimPair]] = defaultdict(list)
    for p in sorted(set(pairs), key=lambda p: (p.disease_pair, p.tier, p.scenario_id, p.pmid, p.claim)):
        cells[(p.disease_pair, p.tier)].append(p)
    rng = np.random.default_rng(seed)
    shuffled = {k: [rows[i] for i in rng.permutation(len(rows))] for k, rows in sorted(cells.items())}

    pmid_count: Counter = Counter()
    taken: dict[tuple, list[ClaimPair]] = {k: [] for k in shuffled}
    cursor = {k: 0 for k in shuffled}

    def eligible(k) -> int:
        return sum(1 for r in shuffled[k][cursor[k]:] if pmid_count[r.pmid] < cap)

    def draw(k, quota: int) -> None:
        rows = shuffled[k]
        while quota > 0 and cursor[k] < len(rows):
            r = rows[cursor[k]]
            cursor[k] += 1
            if pmid_count[r.pmid] < cap:
                taken[k].append(r)
                pmid_count[r.pmid] += 1
                quota -= 1

    for k in shuffled:
        draw(k, min(floor, eligible(k), n - sum(len(v) for v in taken.values())))
    while (need := n - sum(len(v) for v in taken.values())) > 0:
        caps = {k: eligible(k) for k in shuffled}
        if sum(caps.values()) == 0:
            raise SampleShortfall(f"only {n - need} of {n} rows available under cap={cap}")
        alloc = _largest_remainder(need, {k: float(c) for k, c in caps.items()}, caps)
        for k in shuffled:
            draw(k, alloc[k])
        if n - sum(len(v) for v in taken.values()) == need:
            raise SampleShortfall(f"only {n - need} of {n} rows available under cap={cap}")
    return [r for k in shuffled for r in taken[k]]


# --------------------------------------------------------------------------- NLI

class NliLabel(str, enum.Enum):
    ENTAILS = "ENTAILS"
    NEUTRAL = "NEUTRAL"
    CONTRADICTS = "CONTRADICTS"


@dataclass(frozen=True)
class NliVerdict:
    claim: str
    pmid: str
    label: NliLabel
    confidence: float = 1.0
    tier: str = ""
    disease_pair: str = ""

    def to_record(self) -> dict:
        d = asdict(self)
        d["label"] = self.label.value
        return d


NLI_SYSTEM = """\
You are a biomedical natural-language-inference judge. Given a clinical claim and
the PubMed title and abstract of the paper cited for it, decide whether the
abstract supports the claim.

Labels:
- ENTAILS: the abstract directly states, demonstrates, or implies the claim.
- NEUTRAL: the abstract is on-topic but does not directly assert the specific claim.
- CONTRADICTS: the abstract refutes the claim.

Abstracts of review or guideline papers usually summarise how the paper is
organised rather than reporting specific clinical findings. If the claim is
simply absent from such an abstract, answer NEUTRAL, not CONTRADICTS.

Respond ONLY with a JSON object: {"label": "ENTAILS|NEUTRAL|CONTRADICTS", "confidence": <0-1>}"""


def nli_prompt(claim: str, pmid: str, title: str, abstract: str) -> tuple[str, str]:
    user = (f"Claim: {claim}\n\nCited PMID: {pmid}\nTitle: {title}\n\nAbstract:\n{abstract}\n")
    return NLI_SYSTEM, user


def nli_judge(claim: str, pmid: str, title: str, abstract: str, provider: ModelProvider,
              tier: str = "", disease_pair: str = "") -> NliVerdict | None:
    system, user = nli_prompt(claim, pmid, title, abstract)
    raw = provider.complete(system, user, call_type="nli", temperature=0.0, max_tokens=200)
    try:
        doc = _parse_json_reply(raw)
        label = NliLabel(str(doc["label"]).strip().upper())
        conf = float(doc.get("confidence", 1.0))
    except (ProviderError, KeyError, TypeError, ValueError, AttributeError) as exc:
        log.warning("nli reply for %s unparseable: %s", pmid, exc)
        return None
    return NliVerdict(claim, pmid, label, min(max(conf, 0.0), 1.0), tier, disease_pair)


def verdict_from_record(rec: Mapping) -> NliVerdict:
    label = str(_first(rec, "label", "nli_label", "verdict")).strip().upper()
    return NliVerdict(
        claim=str(_first(rec, "claim", "claim_text", default="")),
        pmid=str(_first(rec, "pmid", "cited_pmid", default="")),
        label=NliLabel(label),
        confidence=float(_first(rec, "confidence", default=1.0)),
        tier=str(_first(rec, "tier", "evidence_tier", "quality_tier", default="")).upper(),
        disease_pair=str(_first(rec, "disease_pair", "pair", default="")),
    )


def load_verdicts(path: str | Path) -> list[NliVerdict]:
    return [verdict_from_record(r) for r in _read_records(Path(path))]


@dataclass(frozen=True)
class NliSummary:
    n: int
    counts: dict[str, int]
    rates: dict[str, float]
    cis: dict[str, tuple[float, float]]
    non_contradiction: float
    non_contradiction_ci: tuple[float, float]
    by_tier: dict[str, dict[str, int]]


def aggregate_nli(verdicts: Sequence[NliVerdict], resamples: int = 10_000,
                  seed: int = statkit.DEFAULT_SEED) -> NliSummary:
    if not verdicts:
        raise ValueError("no verdicts")
    # canonical order keeps the bootstrap independent of input order
    labels = sorted(v.label.value for v in verdicts)
    n = len(labels)
    counts = {l.value: labels.count(l.value) for l in NliLabel}
    rates = {k: c / n for k, c in counts.items()}
    cis = {}
    for l in (NliLabel.ENTAILS, NliLabel.CONTRADICTS):
        ind = [1.0 if x == l.value else 0.0 for x in labels]
        cis[l.value] = statkit.bootstrap_ci(ind, resamples=resamples, seed=seed)
    nc = [0.0 if x == NliLabel.CONTRADICTS.value else 1.0 for x in labels]
    by_tier: dict[str, dict[str, int]] = {}
    for v in verdicts:
        row = by_tier.setdefault(v.tier or "UNTIERED", {"n": 0, **{l.value: 0 for l in NliLabel}})
        row["n"] += 1
        row[v.label.value] += 1
    return NliSummary(n, counts, rates, cis, sum(nc) / n,
                      statkit.bootstrap_ci(nc, resamples=resamples, seed=seed),
                      dict(sorted(by_tier.items(), key=lambda kv: (_tier_order(kv[0]), kv[0]))))


def _tier_order(tier: str) -> int:
    return TIERS.index(tier) if tier in TIERS else len(TIERS)

"""Relevance screening and triplet extraction behind a model-provider contract.

Providers expose one primitive, ``complete(system, user)``, plus
``screen`` and ``extract`` built on top of it. ``FixtureProvider`` replays
recorded responses so the whole pipeline runs offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence
from urllib.parse import urlparse

import requests

from provkg.pairconfig import ALL_PREDICATES

if TYPE_CHECKING:
    from provkg.pairconfig import DiseasePairConfig

log = logging.getLogger(__name__)

SCREEN_THRESHOLD = 0.85

# Predicates named by the correction rules; together with the 20 retrieval
# predicates they form the schema. Anything else passes through flagged.
CORRECTION_PREDICATES = frozenset({
    "CAUSED_BY_MUTATION", "CAUSED_BY", "MONITORED_WITH", "OCCURS_IN",
    "HAS_INHERITANCE", "SYMPTOM_ONSET_AT", "LOSES_FUNCTION_AT", "USED_FOR_DIAGNOSIS",
})
SCHEMA_PREDICATES = frozenset(ALL_PREDICATES) | CORRECTION_PREDICATES


class ProviderError(RuntimeError):
    pass


class ProviderTransportError(ProviderError):
    """Network or service failure. Retriable; never a content verdict."""


class ProviderResponseError(ProviderError):
    """The provider answered but the payload could not be parsed."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class FixtureMissing(ProviderTransportError):
    pass


_PMID_RE = re.compile(r"^\d{6,9}$")


@dataclass(frozen=True)
class Abstract:
    pmid: str
    title: str
    text: str
    mesh_terms: tuple[str, ...] = ()
    year: int | None = None

    def __post_init__(self):
        if not _PMID_RE.match(self.pmid):
            raise ValueError(f"pmid must be 6-9 digits, got {self.pmid!r}")
        if not self.text.strip():
            raise ValueError(f"abstract {self.pmid} has empty text")

    @classmethod
    def from_dict(cls, d: dict) -> "Abstract":
        return cls(
            pmid=str(d["pmid"]),
            title=d.get("title", ""),
            text=d.get("text") or d.get("abstract", ""),
            mesh_terms=tuple(d.get("mesh_terms") or d.get("mesh") or ()),
            year=d.get("year"),
        )


def load_corpus(path: str | Path) -> list[Abstract]:
    """Read a one-abstract-per-line JSONL corpus."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Abstract.from_dict(json.loads(line)))
    return out


@dataclass(frozen=True)
class RawTriplet:
    subject: str
    subject_type: str
    predicate: str
    object: str
    object_type: str
    evidence_quote: str
    source_model: str = ""
    pmid: str = ""
    temporal_phrase: str | None = None
    out_of_schema: bool = False
    confidence: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScreeningDecision:
    pmid: str
    passed: bool
    extract: bool
    confidence: float
    provider: str


# --------------------------------------------------------------------------- providers

def _parse_json_reply(raw: str) -> object:
    text = raw.strip()
    fence = re.match(r"^```(?:json)?\s*(.*?)\s*```$", text, re.S)
    if fence:
        text = fence.group(1)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        m = re.search(r"\{.*\}", text, re.S)
        if m:
            try:
                return json.loads(m.group(0))
            except json.JSONDecodeError:
                pass
    raise ProviderResponseError("reply is not JSON", raw)


def screening_prompt(a: Abstract, cfg: "DiseasePairConfig") -> tuple[str, str]:
    ctx = cfg.extraction.get("prompt_context", "")
    keywords = cfg.extraction.get("screening_keywords") or list(cfg.relevance_keywords)
    system = (
        "You screen biomedical abstracts for extractable, disease-specific clinical content. "
        'Reply with JSON: {"extract": true|false, "confidence": <0-1>}.'
    )
    user = (
        f"Disease pair: {cfg.label}\n{ctx}\n"
        f"Include if the abstract reports findings about: {', '.join(map(str, keywords))}\n\n"
        f"PMID: {a.pmid}\nTitle: {a.title}\nAbstract: {a.text}"
    )
    return system, user


def extraction_prompt(a: Abstract, cfg: "DiseasePairConfig") -> tuple[str, str]:
    system = (
        "Extract subject-predicate-object triplets from the abstract. Every triplet must carry "
        "an evidence_quote copied verbatim from the abstract. Reply with JSON: "
        '{"triplets": [{"subject", "subject_type", "predicate", "object", "object_type", '
        '"evidence_quote", "temporal_phrase"}]}.\n'
        f"Allowed predicates: {', '.join(sorted(SCHEMA_PREDICATES))}"
    )
    shots = cfg.extraction.get("few_shot_examples") or []
    user = (
        f"{cfg.extraction.get('prompt_context', '')}\n"
        + "".join(f"Example: {json.dumps(s) if not isinstance(s, str) else s}\n" for s in shots)
        + f"\nPMID: {a.pmid}\nTitle: {a.title}\nAbstract: {a.text}"
    )
    return system, user


def parse_screen_reply(raw: str) -> tuple[bool, float]:
    doc = _parse_json_reply(raw)
    if not isinstance(doc, dict) or "extract" not in doc:
        raise ProviderResponseError("screen reply lacks 'extract'", raw)
    try:
        conf = float(doc.get("confidence", 0.0))
    except (TypeError, ValueError):
        raise ProviderResponseError("confidence is not a number", raw) from None
    return bool(doc["extract"]), conf


def parse_extract_reply(raw: str) -> list[dict]:
    doc = _parse_json_reply(raw)
    items = doc.get("triplets") if isinstance(doc, dict) else doc
    if not isinstance(items, list):
        raise ProviderResponseError("extract reply lacks a triplet list", raw)
    return [t for t in items if isinstance(t, dict)]


class ModelProvider:
    """Base provider. Subclasses implement :meth:`complete`."""

    id: str = "provider"
    endpoint: str | None = None
    # set True when the backend cannot take concurrent calls
    serial: bool = False

    @property
    def host(self) -> str | None:
        return urlparse(self.endpoint).hostname if self.endpoint else None

    def complete(self, system: str, user: str, *, call_type: str = "complete",
                 key: str | None = None, temperature: float = 0.0,
                 max_tokens: int = 8000) -> str:
        raise NotImplementedError

    def screen(self, a: Abstract, cfg: "DiseasePairConfig") -> tuple[bool, float]:
        system, user = screening_prompt(a, cfg)
        return parse_screen_reply(self.complete(system, user, call_type="screen", key=a.pmid))

    def extract(self, a: Abstract, cfg: "DiseasePairConfig") -> list[RawTriplet]:
        system, user = extraction_prompt(a, cfg)
        raw = self.complete(system, user, call_type="extract", key=a.pmid)
        out = []
        for t in parse_extract_reply(raw):
            out.append(RawTriplet(
                subject=str(t.get("subject", "")),
                subject_type=str(t.get("subject_type", "Entity")),
                predicate=str(t.get("predicate", "")).strip().upper(),
                object=str(t.get("object", "")),
                object_type=str(t.get("object_type", "Entity")),
                evidence_quote=str(t.get("evidence_quote", "")),
                temporal_phrase=t.get("temporal_phrase") or None,
                confidence=float(t.get("confidence", 1.0)),
            ))
        return out


def prompt_key(system: str, user: str) -> str:
    return hashlib.sha256((system + "\x00" + user).encode("utf-8")).hexdigest()[:16]


class HttpChatProvider(ModelProvider):
    """OpenAI-compatible ``/chat/completions`` endpoint (cloud APIs, Ollama, vLLM)."""

    def __init__(self, provider_id: str, endpoint: str, model: str,
                 api_key: str | None = None, timeout: float = 120.0,
                 session: requests.Session | None = None):
        self.id = provider_id
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()

    @classmethod
    def from_env(cls, provider_id: str, prefix: str) -> "HttpChatProvider":
        """Read ``{prefix}_ENDPOINT``, ``{prefix}_MODEL`` and ``{prefix}_API_KEY``."""
        endpoint = os.environ.get(f"{prefix}_ENDPOINT")
        model = os.environ.get(f"{prefix}_MODEL")
        if not endpoint or not model:
            raise ProviderError(f"{prefix}_ENDPOINT and {prefix}_MODEL must be set")
        return cls(provider_id, endpoint, model, os.environ.get(f"{prefix}_API_KEY"))

    def complete(self, system, user, *, call_type="complete", key=None,
                 temperature=0.0, max_tokens=8000):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "messages": [{"role": "system", "content": system},
                         {"role": "user", "content": user}],
        }
        try:
            r = self.session.post(f"{self.endpoint}/chat/completions", json=body,
                                  headers=headers, timeout=self.timeout)
            r.raise_for_status()
        except requests.RequestException as exc:
            raise ProviderTransportError(f"{self.id}: {exc}") from exc
        try:
            return r.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError):
            raise ProviderResponseError(f"{self.id}: unexpected payload", r.text) from None


class FixtureProvider(ModelProvider):
    """Replays recorded responses keyed by (provider, key, call_type).

    Records are JSON lines ``{"provider", "key", "call_type", "response"}``;
    ``response`` is the raw reply text and is returned unchanged.
    """

    def __init__(self, provider_id: str, records: Iterable[dict] = ()):
        self.id = provider_id
        self.endpoint = None
        self._table: dict[tuple[str, str], str] = {}
        for rec in records:
            if rec.get("provider", provider_id) == provider_id:
                self._table[(str(rec["key"]), rec["call_type"])] = rec["response"]

    @classmethod
    def load(cls, provider_id: str, path: str | Path) -> "FixtureProvider":
        with open(path, encoding="utf-8") as fh:
            return cls(provider_id, (json.loads(l) for l in fh if l.strip()))

    def add(self, key: str, call_type: str, response: str) -> None:
        self._table[(key, call_type)] = response

    def complete(self, system, user, *, call_type="complete", key=None,
                 temperature=0.0, max_tokens=8000):
        k = key if key is not None else prompt_key(system, user)
        try:
            return self._table[(k, call_type)]
        except KeyError:
            raise FixtureMissing(f"{self.id}: no recorded {call_type} for {k}") from None


class RecordingProvider(ModelProvider):
    """Wraps a live provider and appends every reply to a fixture file."""

    def __init__(self, inner: ModelProvider, path: str | Path):
        self.inner = inner
        self.id = inner.id
        self.endpoint = inner.endpoint
        self.path = Path(path)
        self._lock = threading.Lock()

    def complete(self, system, user, *, call_type="complete", key=None,
                 temperature=0.0, max_tokens=8000):
        reply = self.inner.complete(system, user, call_type=call_type, key=key,
                                    temperature=temperature, max_tokens=max_tokens)
        rec = {"provider": self.id, "key": key if key is not None else prompt_key(system, user),
               "call_type": call_type, "response": reply}
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return reply


# --------------------------------------------------------------------------- operations

def screen_relevance(a: Abstract, cfg: "DiseasePairConfig",
                     p: ModelProvider | Sequence[ModelProvider]) -> ScreeningDecision:
    """Pass iff the provider says extract and reports confidence >= 0.85.

    Given several providers, the first one that answers decides unless the
    pair config sets ``extraction.screening_mode: majority``.
    """
    providers = [p] if isinstance(p, ModelProvider) else list(p)
    if not providers:
        raise ValueError("at least one provider is required")
    mode = cfg.extraction.get("screening_mode", "first")
    votes: list[ScreeningDecision] = []
    last_exc: Exception | None = None
    for prov in providers:
        try:
            extract, conf = prov.screen(a, cfg)
        except ProviderTransportError as exc:
            last_exc = exc
            log.warning("screen transport failure on %s via %s: %s", a.pmid, prov.id, exc)
            continue
        d = ScreeningDecision(a.pmid, bool(extract and conf >= SCREEN_THRESHOLD),
                              bool(extract), float(conf), prov.id)
        log.info("screen %s via %s: extract=%s confidence=%.2f -> %s",
                 a.pmid, prov.id, extract, conf, "pass" if d.passed else "reject")
        if mode != "majority":
            return d
        votes.append(d)
    if not votes:
        raise ProviderTransportError(f"no provider could screen {a.pmid}") from last_exc
    passed = sum(v.passed for v in votes) * 2 > len(votes)
    conf = sum(v.confidence for v in votes) / len(votes)
    return ScreeningDecision(a.pmid, passed, passed, conf, "+".join(v.provider for v in votes))


_TOKEN_RE = re.compile(r"\w+(?:['’-]\w+)*")


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(" ".join(text.split()).casefold())


def validate_evidence_quote(t: RawTriplet | str, a: Abstract | str) -> bool:
    """True iff the quote shares a contiguous run of at least three tokens with the abstract."""
    quote = t.evidence_quote if isinstance(t, RawTriplet) else t
    text = a.text if isinstance(a, Abstract) else a
    q, src = _tokens(quote), _tokens(text)
    if len(q) < 3 or len(src) < 3:
        return False
    grams = {tuple(src[i:i + 3]) for i in range(len(src) - 2)}
    return any(tuple(q[i:i + 3]) in grams for i in range(len(q) - 2))


@dataclass
class ExtractionResult:
    triplets: list[RawTriplet] = field(default_factory=list)
    dropped: list[RawTriplet] = field(default_factory=list)
    failed_providers: list[str] = field(default_factory=list)

    @property
    def flagged(self) -> int:
        return sum(t.out_of_schema for t in self.triplets)

    def __iter__(self) -> Iterator[RawTriplet]:
        return iter(self.triplets)

    def __len__(self) -> int:
        return len(self.triplets)

    def __getitem__(self, i):
        return self.triplets[i]


def extract_triplets(a: Abstract, cfg: "DiseasePairConfig",
                     providers: Sequence[ModelProvider]) -> ExtractionResult:
    """Union of every provider's triplets, stamped with model and PMID."""
    if not providers:
        raise ValueError("at least one provider is required")
    res = ExtractionResult()
    errors = []
    for prov in providers:
        try:
            raw = prov.extract(a, cfg)
        except ProviderTransportError as exc:
            log.warning("extraction via %s failed for %s: %s", prov.id, a.pmid, exc)
            res.failed_providers.append(prov.id)
            errors.append(exc)
            continue
        for t in raw:
            stamped = RawTriplet(
                subject=t.subject, subject_type=t.subject_type,
                predicate=t.predicate, object=t.object, object_type=t.object_type,
                evidence_quote=t.evidence_quote, source_model=prov.id, pmid=a.pmid,
                temporal_phrase=t.temporal_phrase,
                out_of_schema=t.predicate not in SCHEMA_PREDICATES,
                confidence=t.confidence,
            )
            if validate_evidence_quote(stamped, a):
                res.triplets.append(stamped)
            else:
                res.dropped.append(stamped)
    if len(errors) == len(providers):
        raise ProviderTransportError(f"all providers failed for {a.pmid}") from errors[-1]
    return res

"""Deterministic stand-in models for offline runs and tests.

None of these imitate a real model's quality. They exist so that every
stage downstream of a provider call can run without network access.
"""

from __future__ import annotations

import json
import re

from provkg.extraction import ModelProvider, _tokens
from provkg.synthesis import parse_evidence_block

_CHUNK_RE = re.compile(r"^\[(\d+)\] \(([^)]*)\) (.+)$", re.M)
_SCENARIO_RE = re.compile(r"## Clinical Scenario\n(.+?)\n\n", re.S)


class EchoSynthesisProvider(ModelProvider):
    """Writes one sentence per evidence item it was given.

    Graph evidence is restated with its citation tag, reference chunks are
    paraphrased by their first sentence, and with no evidence a fixed
    generic answer is returned.
    """

    def __init__(self, provider_id: str = "echo-synth"):
        self.id = provider_id
        self.endpoint = None

    def complete(self, system, user, *, call_type="complete", key=None,
                 temperature=0.0, max_tokens=8000):
        blocks = parse_evidence_block(user)
        m = _SCENARIO_RE.search(user)
        scenario = m.group(1).strip() if m else ""
        lines = ["# Assessment", ""]
        if blocks:
            lines.append("| Feature | Evidence |")
            lines.append("|---|---|")
            for b in blocks:
                pred = b["p"].lower().replace("_", " ")
                tag = ""
                if b["pmids"].strip() != "n/a":
                    tag = " " + " ".join(f"[PMID:{p.strip()}, {b['tier']}]" for p in b["pmids"].split(","))
                when = f" at {b['t']}" if b.get("t") and b["t"] != "unresolved" else ""
                quote = f", reported as \"{b['q']}\"" if b.get("q") else ""
                lines.append(f"- {b['s']} {pred} {b['o']}{when}{quote}{tag}.")
            lines.append("")
            lines.append("Clinically, these findings should be interpreted together with the examination.")
        else:
            chunks = _CHUNK_RE.findall(user)
            if chunks:
                for _, doc, text in chunks:
                    first = re.split(r"(?<=[.;])\s", text.strip())[0]
                    lines.append(f"- Per the reference text ({doc}), {first.rstrip('.')}.")
            else:
                lines.append("The presentation warrants a structured neuromuscular work-up "
                             "guided by the clinical history and examination findings.")
        if scenario:
            lines += ["", f"Case summary considered: {scenario.splitlines()[0][:200]}"]
        return "\n".join(lines) + "\n"


_AUDIT_ZERO = "contains **0 PubMed identifiers"
_AUDIT_COUNTS = re.compile(r"cites \*\*(\d+) unique PMIDs\*\*.*?\n- \*\*(\d+)\*\*", re.S)


class RubricJudge(ModelProvider):
    """Judge stand-in that scores D1 from citations and leaves D2-D5 at 3.

    With an audit report present it follows the audit: no PMIDs gives 1,
    a mostly relevant audit gives 5. Without one it counts inline tags.
    """

    def __init__(self, provider_id: str = "rubric-judge"):
        self.id = provider_id
        self.endpoint = None

    def complete(self, system, user, *, call_type="complete", key=None,
                 temperature=0.0, max_tokens=2000):
        if _AUDIT_ZERO in user:
            d1 = 1
        elif (m := _AUDIT_COUNTS.search(user)):
            total, relevant = int(m.group(1)), int(m.group(2))
            d1 = 5 if relevant * 2 > total else 2
        else:
            out = user.split("## AI-Generated Output", 1)[-1].split("## Evaluation Task", 1)[0]
            d1 = 4 if out.count("[PMID:") >= 3 else 2
        return json.dumps({
            "D1_verifiability": d1, "D2_actionability": 3, "D3_temporal_precision": 3,
            "D4_nonexpert_safety": 3, "D5_clinical_completeness": 3,
            "brief_justification": "Deterministic rubric stand-in.",
        })


class OverlapNliJudge(ModelProvider):
    """ENTAILS when the claim shares a 4-token run with the abstract, else NEUTRAL."""

    def __init__(self, provider_id: str = "overlap-nli"):
        self.id = provider_id
        self.endpoint = None

    def complete(self, system, user, *, call_type="complete", key=None,
                 temperature=0.0, max_tokens=200):
        claim = re.search(r"^Claim: (.*)$", user, re.M)
        abstract = user.split("Abstract:\n", 1)[-1]
        c, a = _tokens(claim.group(1) if claim else ""), _tokens(abstract)
        grams = {tuple(a[i:i + 4]) for i in range(len(a) - 3)}
        hit = any(tuple(c[i:i + 4]) in grams for i in range(len(c) - 3))
        return json.dumps({"label": "ENTAILS" if hit else "NEUTRAL", "confidence": 0.9 if hit else 0.6})

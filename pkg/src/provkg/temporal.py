"""ISO-8601 duration anchors for disease-trajectory milestones.

Anchors are intervals of ages (durations since birth), not calendar dates.
Phrases resolve at one of four precision levels, tried in this order:

* Exact  - a single age ("age 13 years", "P13Y")
* Range  - a bounded interval ("13 to 16 years", "P9Y-P13Y")
* Fuzzy  - a qualified decade phrase from the fuzzy table ("late teens")
* Stage  - a developmental stage from the stage table ("early childhood")
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping

if TYPE_CHECKING:
    from provkg.pairconfig import DiseasePairConfig

DAYS_PER_MONTH = 30.4375  # 365.25 / 12


class Precision(str, enum.Enum):
    EXACT = "Exact"
    RANGE = "Range"
    FUZZY = "Fuzzy"
    STAGE = "Stage"


class ParseStatus(str, enum.Enum):
    RESOLVED = "resolved"
    UNRESOLVED = "unresolved"


@dataclass(frozen=True, order=False)
class Duration:
    years: float = 0
    months: float = 0
    days: float = 0

    @property
    def total_months(self) -> float:
        return self.years * 12 + self.months + self.days / DAYS_PER_MONTH

    def __lt__(self, other: "Duration") -> bool:
        return self.total_months < other.total_months

    def __le__(self, other: "Duration") -> bool:
        return self.total_months <= other.total_months

    def __gt__(self, other: "Duration") -> bool:
        return self.total_months > other.total_months

    def __ge__(self, other: "Duration") -> bool:
        return self.total_months >= other.total_months

    def iso(self) -> str:
        parts = [(self.years, "Y"), (self.months, "M"), (self.days, "D")]
        body = "".join(f"{_num(v)}{u}" for v, u in parts if v)
        return "P" + (body or "0D")


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


_ISO_RE = re.compile(
    r"^P(?=\d)(?:(\d+(?:\.\d+)?)Y)?(?:(\d+(?:\.\d+)?)M)?(?:(\d+(?:\.\d+)?)W)?(?:(\d+(?:\.\d+)?)D)?$"
)


def parse_duration(text: str) -> Duration:
    """Parse a date-free ISO-8601 duration such as ``P13Y``, ``P1Y6M`` or ``P2W``."""
    m = _ISO_RE.match(text.strip())
    if not m or not any(m.groups()):
        raise ValueError(f"not an ISO-8601 duration: {text!r}")
    y, mo, w, d = (float(g) if g else 0.0 for g in m.groups())
    return Duration(years=y, months=mo, days=d + 7 * w)


def _unit_duration(value: float, unit: str) -> Duration:
    u = unit.lower()
    if u.startswith(("y", "yr")):
        return Duration(years=value)
    if u.startswith("mo"):
        return Duration(months=value)
    if u.startswith("w"):
        return Duration(days=7 * value)
    if u.startswith("d"):
        return Duration(days=value)
    raise ValueError(unit)


@dataclass(frozen=True)
class TemporalAnchor:
    start: Duration | None
    end: Duration | None
    precision: Precision | None
    parse_status: ParseStatus
    source_phrase: str = ""

    @property
    def resolved(self) -> bool:
        return self.parse_status is ParseStatus.RESOLVED

    @property
    def display(self) -> str:
        if not self.resolved:
            return ""
        s, e = self.start.iso(), self.end.iso()
        return s if s == e else f"{s}-{e}"

    @property
    def time_index_months(self) -> int:
        return time_index(self)

    @property
    def midpoint_years(self) -> float:
        return time_index(self) / 12

    def overlaps(self, other: "TemporalAnchor") -> bool:
        if not (self.resolved and other.resolved):
            return True
        return not (self.end < other.start or other.end < self.start)

    @classmethod
    def unresolved(cls, phrase: str = "") -> "TemporalAnchor":
        return cls(None, None, None, ParseStatus.UNRESOLVED, phrase)

    @classmethod
    def from_iso(cls, start: str, end: str | None = None,
                 precision: Precision | None = None) -> "TemporalAnchor":
        s = parse_duration(start)
        e = parse_duration(end) if end else s
        if e < s:
            raise ValueError(f"anchor end {end} precedes start {start}")
        if precision is None:
            precision = Precision.EXACT if s == e else Precision.RANGE
        return cls(s, e, precision, ParseStatus.RESOLVED)

    @classmethod
    def from_display(cls, display: str) -> "TemporalAnchor":
        if not display:
            return cls.unresolved()
        lo, _, hi = display.partition("-")
        return cls.from_iso(lo, hi or None)


def time_index(anchor: TemporalAnchor) -> int:
    """Interval midpoint in months, rounded half up."""
    if not anchor.resolved:
        raise ValueError("no index for unresolved anchor")
    mid = (anchor.start.total_months + anchor.end.total_months) / 2
    # guard against 173.99999 style float noise before flooring
    return int(math.floor(round(mid, 9) + 0.5))


# Qualified decade phrases: 18 early/mid/late variants plus 6 bare decades.
def _decade_table() -> dict[str, tuple[str, str]]:
    table: dict[str, tuple[str, str]] = {
        "early teens": ("P13Y", "P14Y"),
        "mid teens": ("P15Y", "P16Y"),
        "late teens": ("P17Y", "P19Y"),
        "teens": ("P13Y", "P19Y"),
    }
    for word, base in (("twenties", 20), ("thirties", 30), ("forties", 40),
                       ("fifties", 50), ("sixties", 60)):
        table[f"early {word}"] = (f"P{base}Y", f"P{base + 3}Y")
        table[f"mid {word}"] = (f"P{base + 4}Y", f"P{base + 6}Y")
        table[f"late {word}"] = (f"P{base + 7}Y", f"P{base + 9}Y")
        table[word] = (f"P{base}Y", f"P{base + 9}Y")
    return table


DEFAULT_FUZZY_TABLE: dict[str, tuple[str, str]] = _decade_table()

DEFAULT_STAGE_TABLE: dict[str, tuple[str, str]] = {
    "neonatal": ("P0D", "P28D"),
    "newborn": ("P0D", "P28D"),
    "infancy": ("P0M", "P12M"),
    "early childhood": ("P1Y", "P5Y"),
    "toddler": ("P1Y", "P3Y"),
    "preschool": ("P3Y", "P5Y"),
    "middle childhood": ("P6Y", "P11Y"),
    "school age": ("P6Y", "P12Y"),
    "childhood": ("P1Y", "P12Y"),
    "puberty": ("P10Y", "P14Y"),
    "adolescence": ("P12Y", "P18Y"),
    "young adulthood": ("P18Y", "P35Y"),
    "middle age": ("P40Y", "P65Y"),
    "adulthood": ("P18Y", "P65Y"),
    "old age": ("P65Y", "P90Y"),
}


_NUM = r"(\d+(?:\.\d+)?)"
_UNIT = r"(years?|yrs?|y|months?|mos?|weeks?|wks?|days?|d)"
_DASH = r"\s*(?:-|–|—|to)\s*"

_RANGE_PATTERNS = [
    re.compile(r"(?<![\w.])P" + _NUM + r"([YMWD])" + r"\s*[-–]\s*P" + _NUM + r"([YMWD])(?!\w)"),
    re.compile(r"\bbetween\s+(?:the\s+)?(?:ages?\s+(?:of\s+)?)?" + _NUM + r"\s+and\s+" + _NUM
               + r"(?:\s*-?\s*" + _UNIT + r")?(?!\w)", re.I),
    re.compile(r"(?<![\w.])" + _NUM + _DASH + _NUM + r"\s*-?\s*" + _UNIT + r"(?!\w)", re.I),
    re.compile(r"\bage[sd]?\s+(?:of\s+)?" + _NUM + _DASH + _NUM + r"(?!\w)", re.I),
]

_EXACT_PATTERNS = [
    re.compile(r"(?<![\w.])(P(?=\d)(?:\d+(?:\.\d+)?Y)?(?:\d+(?:\.\d+)?M)?(?:\d+(?:\.\d+)?W)?(?:\d+(?:\.\d+)?D)?)(?![\w-])"),
    re.compile(r"\bage[sd]?\s+(?:of\s+)?" + _NUM + r"(?:\s+" + _UNIT + r")?(?![\w.])", re.I),
    re.compile(r"(?<![\w.])" + _NUM + r"[\s-]+" + _UNIT + r"[\s-]+(?:of[\s-]+age|old)\b", re.I),
    re.compile(r"^\s*" + _NUM + r"\s+" + _UNIT + r"\s*$", re.I),
    re.compile(r"\b(?:at|around|by|before|after)\s+" + _NUM + r"\s+" + _UNIT + r"(?![\w.])", re.I),
]


def _range_anchor(m: re.Match, idx: int, phrase: str) -> TemporalAnchor | None:
    g = m.groups()
    if idx == 0:
        s = _unit_duration(float(g[0]), {"Y": "y", "M": "mo", "W": "w", "D": "d"}[g[1]])
        e = _unit_duration(float(g[2]), {"Y": "y", "M": "mo", "W": "w", "D": "d"}[g[3]])
    else:
        unit = g[2] if len(g) > 2 and g[2] else "years"
        s = _unit_duration(float(g[0]), unit)
        e = _unit_duration(float(g[1]), unit)
    if e < s:
        return None
    return TemporalAnchor(s, e, Precision.RANGE, ParseStatus.RESOLVED, phrase)


def _exact_anchor(m: re.Match, idx: int, phrase: str) -> TemporalAnchor:
    if idx == 0:
        d = parse_duration(m.group(1))
    else:
        unit = m.group(2) or "years"
        d = _unit_duration(float(m.group(1)), unit)
    return TemporalAnchor(d, d, Precision.EXACT, ParseStatus.RESOLVED, phrase)


def _table_lookup(text: str, table: Mapping[str, tuple[str, str]],
                  precision: Precision, phrase: str) -> TemporalAnchor | None:
    best: tuple[int, int, str] | None = None
    for key in table:
        m = re.search(r"(?<!\w)" + re.escape(key) + r"(?!\w)", text)
        if m:
            # longest key wins, then earliest position
            cand = (-len(key), m.start(), key)
            if best is None or cand < best:
                best = cand
    if best is None:
        return None
    lo, hi = table[best[2]]
    a = TemporalAnchor.from_iso(lo, hi, precision)
    return TemporalAnchor(a.start, a.end, precision, ParseStatus.RESOLVED, phrase)


def resolve_temporal(phrase: str, cfg: "DiseasePairConfig | None" = None) -> TemporalAnchor:
    """Resolve a temporal phrase. Never raises; unmatched text is ``unresolved``."""
    if not phrase or not phrase.strip():
        return TemporalAnchor.unresolved(phrase or "")
    text = " ".join(phrase.split())

    ranges = []
    for i, pat in enumerate(_RANGE_PATTERNS):
        for m in pat.finditer(text):
            ranges.append((m, i))

    def inside_range(m: re.Match) -> bool:
        return any(r.start() <= m.start() < r.end() or r.start() < m.end() <= r.end()
                   for r, _ in ranges)

    for i, pat in enumerate(_EXACT_PATTERNS):
        for m in pat.finditer(text):
            if not inside_range(m):
                return _exact_anchor(m, i, phrase)

    for m, i in sorted(ranges, key=lambda t: (t[0].start(), t[1])):
        a = _range_anchor(m, i, phrase)
        if a is not None:
            return a

    folded = text.lower()
    fuzzy = cfg.fuzzy_temporal_table if cfg is not None else DEFAULT_FUZZY_TABLE
    stage = cfg.stage_temporal_table if cfg is not None else DEFAULT_STAGE_TABLE
    return (_table_lookup(folded, fuzzy, Precision.FUZZY, phrase)
            or _table_lookup(folded, stage, Precision.STAGE, phrase)
            or TemporalAnchor.unresolved(phrase))


# --------------------------------------------------------------------------- claim counting

_CLAIM_RE = re.compile(
    r"""
    (?<![\w.])P(?=\d)(?:\d+(?:\.\d+)?Y)?(?:\d+(?:\.\d+)?M)?(?:\d+(?:\.\d+)?W)?(?:\d+(?:\.\d+)?D)?
        (?:\s*[-–]\s*P\d+(?:\.\d+)?[YMWD](?:\d+(?:\.\d+)?[MWD])*)?\+?(?![\w-])
    | \b(?:(?:at|around|by|before|after|from|until|aged?)\s+)?(?:the\s+)?age[sd]?\s+(?:of\s+)?
        \d+(?:\.\d+)?(?:\s*(?:-|–|—|to)\s*\d+(?:\.\d+)?)?
        (?:\s*-?\s*(?:years?|yrs?|months?|weeks?|days?))?(?![\w.])
    | (?<![\w.])\d+(?:\.\d+)?\s*(?:-|–|—|to)\s*\d+(?:\.\d+)?\s*-?\s*(?:years?|yrs?|months?|weeks?|days?|day|week|month|year)(?!\w)
    """,
    re.I | re.X,
)


@dataclass(frozen=True)
class TemporalClaim:
    start: int
    end: int
    text: str


def extract_temporal_claims(text: str) -> tuple[int, list[TemporalClaim]]:
    """Count ISO-8601 durations and natural age ranges in free text.

    Spans come from a single left-to-right scan so they never overlap.
    """
    if not text:
        return 0, []
    seen: set[tuple[int, int]] = set()
    spans: list[TemporalClaim] = []
    for m in _CLAIM_RE.finditer(text):
        key = (m.start(), m.end())
        if key in seen:
            continue
        seen.add(key)
        spans.append(TemporalClaim(m.start(), m.end(), m.group(0)))
    return len(spans), spans


def count_temporal_claims(text: str) -> int:
    return extract_temporal_claims(text)[0]

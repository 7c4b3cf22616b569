"""In-memory property graph with the retrieval queries used for grounding."""

from __future__ import annotations

import csv
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from provkg.consensus import Edge, Tier, tier_rank
from provkg.normalize import NODE_LABELS, NormalizedEntity, Resolver, fold
from provkg.pairconfig import DIFFERENTIAL_PREDICATES, TREATMENT_PREDICATES

if TYPE_CHECKING:
    from provkg.pairconfig import DiseasePairConfig, DiseaseSpec

_CUI_RE = re.compile(r"^C\d{7}$")


@dataclass
class Node:
    key: str
    name: str
    cui: str | None = None
    labels: set[str] = field(default_factory=lambda: {"Entity"})
    short_name: str | None = None


def _tier_order(e: Edge) -> tuple[int, str]:
    return (tier_rank(e.quality_tier), e.edge_id)


class Graph:
    def __init__(self):
        self.nodes: dict[str, Node] = {}
        self.edges: dict[str, Edge] = {}
        self.by_context: dict[str, set[str]] = defaultdict(set)
        self.by_predicate: dict[str, set[str]] = defaultdict(set)
        self.temporal: set[str] = set()
        self.incident: dict[str, set[str]] = defaultdict(set)

    # --- construction ------------------------------------------------------------

    def add_node(self, key: str, name: str, cui: str | None = None,
                 labels: Iterable[str] = (), short_name: str | None = None) -> Node:
        labels = set(labels) | {"Entity"}
        bad = labels - NODE_LABELS
        if bad:
            raise ValueError(f"unknown node labels {sorted(bad)}")
        node = self.nodes.get(key)
        if node is None:
            node = self.nodes[key] = Node(key, name, cui, labels, short_name)
        else:
            node.labels |= labels
            node.cui = node.cui or cui
            node.short_name = node.short_name or short_name
        return node

    def _add_entity(self, e: NormalizedEntity) -> None:
        self.add_node(e.key, e.surface, e.cui, {e.type_label})

    def add_edge(self, e: Edge) -> None:
        if e.edge_id in self.edges:
            raise ValueError(f"duplicate edge {e.edge_id}")
        self._add_entity(e.subject)
        self._add_entity(e.object)
        self.edges[e.edge_id] = e
        for d in e.disease_context:
            self.by_context[d].add(e.edge_id)
        self.by_predicate[e.predicate].add(e.edge_id)
        if e.is_temporal:
            self.temporal.add(e.edge_id)
        self.incident[e.subject.key].add(e.edge_id)
        self.incident[e.object.key].add(e.edge_id)

    @classmethod
    def from_edges(cls, edges: Iterable[Edge], cfg: "DiseasePairConfig | None" = None) -> "Graph":
        g = cls()
        if cfg is not None:
            for d in cfg.diseases:
                g.add_node(d.cuis[0].lower(), d.full_name, d.cuis[0], {"Disease"}, d.short_name)
        for e in edges:
            g.add_edge(e)
        return g

    # --- queries -----------------------------------------------------------------

    def _context(self, disease: str) -> set[str]:
        return self.by_context.get(disease, set())

    def strategy_a(self, disease: str) -> set[str]:
        return {i for i in self._context(disease) if self.edges[i].predicate in DIFFERENTIAL_PREDICATES}

    def strategy_b(self, spec: "DiseaseSpec") -> set[str]:
        cuis = {c.upper() for c in spec.cuis}
        names = {spec.full_name.lower(), spec.short_name.lower()}
        out = set()
        for e in self.edges.values():
            if e.predicate not in DIFFERENTIAL_PREDICATES:
                continue
            node = self.nodes[e.subject.key]
            if "Disease" not in node.labels:
                continue
            if (node.cui and node.cui.upper() in cuis) or node.name.lower() in names:
                out.add(e.edge_id)
        return out

    def strategy_c(self, disease: str) -> set[str]:
        return {i for i in self._context(disease) if self.edges[i].predicate == "LACKS_FEATURE"}

    def stats(self) -> dict[str, int]:
        pmids = set().union(*(e.pmid_list for e in self.edges.values())) if self.edges else set()
        return {
            "nodes": len(self.nodes),
            "edges": len(self.edges),
            "temporal_anchors": sum(1 for e in self.edges.values() if e.temporal_value_display),
            "gold_edges": sum(1 for e in self.edges.values() if e.quality_tier is Tier.GOLD),
            "unique_pmids": len(pmids),
        }


def _spec(cfg: "DiseasePairConfig", disease: str) -> "DiseaseSpec":
    try:
        return cfg.disease(disease)
    except KeyError:
        raise KeyError(f"disease {disease!r} is not part of pair {cfg.pair_id}") from None


def query_comparative(g: Graph, disease: str, cfg: "DiseasePairConfig") -> list[Edge]:
    """Differential evidence for one disease: strategies A, B and C merged by edge_id."""
    spec = _spec(cfg, disease)
    ids = g.strategy_a(spec.short_name) | g.strategy_b(spec) | g.strategy_c(spec.short_name)
    return sorted((g.edges[i] for i in ids), key=_tier_order)


def query_temporal(g: Graph, disease: str, cfg: "DiseasePairConfig | None" = None) -> list[Edge]:
    short = _spec(cfg, disease).short_name if cfg is not None else disease
    hits = [g.edges[i] for i in g._context(short) & g.temporal
            if g.edges[i].anchor is not None and g.edges[i].anchor.resolved]
    return sorted(hits, key=lambda e: (e.time_index_months, e.edge_id))


def query_treatment(g: Graph, disease: str, cfg: "DiseasePairConfig | None" = None) -> list[Edge]:
    short = _spec(cfg, disease).short_name if cfg is not None else disease
    hits = [g.edges[i] for i in g._context(short) if g.edges[i].predicate in TREATMENT_PREDICATES]
    return sorted(hits, key=_tier_order)


def query_neighbourhood(g: Graph, entity: str | None = None, limit: int = 30,
                        cui: str | None = None, disease: str | None = None) -> list[Edge]:
    """Undirected incident edges of matching nodes, CUI matches first, capped at ``limit``."""
    if entity and cui is None and _CUI_RE.match(entity.strip().upper()):
        cui, entity = entity.strip().upper(), None
    cui_nodes = [n for n in g.nodes.values() if cui and n.cui and n.cui.upper() == cui.upper()]
    needle = fold(entity) if entity else None
    name_nodes = [n for n in g.nodes.values() if needle and needle in n.name.lower()]

    def incident(nodes: list[Node]) -> list[Edge]:
        ids = set().union(*(g.incident.get(n.key, set()) for n in nodes)) if nodes else set()
        edges = (g.edges[i] for i in ids)
        if disease:
            edges = (e for e in edges if disease in e.disease_context)
        return sorted(edges, key=_tier_order)

    out: list[Edge] = []
    seen: set[str] = set()
    for e in incident(cui_nodes) + incident(name_nodes):
        if e.edge_id not in seen:
            seen.add(e.edge_id)
            out.append(e)
    return out[:limit]


# --------------------------------------------------------------------------- export / import

def _cy(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_cy(v) for v in value) + "]"
    s = str(value).replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
    return f'"{s}"'


SCRIPT_HEADER = (
    "// provkg graph import script\n"
    "CREATE CONSTRAINT entity_key IF NOT EXISTS FOR (n:Entity) REQUIRE n.key IS UNIQUE;\n"
)


def export_import_script(g: Graph) -> str:
    """Cypher script that recreates every node and edge; output order is fixed."""
    lines = [SCRIPT_HEADER]
    for key in sorted(g.nodes):
        n = g.nodes[key]
        labels = ":".join(sorted(n.labels, key=lambda l: (l != "Entity", l)))
        props = {"key": n.key, "name": n.name}
        if n.cui:
            props["cui"] = n.cui
        if n.short_name:
            props["short_name"] = n.short_name
        body = ", ".join(f"{k}: {_cy(v)}" for k, v in props.items())
        lines.append(f"MERGE (:{labels} {{{body}}});\n")
    for eid in sorted(g.edges):
        e = g.edges[eid]
        rec = e.to_record()
        props = {k: rec[k] for k in (
            "quality_tier", "consensus_score", "source_models", "pmid_list", "evidence_sample",
            "edge_id", "is_temporal", "temporal_value_display", "time_index_months",
            "temporal_midpoint_years", "temporal_parse_status", "cross_tier_confirmed",
            "evidence_breadth", "disease_context", "is_protected")}
        sets = ", ".join(f"r.{k} = {_cy(v)}" for k, v in props.items() if k != "edge_id")
        rel = e.predicate.replace("`", "")
        lines.append(
            f"MATCH (s:Entity {{key: {_cy(e.subject.key)}}}), (t:Entity {{key: {_cy(e.object.key)}}}) "
            f"MERGE (s)-[r:`{rel}` {{edge_id: {_cy(e.edge_id)}}}]->(t) SET {sets};\n"
        )
    return "".join(lines)


def _read_table(path: Path) -> list[dict]:
    if path.suffix == ".jsonl":
        with open(path, encoding="utf-8") as fh:
            return [json.loads(l) for l in fh if l.strip()]
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return doc if isinstance(doc, list) else doc.get("records") or doc.get("nodes") or doc.get("edges") or []
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _coerce_edge_record(r: dict) -> dict:
    out = dict(r)
    for k in ("source_models", "pmid_list", "disease_context", "source_labels", "target_labels"):
        v = out.get(k)
        if isinstance(v, str):
            v = v.strip()
            if v.startswith("["):
                out[k] = json.loads(v)
            else:
                out[k] = [x for x in re.split(r"[;|,]\s*", v) if x]
    for k in ("is_temporal", "cross_tier_confirmed", "is_protected", "cross_tier"):
        if isinstance(out.get(k), str):
            out[k] = out[k].strip().lower() in ("true", "1", "yes")
    out.setdefault("source_label", (out.get("source_labels") or ["Entity"])[-1] if out.get("source_labels") else "Entity")
    out.setdefault("target_label", (out.get("target_labels") or ["Entity"])[-1] if out.get("target_labels") else "Entity")
    for side in ("source", "target"):
        lab = out.get(f"{side}_label")
        if lab not in NODE_LABELS:
            out[f"{side}_label"] = "Entity"
    return out


def _find(directory: Path, stem: str) -> Path | None:
    for ext in (".jsonl", ".json", ".csv"):
        for cand in sorted(directory.glob(f"*{stem}*{ext}")):
            return cand
    return None


def load_graph_export(directory: str | Path) -> Graph:
    """Ingest a node table and an edge table (JSONL, JSON or CSV) from ``directory``.

    Nodes without incident edges are kept so totals match the export.
    """
    directory = Path(directory)
    edges_path = _find(directory, "edges")
    if edges_path is None:
        raise FileNotFoundError(f"no edge table under {directory}")
    g = Graph()
    nodes_path = _find(directory, "nodes")
    if nodes_path is not None:
        for r in _read_table(nodes_path):
            labels = r.get("labels") or r.get("label") or ["Entity"]
            if isinstance(labels, str):
                labels = [l for l in re.split(r"[;|,:]\s*", labels.strip("[]")) if l]
            labels = {l.strip("'\" ") for l in labels} & NODE_LABELS
            name = str(r.get("name", ""))
            cui = r.get("cui") or None
            key = str(r.get("key") or (cui.lower() if cui else fold(name)) or r.get("id"))
            g.add_node(key, name, cui, labels, r.get("short_name") or None)
    for r in _read_table(edges_path):
        e = Edge.from_record(_coerce_edge_record(r))
        if e.edge_id in g.edges:
            continue
        g.add_edge(e)
    return g

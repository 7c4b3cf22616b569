"""Tab-separated report tables and the provenance-gap figure."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from provkg.judgepanel import DIM_SHORT, PanelSummary

ARM_ORDER = ("vanilla", "guideline_rag", "heg_tkg")
ARM_LABEL = {"vanilla": "Vanilla", "guideline_rag": "Guideline-RAG", "heg_tkg": "HEG-TKG"}
DIM_LABEL = {"D1": "D1 Verifiability", "D2": "D2 Actionability", "D3": "D3 Temporal Precision",
             "D4": "D4 Non-Expert Safety", "D5": "D5 Clinical Completeness"}
KG_ROWS = (("unique_pmids", "Unique PMIDs in KG"), ("nodes", "Total nodes"), ("edges", "Total edges"),
           ("temporal_anchors", "Temporal anchors"), ("gold_edges", "GOLD quality edges"))


def _tsv(rows: Iterable[Sequence]) -> str:
    return "".join("\t".join(str(c) for c in r) + "\n" for r in rows)


def _f2(x: float | None) -> str:
    return "" if x is None else f"{x:.2f}"


def metrics_table(rows: Iterable) -> str:
    """One line per scenario: FC/ETS/PG for each arm (rows need scenario_id, output_type, arm, fc, ets, pg)."""
    header = ["scenario", "type"] + [f"{a}_{m}" for a in ARM_ORDER for m in ("fc", "ets", "pg")]
    by_sc: dict[str, dict] = defaultdict(dict)
    types = {}
    for r in rows:
        by_sc[r.scenario_id][r.arm] = r
        types[r.scenario_id] = r.output_type
    out = [header]
    for sc in sorted(by_sc):
        line = [sc, types[sc]]
        for a in ARM_ORDER:
            r = by_sc[sc].get(a)
            line += [_f2(r.fc), _f2(r.ets), _f2(r.pg)] if r else ["", "", ""]
        out.append(line)
    return _tsv(out)


def citation_table(summaries: Mapping[str, Mapping[str, int]]) -> str:
    """Per arm: unique PMIDs and the Relevant / WrongField / NotFound split."""
    out = [["system", "unique_pmids", "relevant", "relevant_pct", "wrong_field", "not_found"]]
    for arm in [a for a in ARM_ORDER if a in summaries] + sorted(set(summaries) - set(ARM_ORDER)):
        s = summaries[arm]
        n = s.get("total", 0)
        pct = f"{100.0 * s.get('Relevant', 0) / n:.0f}" if n else "0"
        out.append([ARM_LABEL.get(arm, arm), n, s.get("Relevant", 0), pct,
                    s.get("WrongField", 0), s.get("NotFound", 0)])
    return _tsv(out)


def judge_table(panel: PanelSummary, pair: str | None = None) -> str:
    """Dimension rows with per-arm mean ± SD, the HEG-TKG minus Vanilla delta and d."""
    out = [["dimension", "Vanilla", "G-RAG", "HEG-TKG", "delta_h_v", "d"]]
    for dim in DIM_SHORT:
        line = [DIM_LABEL[dim]]
        for arm in ARM_ORDER:
            c = panel.pooled.get((arm, dim)) if pair is None else panel.cells.get((pair, arm, dim))
            line.append(f"{c.mean:.2f} ± {c.sd:.2f}" if c else "")
        comp = [x for x in panel.comparisons
                if x.dimension == dim and x.baseline == "vanilla" and (pair is None or x.disease_pair == pair)]
        if pair is not None and comp:
            line += [f"{comp[0].delta:+.2f}", f"{comp[0].d:.2f}"]
        else:
            line += ["", ""]
        out.append(line)
    return _tsv(out)


def counterfactual_table(results: Sequence[tuple[str, str, bool]]) -> str:
    """``results`` holds (case id, outcome, detectable)."""
    n = len(results)
    out = [["outcome", "count", "percentage"]]
    for label, key in (("Parametric resistance", "Resisted"), ("Partial incorporation", "Partial"),
                       ("Faithful propagation", "Faithful")):
        k = sum(1 for _, o, _ in results if o == key)
        out.append([label, f"{k}/{n}" if n else "0/0", f"{100.0 * k / n:.0f}%" if n else ""])
    det = sum(1 for *_, d in results if d)
    out.append(["Detectable via citation traceability", f"{det}/{n}" if n else "0/0",
                f"{100.0 * det / n:.0f}%" if n else ""])
    return _tsv(out)


def kg_stats_table(stats: Mapping[str, Mapping[str, int]]) -> str:
    """Structural statistics per pair plus a Total column."""
    pairs = sorted(stats)
    out = [["statistic", *pairs, "Total"]]
    for key, label in KG_ROWS:
        vals = [int(stats[p].get(key, 0)) for p in pairs]
        out.append([label, *vals, sum(vals)])
    return _tsv(out)


def density_table(rows: Iterable[tuple[str, str, int, int]]) -> str:
    """``rows`` holds (arm, pair, words, unique PMIDs) per output; reports per-pair means."""
    acc: dict[tuple[str, str], list[tuple[int, int]]] = defaultdict(list)
    for arm, pair, words, pmids in rows:
        acc[(arm, pair)].append((words, pmids))
        acc[(arm, "All")].append((words, pmids))
    out = [["system", "pair", "words", "pmids", "pmids_per_1k_words"]]
    for arm, pair in sorted(acc, key=lambda k: (ARM_ORDER.index(k[0]) if k[0] in ARM_ORDER else 9,
                                                 k[1] == "All", k[1])):
        vals = acc[(arm, pair)]
        w = sum(v[0] for v in vals) / len(vals)
        p = sum(v[1] for v in vals) / len(vals)
        out.append([ARM_LABEL.get(arm, arm), pair, f"{w:.0f}", f"{p:.1f}",
                    f"{(p / w * 1000 if w else 0.0):.1f}"])
    return _tsv(out)


def temporal_claims_table(rows: Iterable[tuple[str, str, int]]) -> str:
    """``rows`` holds (arm, output_type, claim count) per output."""
    tot: dict[tuple[str, str], int] = defaultdict(int)
    types: set[str] = set()
    for arm, otype, k in rows:
        tot[(arm, otype)] += k
        types.add(otype)
    arms = [a for a in ARM_ORDER if any(k[0] == a for k in tot)]
    out = [["output_type", *[ARM_LABEL[a] for a in arms]]]
    for t in sorted(types):
        out.append([t, *[tot.get((a, t), 0) for a in arms]])
    out.append(["Total", *[sum(v for (a, _), v in tot.items() if a == arm) for arm in arms]])
    return _tsv(out)


def pg_figure(rows: Iterable, path: str | Path) -> Path:
    """Mean Provenance Gap per arm as a bar chart."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    vals: dict[str, list[float]] = defaultdict(list)
    for r in rows:
        vals[r.arm].append(r.pg)
    arms = [a for a in ARM_ORDER if a in vals]
    means = [sum(vals[a]) / len(vals[a]) for a in arms]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar([ARM_LABEL[a] for a in arms], means, color=["#999999", "#6b8fb3", "#2f6b3a"][:len(arms)])
    ax.set_ylabel("mean provenance gap")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata={"Software": None, "CreationDate": None} if path.suffix == ".pdf" else {"Software": None})
    plt.close(fig)
    return path


def emit_reports(outdir: str | Path, *, metrics=None, citations=None, panels=None,
                 counterfactuals=None, kg_stats=None, density=None, temporal=None) -> list[Path]:
    """Write every table given; a missing artifact produces a header-only file."""
    d = Path(outdir)
    d.mkdir(parents=True, exist_ok=True)
    files = {
        "scenario_metrics.tsv": metrics_table(metrics or []),
        "citation_audit.tsv": citation_table(citations or {}),
        "counterfactual.tsv": counterfactual_table(counterfactuals or []),
        "kg_stats.tsv": kg_stats_table(kg_stats or {}),
        "citation_density.tsv": density_table(density or []),
        "temporal_claims.tsv": temporal_claims_table(temporal or []),
    }
    for name, panel in (panels or {}).items():
        files[f"judge_{name}.tsv"] = judge_table(panel)
        for pair in sorted({k[0] for k in panel.cells}):
            files[f"judge_{name}_{pair}.tsv"] = judge_table(panel, pair)
    written = []
    for name, text in sorted(files.items()):
        p = d / name
        p.write_text(text, encoding="utf-8")
        written.append(p)
    return written

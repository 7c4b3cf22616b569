"""``kg`` command line: build, query, synthesize, audit, metrics, judge, nli-audit,
counterfactual, stats and export."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from provkg import data_path
from provkg import statkit
from provkg.citeverify import PubMedClient, audit_text, render_audit_report, summarize_audits
from provkg.consensus import load_tier1
from provkg.counterfactual import classify_cf_outcome, inject_counterfactual, load_cases
from provkg.evalmetrics import DEFAULT_R, compute_metrics, load_published_metrics, provenance_gap
from provkg.extraction import (FixtureProvider, HttpChatProvider, ProviderError, RecordingProvider,
                               load_corpus)
from provkg.fixtures import EchoSynthesisProvider, OverlapNliJudge, RubricJudge
from provkg.graphstore import (Graph, export_import_script, load_graph_export, query_comparative,
                              query_neighbourhood, query_temporal, query_treatment)
from provkg.judgepanel import (JudgeCase, aggregate_nli, aggregate_panel, blind_and_shuffle,
                               extract_claims, judge_case, load_scores, load_verdicts, nli_judge,
                               stratified_sample, write_scores)
from provkg.pairconfig import ConfigError, resolve_config
from provkg.pipeline import StageError, run_phase1, run_phase2
from provkg.reports import citation_table, counterfactual_table, judge_table, metrics_table
from provkg.synthesis import (ARMS, ClinicalOutput, PrivacyError, RagIndex, format_evidence_block,
                              load_scenarios)

log = logging.getLogger("provkg")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_PRIVACY = 0, 1, 2, 3
EXTRACTOR_PREFIXES = ("PROVKG_EXTRACT1", "PROVKG_EXTRACT2")


# --------------------------------------------------------------------------- helpers

def fixture(name: str) -> Path:
    return data_path("fixtures", name)


def _offline(args) -> bool:
    return args.offline or os.environ.get("PROVKG_OFFLINE") == "1"


def extraction_providers(args, pair: str):
    if _offline(args):
        path = Path(args.fixtures) if args.fixtures else fixture(f"providers_{pair}.jsonl")
        with open(path, encoding="utf-8") as fh:
            records = [json.loads(l) for l in fh if l.strip()]
        ids = sorted({r["provider"] for r in records})
        return [FixtureProvider(i, records) for i in ids]
    providers = []
    for prefix in EXTRACTOR_PREFIXES:
        if os.environ.get(f"{prefix}_ENDPOINT"):
            p = HttpChatProvider.from_env(prefix.lower(), prefix)
            providers.append(RecordingProvider(p, args.record) if args.record else p)
    if not providers:
        raise SystemExit(f"no extraction providers: set {EXTRACTOR_PREFIXES[0]}_ENDPOINT/_MODEL or use --offline")
    return providers


def synthesis_provider(args):
    if _offline(args):
        return EchoSynthesisProvider()
    return HttpChatProvider.from_env("synthesis", "PROVKG_SYNTH")


def judge_providers(args):
    if _offline(args):
        return [RubricJudge()]
    out = []
    for i in (1, 2, 3):
        if os.environ.get(f"PROVKG_JUDGE{i}_ENDPOINT"):
            out.append(HttpChatProvider.from_env(f"judge{i}", f"PROVKG_JUDGE{i}"))
    if not out:
        raise SystemExit("no judge providers: set PROVKG_JUDGE1_ENDPOINT/_MODEL or use --offline")
    return out


def pubmed_client(args) -> PubMedClient:
    index = Path(args.index) if getattr(args, "index", None) else fixture("pubmed_index.json")
    return PubMedClient(index, live=not _offline(args), api_key=os.environ.get("NCBI_API_KEY"))


def _graph(args, cfg) -> Graph:
    if args.graph:
        return load_graph_export(args.graph)
    res = run_phase1(cfg, load_corpus(fixture(f"corpus_{cfg.pair_id}.jsonl")),
                     extraction_providers(argparse.Namespace(offline=True, fixtures=None, record=None),
                                          cfg.pair_id),
                     load_tier1(fixture(f"tier1_{cfg.pair_id}.json"), cfg))
    return res.graph


def write_graph(g: Graph, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "nodes.jsonl", "w", encoding="utf-8") as fh:
        for key in sorted(g.nodes):
            n = g.nodes[key]
            fh.write(json.dumps({"key": n.key, "name": n.name, "cui": n.cui,
                                 "labels": sorted(n.labels), "short_name": n.short_name},
                                sort_keys=True) + "\n")
    with open(outdir / "edges.jsonl", "w", encoding="utf-8") as fh:
        for eid in sorted(g.edges):
            fh.write(json.dumps(g.edges[eid].to_record(), sort_keys=True) + "\n")
    (outdir / "import.cypher").write_text(export_import_script(g), encoding="utf-8")


def _scenario(args, scenario_id: str):
    path = Path(args.scenarios) if args.scenarios else fixture("scenarios.json")
    for s in load_scenarios(path):
        if s.id == scenario_id:
            return s
    raise SystemExit(f"unknown scenario {scenario_id!r} in {path}")


def _rag_index(cfg) -> RagIndex:
    docs = []
    with open(fixture("guideline_corpus.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                if d.get("disease_pair", cfg.pair_id) == cfg.pair_id:
                    docs.append((d["doc_id"], d["text"]))
    return RagIndex(docs)


def _read_numbers(path: str, column: str | None = None) -> list[float]:
    p = Path(path)
    if p.suffix == ".csv":
        with open(p, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = column or next(iter(rows[0]))
        return [float(r[col]) for r in rows if r[col] not in ("", "NA")]
    return [float(x) for x in p.read_text().split()]


def _read_matrix(path: str) -> list[list[float]]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.reader(fh):
            if r and not r[0].startswith("#"):
                try:
                    rows.append([float(x) if x.strip() not in ("", "NA", "nan") else float("nan") for x in r])
                except ValueError:
                    continue  # header row
    return rows


# --------------------------------------------------------------------------- commands

def cmd_build(args) -> int:
    cfg = resolve_config(args.pair)
    corpus = load_corpus(args.corpus or fixture(f"corpus_{cfg.pair_id}.jsonl"))
    tier1_path = args.tier1 or fixture(f"tier1_{cfg.pair_id}.json")
    tier1 = load_tier1(tier1_path, cfg) if Path(tier1_path).exists() else []
    res = run_phase1(cfg, corpus, extraction_providers(args, cfg.pair_id), tier1)
    out = Path(args.out)
    write_graph(res.graph, out)
    (out / "report.json").write_text(json.dumps(res.report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(res.report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = resolve_config(args.pair)
    g = _graph(args, cfg)
    if args.kind == "comparative":
        edges = query_comparative(g, args.disease, cfg)
    elif args.kind == "temporal":
        edges = query_temporal(g, args.disease, cfg)
    elif args.kind == "treatment":
        edges = query_treatment(g, args.disease, cfg)
    else:
        edges = query_neighbourhood(g, args.entity, limit=args.limit, disease=args.disease)
    if args.json:
        print(json.dumps([e.to_record() for e in edges], indent=2))
    else:
        print(format_evidence_block(edges))
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg = resolve_config(args.pair)
    scenario = _scenario(args, args.scenario_id)
    provider = synthesis_provider(args)
    g = _graph(args, cfg) if args.arm == "heg_tkg" else Graph()
    rag = _rag_index(cfg) if args.arm == "guideline_rag" else None
    res = run_phase2(g, cfg, scenario, args.arm, provider, rag_index=rag,
                     strict_privacy=args.strict_privacy)
    path = res.output.write(args.out)
    print(path)
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = resolve_config(args.pair)
    client = pubmed_client(args)
    text = Path(args.input).read_text(encoding="utf-8")
    audit = audit_text(text, Path(args.input).stem, cfg, client, title_only=args.title_only)
    print(json.dumps(audit.to_json(), indent=2) if args.json else render_audit_report(audit))
    return EXIT_OK


def _load_outputs(directory: str) -> list[ClinicalOutput]:
    return [ClinicalOutput.read(p) for p in sorted(Path(directory).glob("*/*.md"))]


def cmd_metrics(args) -> int:
    if args.published:
        rows = load_published_metrics()
    else:
        scen = {s.id: s for s in load_scenarios(args.scenarios or fixture("scenarios.json"))}
        rows = []
        for out in _load_outputs(args.outputs):
            s = scen.get(out.scenario_id)
            if s is None:
                continue
            m = compute_metrics(out.text, s.expected_key_features, out.arm)
            rows.append(argparse.Namespace(scenario_id=s.id, output_type=s.output_type, arm=out.arm,
                                           fc=m.fc, ets=m.ets, pg=provenance_gap(m.fc, m.ets, DEFAULT_R[out.arm])))
    sys.stdout.write(metrics_table(rows))
    return EXIT_OK


def cmd_judge(args) -> int:
    if args.scores:
        panel = aggregate_panel([s for s in load_scores(args.scores) if s.round == args.round])
        sys.stdout.write(judge_table(panel, args.disease_pair))
        return EXIT_OK
    cfg = resolve_config(args.pair)
    scen = {s.id: s for s in load_scenarios(args.scenarios or fixture("scenarios.json"))}
    client = pubmed_client(args)
    cases = []
    for out in _load_outputs(args.outputs):
        s = scen[out.scenario_id]
        cases.append(JudgeCase(f"{out.scenario_id}/{out.arm}", s.id, out.arm, s.disease_pair,
                               s.scenario_text, out.text))
    blinded, key = blind_and_shuffle(cases, seed=args.seed)
    scores, missing = [], []
    for judge in judge_providers(args):
        for b in blinded:
            meta = key[b.blind_id]
            report = None
            if args.round == "v2":
                report = render_audit_report(audit_text(b.output_text, b.blind_id, cfg, client))
            s = judge_case(b, args.round, report, judge, meta=meta)
            (scores.append(s) if s else missing.append((judge.id, meta.case_id)))
    if args.out:
        write_scores(scores, args.out)
    sys.stdout.write(judge_table(aggregate_panel(scores)))
    if missing:
        print(f"missing: {len(missing)} case(s)", file=sys.stderr)
    return EXIT_OK


def cmd_nli(args) -> int:
    if args.verdicts:
        summ = aggregate_nli(load_verdicts(args.verdicts))
    else:
        cfg = resolve_config(args.pair)
        outs = [o for o in _load_outputs(args.outputs) if o.arm == "heg_tkg"]
        pairs, filtered = extract_claims((o.scenario_id, cfg.pair_id, o.text) for o in outs)
        sample = stratified_sample(pairs, n=min(args.n, len(pairs)), seed=args.seed)
        abstracts = {a.pmid: a for a in load_corpus(args.corpus or fixture(f"corpus_{cfg.pair_id}.jsonl"))}
        client = pubmed_client(args)
        provider = OverlapNliJudge() if _offline(args) else HttpChatProvider.from_env("nli", "PROVKG_NLI")
        verdicts = []
        for p in sample:
            a = abstracts.get(p.pmid)
            rec = client.fetch(p.pmid)
            v = nli_judge(p.claim, p.pmid, rec.title, a.text if a else "", provider, p.tier, p.disease_pair)
            if v:
                verdicts.append(v)
        print(f"candidates={len(pairs)} filtered_meta={filtered} sampled={len(sample)}", file=sys.stderr)
        summ = aggregate_nli(verdicts)
    print(json.dumps({"n": summ.n, "counts": summ.counts, "rates": summ.rates, "cis": summ.cis,
                      "non_contradiction": summ.non_contradiction,
                      "non_contradiction_ci": summ.non_contradiction_ci, "by_tier": summ.by_tier},
                     indent=2))
    return EXIT_OK


def cmd_counterfactual(args) -> int:
    cfg = resolve_config(args.pair)
    g = _graph(args, cfg)
    provider = synthesis_provider(args)
    corpus_pmids = {a.pmid for a in load_corpus(fixture(f"corpus_{cfg.pair_id}.jsonl"))}
    results = []
    for cf in load_cases(args.cases or fixture("counterfactual_cases.json")):
        if cf.disease_pair != cfg.pair_id:
            continue
        scenario = _scenario(args, cf.scenario_id)
        res = run_phase2(g, cfg, scenario, "heg_tkg", provider, strict_privacy=args.strict_privacy,
                         evidence_hook=lambda ev, cf=cf: inject_counterfactual(ev, cf, corpus_pmids))
        outcome, detectable = classify_cf_outcome(res.output, cf)
        results.append((cf.id, outcome.value, detectable))
        print(f"{cf.id}\t{outcome.value}\tdetectable={detectable}", file=sys.stderr)
    sys.stdout.write(counterfactual_table(results))
    return EXIT_OK


def cmd_stats(args) -> int:
    op = args.op
    if op == "wilson":
        lo, hi = statkit.wilson_ci(args.successes, args.n, args.level)
        print(f"{lo:.4f}\t{hi:.4f}")
    elif op == "cohens-d":
        print(f"{statkit.cohens_d(*args.summary[:2], int(args.summary[2]), *args.summary[3:5], int(args.summary[5])):.4f}")
    elif op == "bootstrap":
        lo, hi = statkit.bootstrap_ci(_read_numbers(args.file, args.column), resamples=args.resamples,
                                      seed=args.seed, level=args.level)
        print(f"{lo:.4f}\t{hi:.4f}")
    elif op == "mwu":
        r = statkit.mann_whitney_u(_read_numbers(args.a), _read_numbers(args.b))
        print(f"U={r.statistic:g}\tp={r.p_value:.6g}\t{r.extra['method']}")
    elif op == "bh":
        for q in statkit.bh_correct(_read_numbers(args.file)):
            print(f"{q:.6g}")
    elif op == "spearman":
        r = statkit.spearman_rho(_read_numbers(args.a), _read_numbers(args.b))
        print(f"rho={r.statistic:.4f}\tp={r.p_value:.6g}")
    elif op == "kappa":
        m = _read_matrix(args.file)
        print(f"{statkit.weighted_kappa_quadratic([r[0] for r in m], [r[1] for r in m]):.4f}")
    elif op == "alpha":
        m = _read_matrix(args.file)
        print(f"{statkit.krippendorff_alpha(list(map(list, zip(*m))), args.metric):.4f}")
    elif op == "icc":
        print(f"{statkit.icc_2_1(_read_matrix(args.file)):.4f}")
    return EXIT_OK


def cmd_export(args) -> int:
    g = load_graph_export(args.graph)
    text = export_import_script(g)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, pair=True):
        if pair:
            sp.add_argument("--pair", required=True, help="bundled pair id or path to a pair YAML")
        sp.add_argument("--offline", action="store_true", help="use fixture providers and indexes only")

    sp = sub.add_parser("build", help="run Phase I and write the graph export")
    common(sp)
    sp.add_argument("--corpus")
    sp.add_argument("--tier1")
    sp.add_argument("--fixtures", help="provider fixture JSONL (offline)")
    sp.add_argument("--record", help="append live provider replies to this fixture file")
    sp.add_argument("--out", default="kg_out")
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("query", help="run one retrieval query")
    common(sp)
    sp.add_argument("--graph", help="graph export directory (default: build from fixtures)")
    sp.add_argument("--kind", choices=("comparative", "temporal", "treatment", "neighbourhood"), required=True)
    sp.add_argument("--disease")
    sp.add_argument("--entity")
    sp.add_argument("--limit", type=int, default=30)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("synthesize", help="generate one arm's output for one scenario")
    common(sp)
    sp.add_argument("--arm", choices=ARMS, required=True)
    sp.add_argument("--scenario-id", required=True)
    sp.add_argument("--scenarios")
    sp.add_argument("--graph")
    sp.add_argument("--strict-privacy", action="store_true")
    sp.add_argument("--out", default="outputs")
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("audit", help="verify the PMIDs cited in an output file")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--index", help="PubMed fixture index JSON")
    sp.add_argument("--title-only", action="store_true")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("metrics", help="per-scenario FC / ETS / PG table")
    sp.add_argument("--outputs")
    sp.add_argument("--scenarios")
    sp.add_argument("--published", action="store_true", help="use the shipped published values")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("judge", help="LLM-judge round or aggregation of score files")
    common(sp, pair=False)
    sp.add_argument("--pair")
    sp.add_argument("--round", choices=("v1", "v2"), required=True)
    sp.add_argument("--outputs")
    sp.add_argument("--scenarios")
    sp.add_argument("--scores", help="aggregate an existing score file instead of judging")
    sp.add_argument("--disease-pair", help="restrict the aggregated table to one pair")
    sp.add_argument("--index")
    sp.add_argument("--seed", type=int, default=statkit.DEFAULT_SEED)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_judge)

    sp = sub.add_parser("nli-audit", help="claim-support audit")
    common(sp, pair=False)
    sp.add_argument("--pair")
    sp.add_argument("--outputs")
    sp.add_argument("--corpus")
    sp.add_argument("--index")
    sp.add_argument("--verdicts", help="aggregate an existing verdict file")
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--seed", type=int, default=statkit.DEFAULT_SEED)
    sp.set_defaults(func=cmd_nli)

    sp = sub.add_parser("counterfactual", help="inject false evidence and classify outcomes")
    common(sp)
    sp.add_argument("--cases")
    sp.add_argument("--scenarios")
    sp.add_argument("--graph")
    sp.add_argument("--strict-privacy", action="store_true")
    sp.set_defaults(func=cmd_counterfactual)

    sp = sub.add_parser("stats", help="statistics on file inputs")
    ops = sp.add_subparsers(dest="op", required=True)
    o = ops.add_parser("wilson")
    o.add_argument("successes", type=int)
    o.add_argument("n", type=int)
    o.add_argument("--level", type=float, default=0.95)
    o = ops.add_parser("cohens-d", help="mean_a sd_a n_a mean_b sd_b n_b")
    o.add_argument("summary", type=float, nargs=6)
    o = ops.add_parser("bootstrap")
    o.add_argument("file")
    o.add_argument("--column")
    o.add_argument("--resamples", type=int, default=10_000)
    o.add_argument("--seed", type=int, default=statkit.DEFAULT_SEED)
    o.add_argument("--level", type=float, default=0.95)
    for name in ("mwu", "spearman"):
        o = ops.add_parser(name)
        o.add_argument("a")
        o.add_argument("b")
    o = ops.add_parser("bh")
    o.add_argument("file")
    o = ops.add_parser("kappa", help="CSV with two rating columns")
    o.add_argument("file")
    o = ops.add_parser("alpha", help="CSV units x raters, blank = missing")
    o.add_argument("file")
    o.add_argument("--metric", default="ordinal", choices=("ordinal", "interval", "nominal"))
    o = ops.add_parser("icc", help="CSV items x raters")
    o.add_argument("file")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("export", help="write the Cypher import script for a graph export")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PrivacyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRIVACY
    except (ConfigError, StageError, ProviderError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

import json

import pytest

from provkg.cli import main
from provkg.consensus import Tier
from provkg.counterfactual import MarkerCollision, inject_counterfactual, load_cases
from provkg.extraction import FixtureProvider, load_corpus
from provkg.fixtures import EchoSynthesisProvider
from provkg.pipeline import StageError, run_phase1, run_phase2
from provkg.synthesis import PrivacyError, load_scenarios


def test_phase1_report(fixture_build):
    r = fixture_build.report
    assert (r["abstracts"], r["screen_passed"]) == (20, 16)
    assert r["dropped_quotes"] == 2 and r["out_of_schema"] == 1
    assert r["rules_fired"] == {"2": 1}
    assert (r["absorbed"], r["discarded_conflicts"]) == (2, 1)
    assert r["graph"] == fixture_build.graph.stats()
    assert sum(r["tiers"].values()) == r["graph"]["edges"]


def test_phase1_provenance_complete(fixture_build):
    for e in fixture_build.graph.edges.values():
        assert e.pmid_list or e.is_protected
        assert e.quality_tier is not None
    gold = [e for e in fixture_build.graph.edges.values() if e.quality_tier is Tier.GOLD]
    assert all(e.is_protected for e in gold)


def test_inverted_triplet_corrected_and_merged(fixture_build):
    (e,) = [e for e in fixture_build.graph.edges.values() if e.object.surface.lower() == "ataluren"]
    assert e.subject.type_label == "Disease" and e.quality_tier is Tier.SILVER
    assert e.source_models == {"fixture-a", "fixture-b"}


def test_phase1_empty_corpus_is_stage_error(dmd):
    with pytest.raises(StageError) as ei:
        run_phase1(dmd, [], [FixtureProvider("x")])
    assert ei.value.stage == "screening"


def test_phase2_strict_privacy(fixture_build, dmd, fixtures_dir):
    remote = EchoSynthesisProvider()
    remote.endpoint = "https://api.example.com/v1"

    scen = load_scenarios(fixtures_dir / "scenarios.json")[0]
    with pytest.raises(PrivacyError):
        run_phase2(fixture_build.graph, dmd, scen, "heg_tkg", remote, strict_privacy=True)


def test_marker_collision(fixture_build, dmd, fixtures_dir):
    cf = load_cases(fixtures_dir / "counterfactual_cases.json")[0]
    corpus = {a.pmid for a in load_corpus(fixtures_dir / "corpus_dmd_bmd.jsonl")}
    with pytest.raises(MarkerCollision):
        inject_counterfactual([], cf, corpus | {cf.marker_pmid})


# --------------------------------------------------------------------------- CLI

def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_build_and_query(tmp_path, capsys):
    code, _, _ = run(capsys, "build", "--pair", "dmd_bmd", "--offline", "--out", str(tmp_path))
    assert code == 0
    assert {p.name for p in tmp_path.iterdir()} >= {"nodes.jsonl", "edges.jsonl", "import.cypher", "report.json"}
    code, out, _ = run(capsys, "query", "--pair", "dmd_bmd", "--offline", "--graph", str(tmp_path),
                       "--kind", "temporal", "--disease", "DMD", "--json")
    assert code == 0
    idx = [r["time_index_months"] for r in json.loads(out)]
    assert idx == sorted(idx) and idx


def test_cli_privacy_exit_code(monkeypatch, capsys):
    monkeypatch.setenv("PROVKG_SYNTH_ENDPOINT", "https://api.example.com/v1/chat/completions")
    monkeypatch.setenv("PROVKG_SYNTH_MODEL", "m")
    monkeypatch.delenv("PROVKG_OFFLINE", raising=False)
    code, _, err = run(capsys, "synthesize", "--pair", "dmd_bmd", "--arm", "vanilla",
                       "--scenario-id", "dmd_bmd_01", "--strict-privacy")
    assert code == 3 and "synthesis" in err


def test_cli_stats(capsys):
    assert run(capsys, "stats", "wilson", "12", "15")[1].split() == ["0.5481", "0.9295"]
    assert run(capsys, "stats", "cohens-d", "2.50", "0.55", "6", "3.80", "0.45", "5")[1].strip() == "2.5591"


def test_cli_unknown_pair(capsys):
    code, _, err = run(capsys, "query", "--pair", "nope_pair", "--offline", "--kind", "treatment",
                       "--disease", "X")
    assert code == 1 and "error" in err


def test_cli_usage_error(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["query", "--pair", "dmd_bmd"])
    assert ei.value.code == 2
    capsys.readouterr()

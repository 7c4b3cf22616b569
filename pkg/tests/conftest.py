from pathlib import Path

import pytest

from provkg import data_path
from provkg.pairconfig import bundled_config


@pytest.fixture(scope="session")
def dmd():
    return bundled_config("dmd_bmd")


@pytest.fixture(scope="session")
def mg():
    return bundled_config("mg_lems")


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return data_path("fixtures")


@pytest.fixture(scope="session")
def fixture_build(dmd, fixtures_dir):
    """Phase I over the bundled 20-abstract corpus with the two recorded providers."""
    from provkg.consensus import load_tier1
    from provkg.extraction import FixtureProvider, load_corpus
    from provkg.pipeline import run_phase1

    providers = [FixtureProvider.load(p, fixtures_dir / "providers_dmd_bmd.jsonl")
                 for p in ("fixture-a", "fixture-b")]
    corpus = load_corpus(fixtures_dir / "corpus_dmd_bmd.jsonl")
    return run_phase1(dmd, corpus, providers, load_tier1(fixtures_dir / "tier1_dmd_bmd.json", dmd))


ACCEPTANCE: dict[int, str] = {}
N_CRITERIA = 12


@pytest.fixture
def criterion():
    """Record one acceptance line; the assertion follows the recorded verdict."""
    def record(n: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[n])
        if not ok:
            pytest.fail(detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(ACCEPTANCE.get(n, f"criterion {n:>2}: FAIL  not evaluated"))

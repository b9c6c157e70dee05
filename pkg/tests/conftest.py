import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kgaura.graph import KnowledgeGraph, Triple  # noqa: E402
from kgaura.kge import Hyperparams, train  # noqa: E402
from kgaura.seal import OwnerKey  # noqa: E402
from kgaura.synth import synthetic_kg  # noqa: E402


def T(h, r, t):
    return Triple(h, r, t)


@pytest.fixture
def movie_graph() -> KnowledgeGraph:
    return KnowledgeGraph(
        [
            T("Inception", "directed_by", "Nolan"),
            T("Inception", "has_genre", "SciFi"),
            T("Interstellar", "directed_by", "Nolan"),
            T("Interstellar", "has_genre", "SciFi"),
            T("Nolan", "born_in", "London"),
            T("Dunkirk", "directed_by", "Nolan"),
            T("Dunkirk", "has_genre", "War"),
            T("Heat", "directed_by", "Mann"),
            T("Mann", "born_in", "Chicago"),
        ]
    )


@pytest.fixture(scope="session")
def small_kg() -> KnowledgeGraph:
    return synthetic_kg(n_entities=300, n_triples=900, seed=3)


@pytest.fixture(scope="session")
def small_model(small_kg):
    return train(small_kg, Hyperparams(dim=32, epochs=60, seed=1))


@pytest.fixture(scope="session")
def owner_key() -> OwnerKey:
    return OwnerKey(bytes(range(32)))


@pytest.fixture
def key_env(monkeypatch, owner_key):
    monkeypatch.setenv("KG_AURA_KEY", owner_key.hex())
    return owner_key


@pytest.fixture(autouse=True)
def _no_ambient_key(monkeypatch):
    if "KG_AURA_KEY" in os.environ:
        monkeypatch.delenv("KG_AURA_KEY")


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    lines = sorted(getattr(test_acceptance, "ACCEPTANCE", []), key=lambda s: int(s.split("criterion")[1].split(":")[0]))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

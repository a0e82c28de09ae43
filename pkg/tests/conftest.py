import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gkgrec import kernels
from gkgrec.embed import HashEncoder, build_kg_indexes, kg_corpus
from gkgrec.kg import KnowledgeGraph
from gkgrec.synth import SynthConfig, generate

WORDS = ("red blue green night river stone glass iron silver storm quiet city lake "
         "winter summer ghost king queen road song fire wolf paper star").split()
RELATIONS = ["directed by", "genre", "starred", "sequel", "made by", "related title"]

# the backend fixture patches module attributes once per test, which is
# safe to share across generated examples
settings.register_profile("gkgrec", deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("gkgrec")

BACKENDS = sorted(kernels.BACKENDS)


def random_kg(rng, n_entities=None, n_triples=None, n_relations=None) -> KnowledgeGraph:
    """Random multigraph with pseudo-word entity texts; loops and repeats allowed."""
    n = n_entities or int(rng.integers(2, 60))
    m = n_triples if n_triples is not None else int(rng.integers(0, 3 * n))
    r = n_relations or int(rng.integers(1, len(RELATIONS) + 1))
    ents = [" ".join(rng.choice(WORDS, size=int(rng.integers(1, 4)))) + f" {i}" for i in range(n)]
    return KnowledgeGraph(ents, RELATIONS[:r], rng.integers(0, n, m), rng.integers(0, r, m),
                          rng.integers(0, n, m))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route the module-level kernel entry points through one backend."""
    impl = kernels.get(request.param)
    for name in ("k_hop", "ppr", "kruskal", "gae"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture(scope="session")
def tiny_world():
    cfg = SynthConfig(seed=3, n_train=240, n_eval=80, catalog_items=40, related_pool=60,
                      star_fanout=12, genres=5)
    return generate(cfg)


@pytest.fixture(scope="session")
def tiny_encoder(tiny_world):
    return HashEncoder(64, 0, sublinear=True).fit_idf(kg_corpus(tiny_world.kg))


@pytest.fixture(scope="session")
def tiny_indexes(tiny_world, tiny_encoder):
    return build_kg_indexes(tiny_world.kg, tiny_encoder)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])

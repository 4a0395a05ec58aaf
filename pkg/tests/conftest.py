import pytest

from groupscope import fixtures
from groupscope.corpus import Corpus, Group, Post
from groupscope.embedding import EmbedderConfig, HashingEmbedder
from groupscope.engine import Engine


@pytest.fixture(scope="session")
def synonym_embedder():
    return HashingEmbedder(EmbedderConfig(synonym_table=fixtures.synonym_table()))


@pytest.fixture
def tiny_corpus():
    groups = [Group("g1", "bakers"), Group("g2", "coffee")]
    posts = [
        Post("p1", "g1", "u1", "Fresh cupcakes with sprinkles", 1_700_000_000, clicks=3),
        Post("p2", "g1", "u2", "Sourdough bread and butter bread", 1_700_000_100),
        Post("p3", "g1", "u1", "Cupcake frosting tips for the weekend", 1_700_000_200),
        Post("p4", "g2", "u3", "A cappuccino before work", 1_700_000_300),
    ]
    return Corpus(groups, posts)


@pytest.fixture(scope="session")
def synonym_fx():
    return fixtures.synonym_fixture()


@pytest.fixture(scope="session")
def mixed_fx():
    return fixtures.mixed_fixture()


@pytest.fixture(scope="session")
def mixed_engine(mixed_fx, synonym_embedder):
    return Engine.from_corpus(mixed_fx.corpus, embedder=synonym_embedder)


@pytest.fixture(scope="session")
def synonym_engine(synonym_fx, synonym_embedder):
    return Engine.from_corpus(synonym_fx.corpus, embedder=synonym_embedder)


# -- acceptance summary: one PASS/FAIL line per criterion -----------------------

_acceptance: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _acceptance:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  {detail}".rstrip())

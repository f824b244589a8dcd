import pytest

from deepsearch_eval.chainbuilder import build_question
from deepsearch_eval.corpus import ingest_corpus
from deepsearch_eval.mocks import ChainFollowerOracle


def _page(pid, title, aliases, sentences):
    """Build a page dict; sentences are lists of plain strings and (anchor, target) pairs."""
    body, links = "", []
    for part in sentences:
        if isinstance(part, tuple):
            anchor, target = part
            links.append({"target": target, "anchor": anchor, "start": len(body), "end": len(body) + len(anchor)})
            body += anchor
        else:
            body += part
    return {"id": pid, "title": title, "aliases": aliases, "text": body, "links": links}


def kane_pages():
    return [
        _page("kane", "Kane Cornes", ["Kane Cornes", "Kane"], [
            "Kane Cornes is an Australian rules footballer who played for Port Adelaide. ",
            "Kane Cornes has brother ", ("Chad Cornes", "chad"), ". ",
            "He later worked in media.",
        ]),
        _page("chad", "Chad Cornes", ["Chad Cornes", "Chad"], [
            "Chad Cornes is a former Australian rules footballer. ",
            "Chad Cornes has stepmother ", ("Nicole Cornes", "nicole"), ". ",
            "He won two premierships.",
        ]),
        _page("nicole", "Nicole Cornes", ["Nicole Cornes", "Nicole"], [
            "Nicole Cornes is an Australian media personality and former political candidate. ",
            "Nicole Cornes is married to ", ("Graham Cornes", "graham"), ".",
        ]),
        _page("graham", "Graham Cornes", ["Graham Cornes", "Graham"], [
            "Graham Cornes is a former footballer and radio presenter. He coached in the league.",
        ]),
    ]


KANE_SEED = {"v0": "Kane Cornes", "question": "Who is the father of Kane Cornes?", "vn": "Graham Cornes"}


@pytest.fixture
def kane_corpus():
    return kane_pages()


@pytest.fixture
def kane_store():
    store, _ = ingest_corpus(kane_pages())
    return store


@pytest.fixture
def kane_record(kane_store):
    outcome = build_question(kane_store, KANE_SEED, ChainFollowerOracle(kane_store))
    assert outcome.status == "accepted", outcome.reason
    return outcome.record


# acceptance results, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {desc}")

import sys
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).resolve().parent))

from oracles import CASES  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def cases_dir():
    return CASES


RING = ("x", "y", "z")

small_fraction = st.builds(Fraction, st.integers(-6, 6), st.integers(1, 4))
monomial = st.tuples(*[st.integers(0, 3)] * len(RING))


@st.composite
def polynomials(draw, ring=RING, max_terms=4):
    from pfkit.poly import Polynomial
    n = len(ring)
    terms = draw(st.dictionaries(st.tuples(*[st.integers(0, 3)] * n), small_fraction,
                                 max_size=max_terms))
    return Polynomial(ring, terms)


# one PASS/FAIL line per acceptance criterion, printed after the run
_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "status": "PASS", "details": []})
    if rep.failed:
        entry["status"] = "FAIL"
    elif rep.skipped and entry["status"] == "PASS":
        entry["status"] = "EXCLUDED"
        entry["details"].append(rep.longrepr[2].removeprefix("Skipped: "))
    entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        detail = "; ".join(e["details"])
        terminalreporter.write_line(f"criterion {n} {e['status']:8s} {e['title']}"
                                    + (f" [{detail}]" if detail else ""))

import pytest

from snapstack.data import generate_synthetic_corpus
from snapstack.tensor import Rng


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture(scope="session")
def corpus20(tmp_path_factory):
    """60 images, 30 patients."""
    out = tmp_path_factory.mktemp("syn20")
    return generate_synthetic_corpus(str(out), per_class=20, size=(64, 64), seed=0)


@pytest.fixture(scope="session")
def corpus40(tmp_path_factory):
    """120 images, 60 patients."""
    out = tmp_path_factory.mktemp("syn40")
    return generate_synthetic_corpus(str(out), per_class=40, size=(64, 64), seed=0)


# -- acceptance summary ------------------------------------------------------

_criteria = []


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _criteria.append((props["criterion"], report.outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _criteria:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))

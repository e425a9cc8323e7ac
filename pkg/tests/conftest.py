import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pinna_n1._backend import available_backends  # noqa: E402
from pinna_n1.synth import GenerativeSpec, synth_dataset  # noqa: E402

_ACCEPTANCE: dict = {}


@pytest.fixture(params=sorted(available_backends()))
def kernels(request):
    return available_backends()[request.param]


@pytest.fixture(scope="session")
def synth900():
    return synth_dataset(GenerativeSpec(), with_hrirs=False)


@pytest.fixture(scope="session")
def synth100_hrirs():
    return synth_dataset(GenerativeSpec(n_examples=100, seed=5))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("acceptance")
    if crit is None:
        return
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPTANCE[crit] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[crit]
        terminalreporter.write_line(f"criterion {crit:2d}: {status}  {detail}")

import json
import os

import pytest

_LOG = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LOG] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash[_LOG]


def pytest_terminal_summary(terminalreporter, config):
    entries = config.stash.get(_LOG, [])
    if not entries:
        return
    terminalreporter.section("acceptance criteria")
    for e in entries:
        terminalreporter.write_line(e["line"])


def pytest_sessionfinish(session):
    entries = session.config.stash.get(_LOG, [])
    if not entries:
        return
    path = os.environ.get("CYLEVO_ACCEPTANCE_JSON", os.path.join(str(session.config.rootpath), "acceptance_results.json"))
    with open(path, "w") as fh:
        json.dump(entries, fh, indent=2, default=float)
        fh.write("\n")

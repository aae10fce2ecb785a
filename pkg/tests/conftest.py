from __future__ import annotations

import pytest

from accjs.clock import ManualClock
from accjs.crypto import DAY, KeyRegistry, Role, keygen

T0 = 1_700_000_000

HELLO_HTML = b"""<html><head>
  <meta charset="utf-8" name="x-acc-js-link" content="http://www.helloworld.com/manifest.sxg">
</head><body>
  <script>console.log("Hello World")</script>
</body></html>
"""
HELLO_URL = "http://www.helloworld.com/"
HELLO_HASH = "sha256-AfuyZ600rkX8AD+xANHUProHJm+22Tp0bMnvPFk/vas="


@pytest.fixture
def registry():
    return KeyRegistry()


@pytest.fixture
def developer(registry):
    return keygen(Role.DEVELOPER, "helloworld.com", 90 * DAY, registry=registry, now=T0, seed=b"dev")


@pytest.fixture
def clock():
    return ManualClock(T0)


@pytest.fixture
def log_principal(registry):
    p, _ = keygen(Role.LOG, "log.test", 365 * DAY, registry=registry, now=T0, principal_id="log:test", seed=b"log")
    return p


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

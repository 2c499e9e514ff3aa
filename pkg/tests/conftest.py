import sys
from pathlib import Path

import pytest

from apar.ingest import parse_reviews

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "fixture_reviews.jsonl"

# hand-checked view of the fixture after dedup: (user, item) -> rating
FIXTURE_RATINGS = {
    ("u1", "v1"): 4, ("u1", "v2"): 5,
    ("u2", "v1"): 2, ("u2", "v3"): 3,
    ("u3", "v2"): 5,
    ("u4", "v4"): 1,
    ("u5", "v5"): 4,
    ("u6", "v3"): 2,
}


@pytest.fixture
def fixture_path():
    return FIXTURE


@pytest.fixture
def fixture_ds():
    return parse_reviews(FIXTURE, domain="instant-video")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from muxstream.model import ModelConfig, build_model  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def model():
    return build_model(ModelConfig())


@pytest.fixture(scope="session")
def small_model():
    return build_model(ModelConfig(d_model=8, n_layers=1, n_heads=2, vocab_size=16, seed=3))


# acceptance checks append their PASS/FAIL lines here
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

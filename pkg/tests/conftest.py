import numpy as np
import pytest

from mttppi import embedder


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_weights():
    return embedder.random_weights(hidden=4, embed_dim=3, seed=7)


@pytest.fixture
def write(tmp_path):
    """Write text to a file under tmp_path and return its path."""

    def _write(name, text):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return str(p)

    return _write


# one (number, title, passed, detail) per acceptance criterion
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, status, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{status}] {num:>2}. {title}: {detail}")

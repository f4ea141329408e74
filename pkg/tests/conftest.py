import numpy as np
import pytest

from refsam3d.gradsuite import small_model_config
from refsam3d.pipeline.model import build_model

_ACCEPTANCE: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training experiments")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])


@pytest.fixture
def criterion():
    """Record and print the outcome of one acceptance criterion, then assert it."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return small_model_config(8)


@pytest.fixture
def tiny_model(tiny_cfg):
    return build_model(tiny_cfg)

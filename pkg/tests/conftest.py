import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_images():
    from kdlic.data import synth_dataset

    return synth_dataset(12, 32, seed=5)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance():
    """record(n, name, ok, detail): one pass/fail line per acceptance criterion."""

    def record(n: int, name: str, status: str, detail: str = "") -> None:
        line = f"criterion {n} [PRIMARY] {name}: {status}" + (f"  ({detail})" if detail else "")
        _ACCEPTANCE[n] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])

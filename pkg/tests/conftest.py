import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pathgpa.graphs import build_dataset
from pathgpa.synthetic import SynthesisConfig, generate_dataset

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_archive():
    cfg = SynthesisConfig(n_subjects=12, n_genes=120, n_pathways=8, size_range=(4, 12), planted=(1, 4), seed=3)
    return generate_dataset(cfg)


@pytest.fixture(scope="session")
def small_dataset(small_archive):
    table, catalog, severity, _ = small_archive
    return build_dataset(table, catalog, severity)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    def record(n, ok, detail=""):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)

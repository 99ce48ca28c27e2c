import random

import pytest

from codedcache.model import UserPopulation, build_catalog, zipf_popularity

MIXED_POPULARITY = [0.4643, 0.2021, 0.1242, 0.088, 0.0673, 0.0541]
MIXED_SIZES_KBIT = [0.1667, 0.3333, 0.5, 0.8333, 1, 0.6667]


def rel_err(a, b):
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def random_catalog(rng: random.Random, n_files: int, size_range=(10.0, 1000.0)):
    p = [rng.uniform(0.05, 1.0) for _ in range(n_files)]
    total = sum(p)
    p = [v / total for v in p]
    F = [rng.uniform(*size_range) for _ in range(n_files)]
    return build_catalog(p, F)[0]


@pytest.fixture
def mixed6():
    return build_catalog(MIXED_POPULARITY, [1000 * f for f in MIXED_SIZES_KBIT])[0]


@pytest.fixture
def zipf6():
    return build_catalog(zipf_popularity(6, 0.56), [1000.0] * 6)[0]


@pytest.fixture
def four_users():
    return UserPopulation.uniform(4, 0.5)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

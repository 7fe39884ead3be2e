import math

import numpy as np
import pytest

from qfusion.qmath import Observable

ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}" + (f" :: {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_observable(rng: np.random.Generator) -> Observable:
    return Observable.from_angles(rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)

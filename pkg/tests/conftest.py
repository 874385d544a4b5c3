import dataclasses

import numpy as np
import pytest

from aquaharvest.calibrate import euler_grid
from aquaharvest.config import Config


@pytest.fixture
def cfg():
    return Config()


@pytest.fixture
def default_grid():
    return euler_grid(3.0, 72)


def small_config(n_paths=256, n_eval=512, n_mean=256, seed=7, n_exercise=72) -> Config:
    base = Config()
    glob = dataclasses.replace(
        base.globals, n_paths=n_paths, n_eval_paths=n_eval, n_mean_paths=n_mean, seed=seed, n_exercise=n_exercise
    )
    return base.replace(globals=glob)


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.abs(b))


# acceptance criteria register their verdicts here; printed after the run
ACCEPTANCE: list[tuple[int, bool, str]] = []


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    ACCEPTANCE.append((number, bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")

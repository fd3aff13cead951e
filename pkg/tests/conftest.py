import numpy as np
import pytest

from fedpoison.attacks import set_checks
from fedpoison.config import config_from_dict


@pytest.fixture(autouse=True, scope="session")
def _postcondition_checks():
    # every crafting op asserts its own postconditions during the test run
    set_checks(True)
    yield
    set_checks(False)


def small_config(**overrides):
    """Tiny blob federation that runs a round in milliseconds."""
    base = {
        "seed": 3,
        "preset": "ideal",
        "dataset": {"kind": "blobs", "num_classes": 3, "dim": 4, "n_per_class": 40, "spread": 1.0},
        "model": {"hidden": [6]},
        "fl": {"num_clients": 8, "join_ratio": 0.5, "rounds": 4},
        "train": {"batch_size": 8, "learning_rate": 0.05, "local_epochs": 2},
        "partition": {"min_shard": 5},
    }
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k] = {**base[k], **v}
        else:
            base[k] = v
    return config_from_dict(base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: filled by test_acceptance, printed after the run;
# parametrized criteria pass only if every case passes
ACCEPTANCE = {}


def record_criterion(number: int, passed: bool, detail: str) -> str:
    ok, details = ACCEPTANCE.get(number, (True, []))
    ACCEPTANCE[number] = (ok and passed, details + [detail])
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            ok, details = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {' | '.join(details)}")

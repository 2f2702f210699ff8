import copy

import numpy as np
import pytest

from aiitl.config import default_config
from aiitl.nn import MLPClassifier


def small_config(mechanism="maha", seed=0, steps=8):
    """Shortened default benchmark for fast simulation tests."""
    cfg = default_config()
    cfg.mechanism = mechanism
    cfg.schedule.steps = steps
    cfg.schedule.introduction = {"known": 1, "u1": 2, "u2": 3, "u3": 4}
    cfg.schedule.counts = {"known": 40, "u1": 40, "u2": 40, "u3": 40}
    cfg.schedule.final_test = {"known": 60, "u1": 40, "u2": 40, "u3": 40}
    cfg.training.epochs = 30
    for name in ("dataset", "training", "schedule", "split"):
        setattr(cfg.seeds, name, seed)
    return cfg


@pytest.fixture
def small_cfg():
    return small_config()


def random_net(rng, dims, activation="relu"):
    coefs = [rng.normal(0, 1, (a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [rng.normal(0, 0.5, b) for b in dims[1:]]
    return MLPClassifier.from_weights(coefs, biases, activation=activation)


@pytest.fixture
def blobs():
    rng = np.random.default_rng(7)
    X = np.vstack([rng.normal((2, 2), 0.3, (100, 2)), rng.normal((-2, -2), 0.3, (100, 2))])
    y = np.repeat([0, 1], 100)
    return X, y


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])

import numpy as np
import pytest

from prumux.encoder import init_model
from prumux.mux import make_kit


@pytest.fixture
def tiny_model():
    return init_model(seed=11, d=8, n_heads=2, d_ff=12, n_layers=2, n_classes=3, vocab=10)


@pytest.fixture
def tiny_kit():
    return make_kit(2, 8, seed=5)


def rand_inputs(seed, shape):
    return np.random.default_rng(seed).normal(size=shape)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])

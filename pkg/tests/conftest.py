import numpy as np
import pytest
from hypothesis import settings

from scansim.numerics import RngStream

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_complex(g, m, n):
    return g.standard_normal((m, n)) + 1j * g.standard_normal((m, n))


@pytest.fixture
def stream():
    return RngStream(2024)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance")
        for n in sorted(results):
            terminalreporter.write_line(results[n])

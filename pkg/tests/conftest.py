import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def cplx(radius: float = 2.0):
    """Hypothesis strategy for complex numbers in a disc."""
    return st.tuples(
        st.floats(-radius, radius, allow_nan=False), st.floats(-radius, radius, allow_nan=False)
    ).map(lambda t: complex(*t))


seeds = st.integers(0, 2**31 - 1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_point(model, rng, scale: float = 1.0):
    """Random point in a random chart of ``model``."""
    ch = int(rng.integers(model.chart_count))
    z = scale * (rng.standard_normal(model.dim) + 1j * rng.standard_normal(model.dim))
    return model.point(ch, tuple(z))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])

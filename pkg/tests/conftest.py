import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crvae.networks import ModelBundle, NetworkSpec

settings.register_profile("crvae", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("crvae")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_bundle():
    return ModelBundle.create(NetworkSpec.tiny("crvae"), seed=0)


def tiny_images(spec, n, seed=0):
    return np.tanh(np.random.default_rng(seed).standard_normal((n, *spec.image_shape))).astype(np.float32)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

import numpy as np
import pytest

from prgdistill.bundle import synth_bundle


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_bundle():
    """Tiny deterministic bundle shared by read-only tests."""
    return synth_bundle(c=4, p=2, d=8, m=12, n_per_class=20, noise=0.3, seed=11)


@pytest.fixture()
def tiny_bundle():
    """Fresh per-test bundle for tests that mutate state (label counter)."""
    return synth_bundle(c=3, p=2, d=8, m=10, n_per_class=20, noise=0.3, seed=5)
